//! Synthetic fingertip tactile sensing.
//!
//! A three-finger hand grasps a thin flat object: two fingers press the top
//! face and an opposing thumb presses the bottom face. Each fingertip carries
//! an 11x9 taxel grid; a taxel reads the normal force of a point spring
//! penetrating the object volume, quantized to 0..255.
//!
//! Two parameterizations of the same sensor exist: the nominal one (unit
//! gains, no noise, no mount offset) and a perturbed "real-analogue" one
//! produced by [`perturb_params`], which stands in for the discrepancies of a
//! physical sensor.

use crate::error::{Error, Result};
use crate::io::fnv1a64;
use crate::math::{Pose6, Quat, Transform, Vec3};
use crate::rng::{derive_seed_indexed, DetRng};

pub const SENSOR_ROWS: usize = 11;
pub const SENSOR_COLS: usize = 9;
pub const TAXEL_COUNT: usize = SENSOR_ROWS * SENSOR_COLS;

/// Physical and electrical parameters of one fingertip sensor.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorParams {
    pub rows: usize,
    pub cols: usize,
    /// Taxel pitch in meters.
    pub taxel_spacing: f64,
    /// Newtons per meter of penetration.
    pub stiffness: f64,
    /// Force at which the reading saturates at 255.
    pub max_force: f64,
    /// Per-taxel multiplicative gain, row-major `rows * cols`.
    pub gain_map: Vec<f64>,
    /// Additive reading noise, in quantized units.
    pub noise_std: f64,
    /// In-plane offset of the taxel grid, meters.
    pub mount_offset: [f64; 2],
}

impl SensorParams {
    /// Nominal ("sim" domain) parameterization. Stiffness and saturation are
    /// chosen so a 0.5 mm penetration reads near 128.
    pub fn nominal() -> Self {
        SensorParams {
            rows: SENSOR_ROWS,
            cols: SENSOR_COLS,
            taxel_spacing: 0.0011,
            stiffness: 1000.0,
            max_force: 1.0,
            gain_map: vec![1.0; TAXEL_COUNT],
            noise_std: 0.0,
            mount_offset: [0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows * self.cols != TAXEL_COUNT {
            return Err(Error::InvalidParams(format!(
                "sensor grid must be {SENSOR_ROWS}x{SENSOR_COLS} ({} taxels), got {}x{}",
                TAXEL_COUNT, self.rows, self.cols
            )));
        }
        if !(self.taxel_spacing > 0.0) {
            return Err(Error::InvalidParams("taxel_spacing must be > 0".into()));
        }
        if !(self.stiffness > 0.0) {
            return Err(Error::InvalidParams("stiffness must be > 0".into()));
        }
        if !(self.max_force > 0.0) {
            return Err(Error::InvalidParams("max_force must be > 0".into()));
        }
        if self.gain_map.len() != self.rows * self.cols {
            return Err(Error::InvalidParams("gain_map length must be rows*cols".into()));
        }
        if self.noise_std < 0.0 {
            return Err(Error::InvalidParams("noise_std must be >= 0".into()));
        }
        Ok(())
    }

    /// Content fingerprint, embedded in dataset headers.
    pub fn content_hash(&self) -> u64 {
        let mut bytes = Vec::with_capacity(32 + 8 * self.gain_map.len());
        bytes.extend_from_slice(&(self.rows as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.cols as u64).to_le_bytes());
        for v in [self.taxel_spacing, self.stiffness, self.max_force, self.noise_std] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.mount_offset {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for g in &self.gain_map {
            bytes.extend_from_slice(&g.to_le_bytes());
        }
        fnv1a64(&bytes)
    }

    /// In-plane position of taxel `(row, col)` in the sensor frame.
    pub fn taxel_pos(&self, row: usize, col: usize) -> Vec3 {
        Vec3::new(
            (col as f64 - (self.cols as f64 - 1.0) / 2.0) * self.taxel_spacing
                + self.mount_offset[0],
            (row as f64 - (self.rows as f64 - 1.0) / 2.0) * self.taxel_spacing
                + self.mount_offset[1],
            0.0,
        )
    }
}

/// "Real-analogue" parameterization: per-taxel gain spread, scaled stiffness,
/// an in-plane mount offset and additive reading noise, all U-distributed with
/// half-width `severity`. `severity = 0` reproduces the nominal params exactly.
pub fn perturb_params(nominal: &SensorParams, severity: f64, rng_seed: u64) -> SensorParams {
    let mut rng = DetRng::new(rng_seed);
    let mut out = nominal.clone();
    for g in out.gain_map.iter_mut() {
        *g = rng.uniform(1.0 - severity, 1.0 + severity);
    }
    out.stiffness = nominal.stiffness * rng.uniform(1.0 - severity, 1.0 + severity);
    let off = severity * nominal.taxel_spacing;
    out.mount_offset = [rng.uniform(-off, off), rng.uniform(-off, off)];
    out.noise_std = severity * 10.0;
    out
}

/// One fingertip tactile image: quantized normal-force readings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TactileImage {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<u8>,
}

impl TactileImage {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        TactileImage { rows, cols, values: vec![0; rows * cols] }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.values[row * self.cols + col]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0)
    }

    /// Binary PGM (P5) dump, one byte per taxel.
    pub fn write_pgm(&self, path: &std::path::Path, config_hash: u64) -> Result<()> {
        let mut bytes = Vec::with_capacity(64 + self.values.len());
        bytes.extend_from_slice(
            format!("P5\n# config_hash={config_hash:016x}\n{} {}\n255\n", self.cols, self.rows)
                .as_bytes(),
        );
        bytes.extend_from_slice(&self.values);
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(path, bytes)?;
        Ok(())
    }
}

/// Planar boundary of a flat object, in the object's own x-y plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Disc { radius: f64 },
    RoundedRect { half_x: f64, half_y: f64, corner_radius: f64 },
    Bar { half_length: f64, half_width: f64 },
}

impl Shape {
    /// Deterministic in-plane membership test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Disc { radius } => x * x + y * y <= radius * radius,
            Shape::RoundedRect { half_x, half_y, corner_radius } => {
                if x.abs() > half_x || y.abs() > half_y {
                    return false;
                }
                let dx = x.abs() - (half_x - corner_radius);
                let dy = y.abs() - (half_y - corner_radius);
                if dx > 0.0 && dy > 0.0 {
                    dx * dx + dy * dy <= corner_radius * corner_radius
                } else {
                    true
                }
            }
            // Long axis along y, width along x.
            Shape::Bar { half_length, half_width } => x.abs() <= half_width && y.abs() <= half_length,
        }
    }

    /// In-plane distance from an interior point to the boundary; zero on or
    /// outside it.
    pub fn boundary_distance(&self, x: f64, y: f64) -> f64 {
        match *self {
            Shape::Disc { radius } => (radius - (x * x + y * y).sqrt()).max(0.0),
            Shape::RoundedRect { half_x, half_y, corner_radius } => {
                let qx = x.abs() - (half_x - corner_radius);
                let qy = y.abs() - (half_y - corner_radius);
                let outside = (qx.max(0.0).powi(2) + qy.max(0.0).powi(2)).sqrt();
                let inside = qx.max(qy).min(0.0);
                (-(outside + inside - corner_radius)).max(0.0)
            }
            Shape::Bar { half_length, half_width } => {
                (half_width - x.abs()).min(half_length - y.abs()).max(0.0)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Disc { radius } => radius > 0.0,
            Shape::RoundedRect { half_x, half_y, corner_radius } => {
                half_x > 0.0 && half_y > 0.0 && corner_radius > 0.0
                    && corner_radius <= half_x.min(half_y)
            }
            Shape::Bar { half_length, half_width } => half_length > 0.0 && half_width > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("degenerate shape {self:?}")))
        }
    }
}

/// A rigid flat object: extruded planar boundary with a pose in the world.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectModel {
    pub shape: Shape,
    pub thickness: f64,
    pub pose: Transform,
}

impl ObjectModel {
    pub fn new(shape: Shape, thickness: f64) -> Self {
        ObjectModel { shape, thickness, pose: Transform::IDENTITY }
    }

    /// The training object: a 120 mm disc, 4 mm thick, centered at the
    /// origin; its rim stays inside every fingertip pad across the sampled
    /// pose range.
    pub fn default_disc() -> Self {
        ObjectModel::new(Shape::Disc { radius: 0.060 }, 0.004)
    }

    /// Unseen-shape variant with straight-ish sides and curved corners.
    pub fn default_rounded_rect() -> Self {
        ObjectModel::new(
            Shape::RoundedRect { half_x: 0.060, half_y: 0.060, corner_radius: 0.024 },
            0.005,
        )
    }

    /// Unseen-shape variant with straight long edges (long axis along y).
    pub fn default_bar() -> Self {
        ObjectModel::new(Shape::Bar { half_length: 0.085, half_width: 0.057 }, 0.003)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if !(self.thickness > 0.0) {
            return Err(Error::InvalidParams("thickness must be > 0".into()));
        }
        Ok(())
    }

    pub fn probe(&self) -> ContactProbe {
        ContactProbe {
            shape: self.shape,
            half_thickness: self.thickness / 2.0,
            world_to_object: self.pose.inverse(),
        }
    }
}

/// Cached world-to-object transform for fast point penetration queries.
#[derive(Clone, Debug)]
pub struct ContactProbe {
    shape: Shape,
    half_thickness: f64,
    world_to_object: Transform,
}

impl ContactProbe {
    /// Penetration depth of a world-space point into the object volume: the
    /// interior distance to the nearest surface, i.e. the smaller of the
    /// distance past the nearer face and the in-plane distance to the
    /// boundary. Zero outside the volume.
    pub fn penetration(&self, p_world: Vec3) -> f64 {
        let q = self.world_to_object.apply(p_world);
        if !self.shape.contains(q.x, q.y) {
            return 0.0;
        }
        let axial = (self.half_thickness - q.z.abs()).max(0.0);
        axial.min(self.shape.boundary_distance(q.x, q.y))
    }
}

/// 6-DoF wrist pose: position plus unit quaternion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WristPose {
    pub position: Vec3,
    pub orientation: Quat,
}

impl WristPose {
    pub fn canonical() -> Self {
        WristPose { position: Vec3::ZERO, orientation: Quat::IDENTITY }
    }

    pub fn from_pose6(p: &Pose6) -> Self {
        WristPose { position: p.position(), orientation: p.orientation() }
    }

    pub fn to_pose6(&self) -> Pose6 {
        let (roll, pitch, yaw) = self.orientation.to_euler();
        Pose6([self.position.x, self.position.y, self.position.z, roll, pitch, yaw])
    }

    pub fn transform(&self) -> Transform {
        Transform::new(self.orientation, self.position)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.position.is_finite() || !self.orientation.is_finite() {
            return Err(Error::NonFinite("wrist pose".into()));
        }
        if (self.orientation.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParams("wrist quaternion not unit norm".into()));
        }
        Ok(())
    }
}

/// One finger of the parametric hand layout, expressed in the wrist frame.
///
/// The finger is a parallelogram hinge: the knuckle joint swings the pad
/// center along a circular arc in the y-z plane while a coupled distal joint
/// (always the negated knuckle angle) keeps the pad orientation fixed
/// relative to the wrist.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FingerLayout {
    pub knuckle: Vec3,
    pub phalanx_len: f64,
    /// Arc angle at joint value zero (fully open).
    pub alpha_open: f64,
    /// +1: pad rises with closure (thumb under the object); -1: pad descends.
    pub vertical_sign: f64,
    /// +1: the finger reaches from +y toward the object; -1: from -y.
    pub arc_sign: f64,
    /// Pad orientation in the wrist frame (sensor z+ is the pressing direction).
    pub pad_rot: Quat,
}

impl FingerLayout {
    /// Pad center in the wrist frame at joint value `theta`.
    pub fn pad_center(&self, theta: f64) -> Vec3 {
        let alpha = self.alpha_open - theta;
        self.knuckle
            + Vec3::new(
                0.0,
                -self.arc_sign * self.phalanx_len * alpha.sin(),
                self.vertical_sign * self.phalanx_len * alpha.cos(),
            )
    }

    /// Fingertip (pad) frame in the wrist frame at joint value `theta`.
    pub fn pad_frame(&self, theta: f64) -> Transform {
        Transform::new(self.pad_rot, self.pad_center(theta))
    }
}

/// Fixed three-finger layout plus closure parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct HandConfig {
    pub fingers: [FingerLayout; 3],
    /// Closure stops when the deepest pad point reaches this penetration.
    pub target_depth: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    /// Pad geometry used by closure (the nominal taxel grid).
    pub pad_rows: usize,
    pub pad_cols: usize,
    pub pad_spacing: f64,
}

impl Default for HandConfig {
    fn default() -> Self {
        // Pads straddle the rim of the default disc sideways (x = +-55.6 mm
        // vs a 60 mm radius, outer pad edge on the rim) so the boundary stays
        // inside every pad across the whole sampled range. The two top
        // fingers reach in from opposite sides and the thumb presses the
        // bottom face: their closure arcs shift the contact patterns in
        // opposing directions as the wrist height changes, which is what
        // lets the images separate y from z.
        let x_flip = Quat::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), std::f64::consts::PI);
        HandConfig {
            fingers: [
                FingerLayout {
                    knuckle: Vec3::new(0.0556, 0.075, 0.035),
                    phalanx_len: 0.080,
                    alpha_open: 1.45,
                    vertical_sign: -1.0,
                    arc_sign: 1.0,
                    pad_rot: x_flip,
                },
                FingerLayout {
                    knuckle: Vec3::new(-0.0556, -0.075, 0.035),
                    phalanx_len: 0.080,
                    alpha_open: 1.45,
                    vertical_sign: -1.0,
                    arc_sign: -1.0,
                    pad_rot: x_flip,
                },
                FingerLayout {
                    knuckle: Vec3::new(0.0556, 0.075, -0.035),
                    phalanx_len: 0.080,
                    alpha_open: 1.45,
                    vertical_sign: 1.0,
                    arc_sign: 1.0,
                    pad_rot: Quat::IDENTITY,
                },
            ],
            target_depth: 0.0012,
            theta_min: 0.0,
            theta_max: 1.35,
            pad_rows: SENSOR_ROWS,
            pad_cols: SENSOR_COLS,
            pad_spacing: 0.0011,
        }
    }
}

impl HandConfig {
    pub fn joint_lower(&self) -> [f64; 6] {
        let (lo, hi) = (self.theta_min, self.theta_max);
        [lo, -hi, lo, -hi, lo, -hi]
    }

    pub fn joint_upper(&self) -> [f64; 6] {
        let (lo, hi) = (self.theta_min, self.theta_max);
        [hi, -lo, hi, -lo, hi, -lo]
    }
}

/// Hand configuration after finger closure.
#[derive(Clone, Debug, PartialEq)]
pub struct HandState {
    pub wrist: WristPose,
    /// `[proximal, distal]` per finger; the distal joint mirrors the proximal.
    pub joints: [f64; 6],
    pub fingertip_frames: [Transform; 3],
    pub contacts: [bool; 3],
}

impl HandState {
    pub fn any_contact(&self) -> bool {
        self.contacts.iter().any(|&c| c)
    }
}

const CLOSURE_SCAN_STEP: f64 = 0.01;
const CLOSURE_BISECT_ITERS: usize = 48;

/// Deepest pad-point penetration at joint value `theta`.
fn pad_penetration(
    finger: &FingerLayout,
    wrist: &Transform,
    probe: &ContactProbe,
    config: &HandConfig,
    theta: f64,
) -> f64 {
    let frame = wrist.compose(&finger.pad_frame(theta));
    let mut deepest = 0.0f64;
    for i in 0..config.pad_rows {
        let py = (i as f64 - (config.pad_rows as f64 - 1.0) / 2.0) * config.pad_spacing;
        for j in 0..config.pad_cols {
            let px = (j as f64 - (config.pad_cols as f64 - 1.0) / 2.0) * config.pad_spacing;
            let d = probe.penetration(frame.apply(Vec3::new(px, py, 0.0)));
            if d > deepest {
                deepest = d;
            }
        }
    }
    deepest
}

/// Close the fingers around the object: each finger hinge sweeps inward until
/// the deepest pad point reaches the configured target depth (solved by
/// bisection on the first crossing) or the joint limit is hit. Fingers that
/// touch but never reach the target depth stop at their deepest contact.
pub fn close_fingers(
    wrist: &WristPose,
    object: &ObjectModel,
    config: &HandConfig,
) -> Result<HandState> {
    wrist.validate()?;
    object.validate()?;
    let wrist_t = wrist.transform();
    let probe = object.probe();

    let mut joints = [0.0; 6];
    let mut frames = [Transform::IDENTITY; 3];
    let mut contacts = [false; 3];

    for (f, finger) in config.fingers.iter().enumerate() {
        let pen = |theta: f64| pad_penetration(finger, &wrist_t, &probe, config, theta);

        let theta;
        let contact;

        if pen(config.theta_min) >= config.target_depth {
            // Already at target depth fully open; cannot open further.
            theta = config.theta_min;
            contact = true;
        } else {
            // Scan for the first crossing of the target depth, remembering
            // the deepest shallow contact seen on the way.
            let mut best_theta = config.theta_max;
            let mut best_pen = 0.0f64;
            let mut lo = config.theta_min;
            let mut bracket = None;
            let mut t = config.theta_min + CLOSURE_SCAN_STEP;
            while t < config.theta_max + CLOSURE_SCAN_STEP {
                let tc = t.min(config.theta_max);
                let p = pen(tc);
                if p >= config.target_depth {
                    bracket = Some((lo, tc));
                    break;
                }
                if p > best_pen {
                    best_pen = p;
                    best_theta = tc;
                }
                lo = tc;
                if tc >= config.theta_max {
                    break;
                }
                t += CLOSURE_SCAN_STEP;
            }
            if let Some((mut a, mut b)) = bracket {
                for _ in 0..CLOSURE_BISECT_ITERS {
                    let mid = 0.5 * (a + b);
                    if pen(mid) >= config.target_depth {
                        b = mid;
                    } else {
                        a = mid;
                    }
                }
                theta = b;
                contact = true;
            } else if best_pen > 0.0 {
                theta = best_theta;
                contact = true;
            } else {
                theta = config.theta_max;
                contact = false;
            }
        }

        joints[2 * f] = theta;
        joints[2 * f + 1] = -theta;
        frames[f] = wrist_t.compose(&finger.pad_frame(theta));
        contacts[f] = contact;
    }

    Ok(HandState { wrist: *wrist, joints, fingertip_frames: frames, contacts })
}

/// Render one fingertip tactile image. For each taxel the penetration depth
/// `d` of the taxel point into the object maps to a raw force
/// `min(stiffness * d, max_force)` and a quantized reading
/// `clamp(round(255 * gain * f / max_force + noise), 0, 255)`.
pub fn render_tactile(
    fingertip_frame: &Transform,
    object: &ObjectModel,
    params: &SensorParams,
    rng_seed: u64,
) -> TactileImage {
    debug_assert!(params.validate().is_ok());
    let probe = object.probe();
    let mut rng = DetRng::new(rng_seed);
    let mut img = TactileImage::zeros(params.rows, params.cols);
    for i in 0..params.rows {
        for j in 0..params.cols {
            let p = fingertip_frame.apply(params.taxel_pos(i, j));
            let d = probe.penetration(p);
            let force = if d > 0.0 { (params.stiffness * d).min(params.max_force) } else { 0.0 };
            let gain = params.gain_map[i * params.cols + j];
            let noise = if params.noise_std > 0.0 { rng.normal(0.0, params.noise_std) } else { 0.0 };
            let raw = (255.0 * gain * force / params.max_force + noise).round();
            img.values[i * params.cols + j] = raw.clamp(0.0, 255.0) as u8;
        }
    }
    img
}

/// Close the fingers, then render all three fingertip images.
/// Errors when no finger reaches the object.
pub fn render_hand(
    wrist: &WristPose,
    object: &ObjectModel,
    hand: &HandConfig,
    params: &SensorParams,
    seed: u64,
) -> Result<(HandState, [TactileImage; 3])> {
    let state = close_fingers(wrist, object, hand)?;
    if !state.any_contact() {
        return Err(Error::NonContact(format!(
            "wrist at {:?} cannot reach the object",
            wrist.position
        )));
    }
    let images = [
        render_tactile(&state.fingertip_frames[0], object, params, derive_seed_indexed(seed, "finger", 0)),
        render_tactile(&state.fingertip_frames[1], object, params, derive_seed_indexed(seed, "finger", 1)),
        render_tactile(&state.fingertip_frames[2], object, params, derive_seed_indexed(seed, "finger", 2)),
    ];
    Ok((state, images))
}
