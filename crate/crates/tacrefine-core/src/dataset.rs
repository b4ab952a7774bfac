//! Pose-space datasets: grid sampling, recording of (pose, joints, tactile)
//! tuples in the sim and real-analogue domains, cross-combination pairing
//! with augmentation, and the on-disk container.

use crate::error::{Error, Result};
use crate::io::{fnv1a64, ByteReader, ByteWriter};
use crate::math::Pose6;
use crate::rng::{derive_seed_indexed, DetRng};
use crate::tacsim::{
    render_hand, HandConfig, ObjectModel, SensorParams, TactileImage, WristPose, SENSOR_COLS,
    SENSOR_ROWS, TAXEL_COUNT,
};
use std::path::Path;

const DATASET_MAGIC: [u8; 4] = *b"TACD";
const DATASET_VERSION: u16 = 1;
const PAIRS_MAGIC: [u8; 4] = *b"TACP";
const PAIRS_VERSION: u16 = 1;

/// Which simulator parameterization produced a record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainTag {
    Sim,
    RealAnalogue,
}

impl DomainTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            DomainTag::Sim => "sim",
            DomainTag::RealAnalogue => "real_analogue",
        }
    }

    fn to_byte(self) -> u8 {
        match self {
            DomainTag::Sim => 0,
            DomainTag::RealAnalogue => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(DomainTag::Sim),
            1 => Ok(DomainTag::RealAnalogue),
            other => Err(Error::MetadataMismatch(format!("unknown domain tag {other}"))),
        }
    }
}

/// Inclusive sampling range with a step count for one pose dimension.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DimSpec {
    pub lower: f64,
    pub upper: f64,
    pub steps: u32,
}

impl DimSpec {
    pub fn new(lower: f64, upper: f64, steps: u32) -> Self {
        DimSpec { lower, upper, steps }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::InvalidParams(format!("{name}: steps must be >= 1")));
        }
        if !(self.lower <= self.upper) {
            return Err(Error::InvalidParams(format!("{name}: empty range")));
        }
        Ok(())
    }

    fn value(&self, i: u32) -> f64 {
        if self.steps == 1 {
            self.lower
        } else {
            self.lower + (self.upper - self.lower) * i as f64 / (self.steps - 1) as f64
        }
    }
}

/// Sampled pose-space box: pitch, roll, y, z vary; x and yaw are fixed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseBounds {
    pub pitch: DimSpec,
    pub roll: DimSpec,
    pub y: DimSpec,
    pub z: DimSpec,
    pub x_fixed: f64,
    pub yaw_fixed: f64,
}

impl Default for PoseBounds {
    fn default() -> Self {
        PoseBounds {
            pitch: DimSpec::new(-0.15, 0.15, 7),
            roll: DimSpec::new(-0.15, 0.15, 7),
            y: DimSpec::new(-0.02, 0.02, 7),
            z: DimSpec::new(-0.02, 0.02, 7),
            x_fixed: 0.0,
            yaw_fixed: 0.0,
        }
    }
}

impl PoseBounds {
    /// Default bounds with the coarser real-analogue step count.
    pub fn default_real_analogue() -> Self {
        PoseBounds::default().with_steps(4)
    }

    pub fn with_steps(mut self, steps: u32) -> Self {
        self.pitch.steps = steps;
        self.roll.steps = steps;
        self.y.steps = steps;
        self.z.steps = steps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.pitch.validate("pitch")?;
        self.roll.validate("roll")?;
        self.y.validate("y")?;
        self.z.validate("z")?;
        Ok(())
    }

    pub fn grid_size(&self) -> usize {
        self.pitch.steps as usize
            * self.roll.steps as usize
            * self.y.steps as usize
            * self.z.steps as usize
    }

    /// Per-component half-range `(x, y, z, roll, pitch, yaw)`, used for the
    /// controller's default step clamp.
    pub fn half_ranges(&self) -> [f64; 6] {
        [
            0.0,
            (self.y.upper - self.y.lower) / 2.0,
            (self.z.upper - self.z.lower) / 2.0,
            (self.roll.upper - self.roll.lower) / 2.0,
            (self.pitch.upper - self.pitch.lower) / 2.0,
            0.0,
        ]
    }

    /// Symmetric workspace box with a multiplicative margin, in
    /// `(x, y, z, roll, pitch, yaw)` order; used as the controller's trust
    /// region.
    pub fn trust_box(&self, margin: f64) -> [f64; 6] {
        let sym = |d: &DimSpec| d.lower.abs().max(d.upper.abs()) * margin;
        [
            self.x_fixed.abs(),
            sym(&self.y),
            sym(&self.z),
            sym(&self.roll),
            sym(&self.pitch),
            self.yaw_fixed.abs(),
        ]
    }

    /// Uniform random pose inside the box (fixed dims at their fixed values).
    pub fn sample_uniform(&self, rng: &mut DetRng) -> Pose6 {
        Pose6([
            self.x_fixed,
            rng.uniform(self.y.lower, self.y.upper),
            rng.uniform(self.z.lower, self.z.upper),
            rng.uniform(self.roll.lower, self.roll.upper),
            rng.uniform(self.pitch.lower, self.pitch.upper),
            self.yaw_fixed,
        ])
    }
}

/// Cartesian grid over (pitch, roll, y, z) in lexicographic order with z
/// varying fastest; `x` and `yaw` take their fixed values.
pub fn sample_grid(bounds: &PoseBounds) -> Result<Vec<Pose6>> {
    bounds.validate()?;
    let mut poses = Vec::with_capacity(bounds.grid_size());
    for ip in 0..bounds.pitch.steps {
        for ir in 0..bounds.roll.steps {
            for iy in 0..bounds.y.steps {
                for iz in 0..bounds.z.steps {
                    poses.push(Pose6([
                        bounds.x_fixed,
                        bounds.y.value(iy),
                        bounds.z.value(iz),
                        bounds.roll.value(ir),
                        bounds.pitch.value(ip),
                        bounds.yaw_fixed,
                    ]));
                }
            }
        }
    }
    Ok(poses)
}

/// One dataset row: wrist pose, joints and the three fingertip images.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub record_id: u64,
    pub pose: Pose6,
    pub joints: [f64; 6],
    pub images: [TactileImage; 3],
    pub domain: DomainTag,
}

/// Record the tactile response at every reachable pose. Unreachable poses are
/// skipped; more than 50% unreachable signals bad bounds and fails.
pub fn collect(
    poses: &[Pose6],
    object: &ObjectModel,
    hand: &HandConfig,
    params: &SensorParams,
    domain: DomainTag,
    seed: u64,
) -> Result<Vec<SampleRecord>> {
    params.validate()?;
    if poses.is_empty() {
        return Err(Error::EmptyInput("no poses to collect".into()));
    }
    let mut records = Vec::with_capacity(poses.len());
    let mut skipped = 0usize;
    for (i, pose) in poses.iter().enumerate() {
        let wrist = WristPose::from_pose6(pose);
        match render_hand(&wrist, object, hand, params, derive_seed_indexed(seed, "pose", i as u64))
        {
            Ok((state, images)) => records.push(SampleRecord {
                record_id: i as u64,
                pose: *pose,
                joints: state.joints,
                images,
                domain,
            }),
            Err(Error::NonContact(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if skipped * 2 > poses.len() {
        return Err(Error::InvalidParams(format!(
            "{skipped} of {} poses are non-contact; bounds are off the object",
            poses.len()
        )));
    }
    Ok(records)
}

/// Training unit: a (current, target) record pair with its ground-truth
/// wrist increment, `delta = pose(target) - pose(current)` componentwise in
/// the R6 parameterization, angles wrapped to `(-pi, pi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedExample {
    pub current: SampleRecord,
    pub target: SampleRecord,
    pub delta: [f64; 6],
}

impl PairedExample {
    pub fn new(current: SampleRecord, target: SampleRecord) -> Self {
        let delta = Pose6::delta_from(&target.pose, &current.pose);
        PairedExample { current, target, delta }
    }
}

enum PairMode {
    /// Full N x N enumeration, lexicographic by (current, target) index.
    Enumerate { i: usize, j: usize },
    /// Uniform with replacement, up to the budget.
    Sample { rng: DetRng, remaining: u64 },
}

/// Streaming (current, target) pair source over a record set.
pub struct PairStream<'a> {
    records: &'a [SampleRecord],
    mode: PairMode,
}

impl<'a> Iterator for PairStream<'a> {
    type Item = PairedExample;

    fn next(&mut self) -> Option<PairedExample> {
        let n = self.records.len();
        let (ci, ti) = match &mut self.mode {
            PairMode::Enumerate { i, j } => {
                if *i >= n {
                    return None;
                }
                let out = (*i, *j);
                *j += 1;
                if *j >= n {
                    *j = 0;
                    *i += 1;
                }
                out
            }
            PairMode::Sample { rng, remaining } => {
                if *remaining == 0 {
                    return None;
                }
                *remaining -= 1;
                (rng.below(n), rng.below(n))
            }
        };
        Some(PairedExample::new(self.records[ci].clone(), self.records[ti].clone()))
    }
}

/// Cross-combination pairing. When the budget covers the full `N x N` pair
/// space, every ordered pair is yielded exactly once; otherwise pairs are
/// sampled uniformly with replacement up to the budget.
pub fn cross_combine(
    records: &[SampleRecord],
    pair_budget: u64,
    seed: u64,
) -> Result<PairStream<'_>> {
    if records.len() < 2 {
        return Err(Error::EmptyInput("pairing needs at least 2 records".into()));
    }
    let n2 = (records.len() as u64).saturating_mul(records.len() as u64);
    let mode = if pair_budget >= n2 {
        PairMode::Enumerate { i: 0, j: 0 }
    } else {
        PairMode::Sample { rng: DetRng::new(seed), remaining: pair_budget }
    };
    Ok(PairStream { records, mode })
}

/// Draw a single uniform ordered pair; the sampling core behind both the
/// budgeted stream and the training loop.
pub fn draw_pair(records: &[SampleRecord], rng: &mut DetRng) -> PairedExample {
    let ci = rng.below(records.len());
    let ti = rng.below(records.len());
    PairedExample::new(records[ci].clone(), records[ti].clone())
}

/// Augmentation scheme: one multiplicative scale on the current tactile
/// images and independent additive noise on the current joints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentationConfig {
    pub tactile_scale: bool,
    pub tactile_scale_range: (f64, f64),
    pub joint_noise: bool,
    pub joint_noise_range: (f64, f64),
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            tactile_scale: true,
            tactile_scale_range: (0.5, 1.0),
            joint_noise: true,
            joint_noise_range: (-0.04, 0.04),
        }
    }
}

impl AugmentationConfig {
    pub fn disabled() -> Self {
        AugmentationConfig { tactile_scale: false, joint_noise: false, ..Default::default() }
    }
}

/// `v -> clamp(round(s * v), 0, 255)` on every taxel.
pub fn scale_image(img: &TactileImage, s: f64) -> TactileImage {
    let mut out = img.clone();
    for v in out.values.iter_mut() {
        *v = (s * *v as f64).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Augment the current sample of a pair; the target sample and the delta are
/// left untouched.
pub fn augment(example: &PairedExample, config: &AugmentationConfig, seed: u64) -> PairedExample {
    let mut rng = DetRng::new(seed);
    let mut out = example.clone();
    augment_in_place(&mut out, config, &mut rng);
    out
}

pub(crate) fn augment_in_place(
    example: &mut PairedExample,
    config: &AugmentationConfig,
    rng: &mut DetRng,
) {
    if config.tactile_scale {
        let (lo, hi) = config.tactile_scale_range;
        let s = rng.uniform(lo, hi);
        for img in example.current.images.iter_mut() {
            for v in img.values.iter_mut() {
                *v = (s * *v as f64).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    if config.joint_noise {
        let (lo, hi) = config.joint_noise_range;
        for q in example.current.joints.iter_mut() {
            *q += rng.uniform(lo, hi);
        }
    }
}

/// A record set plus the provenance needed to reproduce and validate it.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub domain: DomainTag,
    pub bounds: PoseBounds,
    pub sensor_hash: u64,
    pub seed: u64,
    pub config_hash: u64,
    pub records: Vec<SampleRecord>,
}

impl Dataset {
    /// Content fingerprint over all records, used as a checkpoint guard.
    pub fn content_hash(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.records.len() * 128);
        for r in &self.records {
            bytes.extend_from_slice(&r.record_id.to_le_bytes());
            for v in r.pose.0.iter().chain(r.joints.iter()) {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            for img in &r.images {
                bytes.extend_from_slice(&img.values);
            }
        }
        fnv1a64(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = ByteWriter::new(DATASET_MAGIC, DATASET_VERSION);
        w.put_u8(self.domain.to_byte());
        w.put_u64(self.seed);
        w.put_u64(self.config_hash);
        w.put_u64(self.sensor_hash);
        for d in [&self.bounds.pitch, &self.bounds.roll, &self.bounds.y, &self.bounds.z] {
            w.put_f64(d.lower);
            w.put_f64(d.upper);
            w.put_u32(d.steps);
        }
        w.put_f64(self.bounds.x_fixed);
        w.put_f64(self.bounds.yaw_fixed);
        w.put_u32(self.records.len() as u32);
        for r in &self.records {
            write_record(&mut w, r);
        }
        w.finish_to_file(path)
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let bytes = std::fs::read(path)?;
        let mut r = ByteReader::open(&bytes, DATASET_MAGIC, DATASET_VERSION)?;
        let domain = DomainTag::from_byte(r.get_u8()?)?;
        let seed = r.get_u64()?;
        let config_hash = r.get_u64()?;
        let sensor_hash = r.get_u64()?;
        let mut dims = [DimSpec::new(0.0, 0.0, 1); 4];
        for d in dims.iter_mut() {
            d.lower = r.get_f64()?;
            d.upper = r.get_f64()?;
            d.steps = r.get_u32()?;
        }
        let x_fixed = r.get_f64()?;
        let yaw_fixed = r.get_f64()?;
        let bounds = PoseBounds {
            pitch: dims[0],
            roll: dims[1],
            y: dims[2],
            z: dims[3],
            x_fixed,
            yaw_fixed,
        };
        let count = r.get_u32()? as usize;
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            records.push(read_record(&mut r, domain)?);
        }
        Ok(Dataset { domain, bounds, sensor_hash, seed, config_hash, records })
    }

    /// One row per record, images omitted.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!("# config_hash={:016x}\n", self.config_hash));
        out.push_str("record_id,domain,x,y,z,roll,pitch,yaw,q0,q1,q2,q3,q4,q5\n");
        for r in &self.records {
            out.push_str(&format!("{},{}", r.record_id, r.domain.as_str()));
            for v in r.pose.0.iter().chain(r.joints.iter()) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

fn write_record(w: &mut ByteWriter, r: &SampleRecord) {
    w.put_u64(r.record_id);
    w.put_f64_slice(&r.pose.0);
    w.put_f64_slice(&r.joints);
    for img in &r.images {
        debug_assert_eq!(img.values.len(), TAXEL_COUNT);
        w.put_bytes(&img.values);
    }
}

fn read_record(r: &mut ByteReader, domain: DomainTag) -> Result<SampleRecord> {
    let record_id = r.get_u64()?;
    let pose_v = r.get_f64_vec(6)?;
    let joints_v = r.get_f64_vec(6)?;
    let mut pose = [0.0; 6];
    pose.copy_from_slice(&pose_v);
    let mut joints = [0.0; 6];
    joints.copy_from_slice(&joints_v);
    let mut images = [
        TactileImage::zeros(SENSOR_ROWS, SENSOR_COLS),
        TactileImage::zeros(SENSOR_ROWS, SENSOR_COLS),
        TactileImage::zeros(SENSOR_ROWS, SENSOR_COLS),
    ];
    for img in images.iter_mut() {
        img.values.copy_from_slice(r.get_bytes(TAXEL_COUNT)?);
    }
    Ok(SampleRecord { record_id, pose: Pose6(pose), joints, images, domain })
}

/// Persist a list of paired examples (both records are stored in full).
pub fn save_pairs(pairs: &[PairedExample], config_hash: u64, path: &Path) -> Result<()> {
    let mut w = ByteWriter::new(PAIRS_MAGIC, PAIRS_VERSION);
    w.put_u64(config_hash);
    w.put_u32(pairs.len() as u32);
    for p in pairs {
        w.put_u8(p.current.domain.to_byte());
        write_record(&mut w, &p.current);
        w.put_u8(p.target.domain.to_byte());
        write_record(&mut w, &p.target);
        w.put_f64_slice(&p.delta);
    }
    w.finish_to_file(path)
}

pub fn load_pairs(path: &Path) -> Result<(Vec<PairedExample>, u64)> {
    let bytes = std::fs::read(path)?;
    let mut r = ByteReader::open(&bytes, PAIRS_MAGIC, PAIRS_VERSION)?;
    let config_hash = r.get_u64()?;
    let count = r.get_u32()? as usize;
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let cd = DomainTag::from_byte(r.get_u8()?)?;
        let current = read_record(&mut r, cd)?;
        let td = DomainTag::from_byte(r.get_u8()?)?;
        let target = read_record(&mut r, td)?;
        let delta_v = r.get_f64_vec(6)?;
        let mut delta = [0.0; 6];
        delta.copy_from_slice(&delta_v);
        pairs.push(PairedExample { current, target, delta });
    }
    Ok((pairs, config_hash))
}
