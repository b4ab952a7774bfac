//! Structured run configuration: a single TOML file with nested sections,
//! schema-validated (unknown keys rejected), defaults filling omissions.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tacrefine_core::dataset::{AugmentationConfig, DimSpec, PoseBounds};
use tacrefine_core::eval::MetricThresholds;
use tacrefine_core::io::fnv1a64;
use tacrefine_core::refine::RefineConfig;
use tacrefine_core::tacsim::{ObjectModel, SensorParams, Shape};
use tacrefine_core::train::TrainConfig;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub bounds: BoundsSection,
    pub sensor: SensorSection,
    pub object: ObjectSection,
    pub train: TrainSection,
    pub refine: RefineSection,
    pub eval: EvalSection,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            bounds: BoundsSection::default(),
            sensor: SensorSection::default(),
            object: ObjectSection::default(),
            train: TrainSection::default(),
            refine: RefineSection::default(),
            eval: EvalSection::default(),
            paths: PathsSection::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DimSection {
    pub lower: f64,
    pub upper: f64,
    pub steps: u32,
}

impl DimSection {
    fn to_spec(&self) -> DimSpec {
        DimSpec::new(self.lower, self.upper, self.steps)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsSection {
    pub pitch: DimSection,
    pub roll: DimSection,
    pub y: DimSection,
    pub z: DimSection,
    pub x_fixed: f64,
    pub yaw_fixed: f64,
    /// Step count per dimension for the coarser real-analogue grid.
    pub real_steps: u32,
}

impl Default for BoundsSection {
    fn default() -> Self {
        let d = PoseBounds::default();
        let dim = |s: DimSpec| DimSection { lower: s.lower, upper: s.upper, steps: s.steps };
        BoundsSection {
            pitch: dim(d.pitch),
            roll: dim(d.roll),
            y: dim(d.y),
            z: dim(d.z),
            x_fixed: d.x_fixed,
            yaw_fixed: d.yaw_fixed,
            real_steps: 4,
        }
    }
}

impl Default for DimSection {
    fn default() -> Self {
        DimSection { lower: 0.0, upper: 0.0, steps: 1 }
    }
}

impl BoundsSection {
    pub fn to_bounds(&self) -> PoseBounds {
        PoseBounds {
            pitch: self.pitch.to_spec(),
            roll: self.roll.to_spec(),
            y: self.y.to_spec(),
            z: self.z.to_spec(),
            x_fixed: self.x_fixed,
            yaw_fixed: self.yaw_fixed,
        }
    }

    pub fn to_real_bounds(&self) -> PoseBounds {
        self.to_bounds().with_steps(self.real_steps)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorSection {
    pub stiffness: f64,
    pub max_force: f64,
    /// Domain-shift knob for the real-analogue parameterization.
    pub severity: f64,
}

impl Default for SensorSection {
    fn default() -> Self {
        let n = SensorParams::nominal();
        SensorSection { stiffness: n.stiffness, max_force: n.max_force, severity: 0.2 }
    }
}

impl SensorSection {
    pub fn nominal(&self) -> SensorParams {
        let mut p = SensorParams::nominal();
        p.stiffness = self.stiffness;
        p.max_force = self.max_force;
        p
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectSection {
    /// One of `disc`, `rounded_rect`, `bar`.
    pub kind: String,
    pub thickness: f64,
    pub radius: f64,
    pub half_x: f64,
    pub half_y: f64,
    pub corner_radius: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Default for ObjectSection {
    fn default() -> Self {
        ObjectSection {
            kind: "disc".into(),
            thickness: 0.004,
            radius: 0.060,
            half_x: 0.060,
            half_y: 0.060,
            corner_radius: 0.024,
            half_length: 0.085,
            half_width: 0.057,
        }
    }
}

impl ObjectSection {
    pub fn to_object(&self) -> Result<ObjectModel> {
        let shape = match self.kind.as_str() {
            "disc" => Shape::Disc { radius: self.radius },
            "rounded_rect" => Shape::RoundedRect {
                half_x: self.half_x,
                half_y: self.half_y,
                corner_radius: self.corner_radius,
            },
            "bar" => Shape::Bar { half_length: self.half_length, half_width: self.half_width },
            other => bail!("object.kind: unknown shape {other:?} (use disc, rounded_rect or bar)"),
        };
        let object = ObjectModel::new(shape, self.thickness);
        object.validate().context("object")?;
        Ok(object)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub steps_pretrain: u64,
    pub steps_finetune: u64,
    pub lr_pretrain: f64,
    pub lr_finetune: f64,
    /// 0 means unbounded.
    pub pair_budget: u64,
    /// Fraction of pair draws restricted to grid neighbors of the current
    /// sample (the rest are uniform cross-combinations).
    pub local_pair_fraction: f64,
    pub local_pair_radius: u32,
    pub augment_tactile: bool,
    pub augment_joints: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            batch_size: d.batch_size,
            steps_pretrain: d.steps_pretrain,
            steps_finetune: d.steps_finetune,
            lr_pretrain: d.lr_pretrain,
            lr_finetune: d.lr_finetune,
            pair_budget: 0,
            local_pair_fraction: d.local_pair_fraction,
            local_pair_radius: d.local_pair_radius,
            augment_tactile: true,
            augment_joints: true,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            steps_pretrain: self.steps_pretrain,
            steps_finetune: self.steps_finetune,
            lr_pretrain: self.lr_pretrain,
            lr_finetune: self.lr_finetune,
            pair_budget: if self.pair_budget == 0 { u64::MAX } else { self.pair_budget },
            local_pair_fraction: self.local_pair_fraction,
            local_pair_radius: self.local_pair_radius,
            augmentation: AugmentationConfig {
                tactile_scale: self.augment_tactile,
                joint_noise: self.augment_joints,
                ..Default::default()
            },
            seed,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineSection {
    pub max_steps: usize,
    pub step_clamp: [f64; 6],
    pub eps_pos: f64,
    pub eps_rot: f64,
    pub stop_on_threshold: bool,
}

impl Default for RefineSection {
    fn default() -> Self {
        let d = RefineConfig::default();
        RefineSection {
            max_steps: d.max_steps,
            step_clamp: d.step_clamp,
            eps_pos: d.eps_pos,
            eps_rot: d.eps_rot,
            stop_on_threshold: d.stop_on_threshold,
        }
    }
}

impl RefineSection {
    pub fn to_refine_config(&self, seed: u64, bounds: &PoseBounds) -> RefineConfig {
        RefineConfig {
            max_steps: self.max_steps,
            step_clamp: self.step_clamp,
            pose_box: bounds.trust_box(1.2),
            eps_pos: self.eps_pos,
            eps_rot: self.eps_rot,
            stop_on_threshold: self.stop_on_threshold,
            seed,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub trials_r: usize,
    /// Include the unseen-shape generalization pass in `eval`.
    pub generalization: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { trials_r: 5, generalization: false }
    }
}

impl EvalSection {
    pub fn to_thresholds(&self, refine: &RefineSection) -> MetricThresholds {
        MetricThresholds {
            eps_pos: refine.eps_pos,
            eps_rot: refine.eps_rot,
            max_steps: refine.max_steps,
            trials_r: self.trials_r,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub sim_dataset: String,
    pub real_dataset: String,
    pub params_a: String,
    pub params_b: String,
    pub loss_log: String,
    pub reports_dir: String,
    pub trajectories_dir: String,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            sim_dataset: "sim.tacd".into(),
            real_dataset: "real.tacd".into(),
            params_a: "policy_a.tacw".into(),
            params_b: "policy_b.tacw".into(),
            loss_log: "loss.csv".into(),
            reports_dir: "reports".into(),
            trajectories_dir: "trajectories".into(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Stable fingerprint of the fully resolved configuration; embedded in
    /// every artifact this run writes.
    pub fn config_hash(&self) -> u64 {
        fnv1a64(self.to_toml().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let config = RunConfig::default();
        let text = config.to_toml();
        let parsed: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(parsed.config_hash(), config.config_hash());
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = toml::from_str::<RunConfig>("banana_count = 3\n").unwrap_err();
        assert!(err.to_string().contains("banana_count"), "{err}");
        let err = toml::from_str::<RunConfig>("[train]\nbatch_sizee = 3\n").unwrap_err();
        assert!(err.to_string().contains("batch_sizee"), "{err}");
    }

    #[test]
    fn partial_config_fills_defaults() {
        let config: RunConfig = toml::from_str("seed = 7\n[train]\nbatch_size = 8\n").unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.train.batch_size, 8);
        assert_eq!(config.train.steps_pretrain, TrainConfig::default().steps_pretrain);
    }

    #[test]
    fn object_kinds_parse() {
        let mut section = ObjectSection::default();
        assert!(section.to_object().is_ok());
        section.kind = "bar".into();
        assert!(section.to_object().is_ok());
        section.kind = "prism".into();
        assert!(section.to_object().is_err());
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        b.seed = 43;
        assert_ne!(a.config_hash(), b.config_hash());
    }
}
