//! Training pipelines: Policy A (sim only) and Policy B (sim pretrain plus
//! real-analogue fine-tune), with bit-exact checkpoint/resume and loss
//! logging.
//!
//! The trainer owns two counter-based random streams, one for pair sampling
//! and one for augmentation; both stream positions are persisted in
//! checkpoints so an interrupted run continues exactly where it stopped.

use crate::dataset::{
    augment_in_place, draw_pair, AugmentationConfig, Dataset, DomainTag, PairedExample,
    PoseBounds, SampleRecord,
};
use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};
use crate::net::{self, optimizer_step, AdamHyper, AdamState, PolicyInput, PolicyParams};
use crate::rng::{derive_seed, DetRng};
use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

const CHECKPOINT_MAGIC: [u8; 4] = *b"TACK";
const CHECKPOINT_VERSION: u16 = 1;

/// Training hyperparameters shared by both policies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps_pretrain: u64,
    pub steps_finetune: u64,
    pub lr_pretrain: f64,
    pub lr_finetune: f64,
    /// Pair draws before the sampling stream restarts; effectively unbounded
    /// by default.
    pub pair_budget: u64,
    /// Fraction of pair draws restricted to lattice neighbors of the current
    /// sample. Uniform cross-combination alone almost never produces the
    /// near-target pairs the closed-loop controller operates on.
    pub local_pair_fraction: f64,
    /// Lattice jitter half-width (grid steps per dimension) for local pairs.
    pub local_pair_radius: u32,
    pub augmentation: AugmentationConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        // Fine-tuning is deliberately short and low-rate: the real-analogue
        // set is small and carries frozen sensor noise, and long fine-tunes
        // measurably erode the pretrained policy's precision.
        TrainConfig {
            batch_size: 64,
            steps_pretrain: 30_000,
            steps_finetune: 1_000,
            lr_pretrain: 1e-3,
            lr_finetune: 1e-4,
            pair_budget: u64::MAX,
            local_pair_fraction: 0.75,
            local_pair_radius: 2,
            augmentation: AugmentationConfig::default(),
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::InvalidParams("batch_size must be >= 1".into()));
        }
        if !(self.lr_pretrain > 0.0) || !(self.lr_finetune > 0.0) {
            return Err(Error::InvalidParams("learning rates must be > 0".into()));
        }
        if self.pair_budget == 0 {
            return Err(Error::InvalidParams("pair_budget must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.local_pair_fraction) {
            return Err(Error::InvalidParams("local_pair_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Grid-index bookkeeping for locality-restricted pair sampling. Records
/// carry their lattice index as `record_id`; non-contact holes simply miss
/// the lookup and fall back to a uniform draw.
struct LatticeIndex {
    dims: [u32; 4],
    by_id: HashMap<u64, usize>,
}

impl LatticeIndex {
    fn new(bounds: &PoseBounds, records: &[SampleRecord]) -> Self {
        LatticeIndex {
            dims: [bounds.pitch.steps, bounds.roll.steps, bounds.y.steps, bounds.z.steps],
            by_id: records.iter().enumerate().map(|(i, r)| (r.record_id, i)).collect(),
        }
    }

    fn decompose(&self, id: u64) -> [u32; 4] {
        let [_, r, y, z] = self.dims.map(u64::from);
        let iz = id % z;
        let iy = (id / z) % y;
        let ir = (id / (z * y)) % r;
        let ip = id / (z * y * r);
        [ip as u32, ir as u32, iy as u32, iz as u32]
    }

    fn compose(&self, c: [u32; 4]) -> u64 {
        let [_, r, y, z] = self.dims.map(u64::from);
        ((c[0] as u64 * r + c[1] as u64) * y + c[2] as u64) * z + c[3] as u64
    }

    /// Index of a record whose lattice coordinates are a jitter of the
    /// base record's, if that grid point produced a record.
    fn neighbor(&self, base: &SampleRecord, radius: u32, rng: &mut DetRng) -> Option<usize> {
        let mut coords = self.decompose(base.record_id);
        for (d, c) in coords.iter_mut().enumerate() {
            let span = 2 * radius + 1;
            let jitter = rng.below(span as usize) as i64 - radius as i64;
            *c = (*c as i64 + jitter).clamp(0, self.dims[d] as i64 - 1) as u32;
        }
        self.by_id.get(&self.compose(coords)).copied()
    }
}

/// What a training run produced, next to the parameters themselves.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// One loss value per optimizer step.
    pub losses: Vec<f64>,
    pub wall_time_secs: f64,
    pub config: TrainConfig,
    /// Filled by callers that persist the parameters.
    pub params_path: Option<String>,
}

impl TrainReport {
    /// Loss log as CSV (`step,loss`).
    pub fn write_loss_csv(&self, config_hash: u64, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!("# config_hash={config_hash:016x}\n"));
        out.push_str("step,loss\n");
        for (i, loss) in self.losses.iter().enumerate() {
            out.push_str(&format!("{i},{loss}\n"));
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

fn pair_to_example(pair: &PairedExample) -> (PolicyInput, [f64; 6]) {
    (
        PolicyInput {
            current: pair.current.images.clone(),
            target: pair.target.images.clone(),
            joints: pair.current.joints,
        },
        pair.delta,
    )
}

/// Stepwise training driver behind [`train_policy_a`] and [`train_policy_b`].
pub struct Trainer<'a> {
    sim: &'a [SampleRecord],
    real: Option<&'a [SampleRecord]>,
    sim_lattice: LatticeIndex,
    real_lattice: Option<LatticeIndex>,
    sim_hash: u64,
    real_hash: u64,
    config: TrainConfig,
    params: PolicyParams,
    opt: AdamState,
    rng_pairs: DetRng,
    rng_augment: DetRng,
    step: u64,
    losses: Vec<f64>,
}

impl<'a> Trainer<'a> {
    pub fn new(sim: &'a Dataset, real: Option<&'a Dataset>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if sim.domain != DomainTag::Sim {
            return Err(Error::DomainMismatch {
                expected: DomainTag::Sim.as_str().into(),
                found: sim.domain.as_str().into(),
            });
        }
        if sim.records.len() < 2 {
            return Err(Error::EmptyInput("sim dataset needs at least 2 records".into()));
        }
        if let Some(real) = real {
            if real.domain != DomainTag::RealAnalogue {
                return Err(Error::DomainMismatch {
                    expected: DomainTag::RealAnalogue.as_str().into(),
                    found: real.domain.as_str().into(),
                });
            }
            if real.records.len() < 2 {
                return Err(Error::EmptyInput("real dataset needs at least 2 records".into()));
            }
        }
        let params = net::init_params(derive_seed(config.seed, "init"));
        let opt = AdamState::new(params.num_params());
        Ok(Trainer {
            sim: &sim.records,
            real: real.map(|d| d.records.as_slice()),
            sim_lattice: LatticeIndex::new(&sim.bounds, &sim.records),
            real_lattice: real.map(|d| LatticeIndex::new(&d.bounds, &d.records)),
            sim_hash: sim.content_hash(),
            real_hash: real.map(|d| d.content_hash()).unwrap_or(0),
            config,
            params,
            opt,
            rng_pairs: DetRng::new(derive_seed(config.seed, "pairs")),
            rng_augment: DetRng::new(derive_seed(config.seed, "augment")),
            step: 0,
            losses: Vec::new(),
        })
    }

    pub fn total_steps(&self) -> u64 {
        self.config.steps_pretrain
            + if self.real.is_some() { self.config.steps_finetune } else { 0 }
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn opt_state(&self) -> &AdamState {
        &self.opt
    }

    /// Run one optimizer step; returns the batch loss.
    pub fn step(&mut self) -> Result<f64> {
        let pretrain_phase = self.step < self.config.steps_pretrain;
        let (base_lr, phase_start, phase_len) = if pretrain_phase {
            (self.config.lr_pretrain, 0, self.config.steps_pretrain)
        } else {
            (self.config.lr_finetune, self.config.steps_pretrain, self.config.steps_finetune)
        };
        // Cosine decay to 10% of the base rate within each phase; purely a
        // function of the step index, so resume stays bit-exact.
        let frac = (self.step - phase_start) as f64 / phase_len.max(1) as f64;
        let lr = base_lr * (0.1 + 0.45 * (1.0 + (std::f64::consts::PI * frac).cos()));
        let records: &'a [SampleRecord] = if pretrain_phase {
            self.sim
        } else {
            self.real.expect("fine-tune phase without real dataset")
        };

        let k = self.config.batch_size;
        let mut batch = Vec::with_capacity(k);
        for i in 0..k {
            let drawn = self.step * k as u64 + i as u64;
            if self.config.pair_budget != u64::MAX && drawn % self.config.pair_budget == 0 {
                // Budget exhausted: the pair stream restarts deterministically.
                self.rng_pairs = DetRng::new(derive_seed(self.config.seed, "pairs"));
            }
            let local = self.rng_pairs.next_f64() < self.config.local_pair_fraction;
            let mut pair = if local {
                let base = self.rng_pairs.below(records.len());
                let lattice = if pretrain_phase {
                    &self.sim_lattice
                } else {
                    self.real_lattice.as_ref().expect("fine-tune phase without real dataset")
                };
                match lattice.neighbor(
                    &records[base],
                    self.config.local_pair_radius,
                    &mut self.rng_pairs,
                ) {
                    Some(t) => PairedExample::new(records[base].clone(), records[t].clone()),
                    None => draw_pair(records, &mut self.rng_pairs),
                }
            } else {
                draw_pair(records, &mut self.rng_pairs)
            };
            augment_in_place(&mut pair, &self.config.augmentation, &mut self.rng_augment);
            batch.push(pair_to_example(&pair));
        }
        let (loss, grads) = net::backward(&self.params, &batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {}", self.step)));
        }
        optimizer_step(&mut self.params, &grads, &mut self.opt, &AdamHyper::with_lr(lr));
        self.losses.push(loss);
        self.step += 1;
        Ok(loss)
    }

    pub fn run_to_completion(&mut self) -> Result<()> {
        while self.step < self.total_steps() {
            self.step()?;
        }
        Ok(())
    }

    pub fn into_result(self, wall_time_secs: f64) -> (PolicyParams, TrainReport) {
        let report = TrainReport {
            losses: self.losses,
            wall_time_secs,
            config: self.config,
            params_path: None,
        };
        (self.params, report)
    }

    /// Persist everything needed to continue this run bit-exactly.
    pub fn save_checkpoint(&self, config_hash: u64, path: &Path) -> Result<()> {
        if path.as_os_str().is_empty() {
            return Err(Error::InvalidParams("checkpoint path is empty".into()));
        }
        let mut w = ByteWriter::new(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
        w.put_u64(config_hash);
        w.put_u64(self.step);
        write_config(&mut w, &self.config);
        w.put_u64(self.sim_hash);
        w.put_u64(self.real_hash);
        let (pk, pc) = self.rng_pairs.state();
        w.put_u64(pk);
        w.put_u64(pc);
        let (ak, ac) = self.rng_augment.state();
        w.put_u64(ak);
        w.put_u64(ac);
        net::write_params_body(&mut w, &self.params);
        w.put_u64(self.opt.t);
        w.put_f64_slice(&self.opt.m);
        w.put_f64_slice(&self.opt.v);
        w.put_u64(self.losses.len() as u64);
        w.put_f64_slice(&self.losses);
        w.finish_to_file(path)
    }

    /// Rebuild a trainer from a checkpoint. The same datasets must be
    /// supplied; content hashes guard against swapped data.
    pub fn resume(path: &Path, sim: &'a Dataset, real: Option<&'a Dataset>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut r = ByteReader::open(&bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let _config_hash = r.get_u64()?;
        let step = r.get_u64()?;
        let config = read_config(&mut r)?;
        let sim_hash = r.get_u64()?;
        let real_hash = r.get_u64()?;
        if sim.content_hash() != sim_hash {
            return Err(Error::MetadataMismatch("sim dataset differs from checkpoint".into()));
        }
        let supplied_real_hash = real.map(|d| d.content_hash()).unwrap_or(0);
        if supplied_real_hash != real_hash {
            return Err(Error::MetadataMismatch("real dataset differs from checkpoint".into()));
        }
        let rng_pairs = DetRng::from_state(r.get_u64()?, r.get_u64()?);
        let rng_augment = DetRng::from_state(r.get_u64()?, r.get_u64()?);
        let params = net::read_params_body(&mut r)?;
        let t = r.get_u64()?;
        let m = r.get_f64_vec(params.num_params())?;
        let v = r.get_f64_vec(params.num_params())?;
        let n_losses = r.get_u64()? as usize;
        let losses = r.get_f64_vec(n_losses)?;
        Ok(Trainer {
            sim: &sim.records,
            real: real.map(|d| d.records.as_slice()),
            sim_lattice: LatticeIndex::new(&sim.bounds, &sim.records),
            real_lattice: real.map(|d| LatticeIndex::new(&d.bounds, &d.records)),
            sim_hash,
            real_hash,
            config,
            params,
            opt: AdamState { m, v, t },
            rng_pairs,
            rng_augment,
            step,
            losses,
        })
    }
}

fn write_config(w: &mut ByteWriter, c: &TrainConfig) {
    w.put_u64(c.batch_size as u64);
    w.put_u64(c.steps_pretrain);
    w.put_u64(c.steps_finetune);
    w.put_f64(c.lr_pretrain);
    w.put_f64(c.lr_finetune);
    w.put_u64(c.pair_budget);
    w.put_f64(c.local_pair_fraction);
    w.put_u32(c.local_pair_radius);
    w.put_u8(c.augmentation.tactile_scale as u8);
    w.put_f64(c.augmentation.tactile_scale_range.0);
    w.put_f64(c.augmentation.tactile_scale_range.1);
    w.put_u8(c.augmentation.joint_noise as u8);
    w.put_f64(c.augmentation.joint_noise_range.0);
    w.put_f64(c.augmentation.joint_noise_range.1);
    w.put_u64(c.seed);
}

fn read_config(r: &mut ByteReader) -> Result<TrainConfig> {
    Ok(TrainConfig {
        batch_size: r.get_u64()? as usize,
        steps_pretrain: r.get_u64()?,
        steps_finetune: r.get_u64()?,
        lr_pretrain: r.get_f64()?,
        lr_finetune: r.get_f64()?,
        pair_budget: r.get_u64()?,
        local_pair_fraction: r.get_f64()?,
        local_pair_radius: r.get_u32()?,
        augmentation: AugmentationConfig {
            tactile_scale: r.get_u8()? != 0,
            tactile_scale_range: (r.get_f64()?, r.get_f64()?),
            joint_noise: r.get_u8()? != 0,
            joint_noise_range: (r.get_f64()?, r.get_f64()?),
        },
        seed: r.get_u64()?,
    })
}

/// Policy A: trained exclusively on sim-domain data.
pub fn train_policy_a(sim: &Dataset, config: TrainConfig) -> Result<(PolicyParams, TrainReport)> {
    let start = Instant::now();
    let mut trainer = Trainer::new(sim, None, config)?;
    trainer.run_to_completion()?;
    Ok(trainer.into_result(start.elapsed().as_secs_f64()))
}

/// Policy B: the Policy A pretrain phase followed by fine-tuning on
/// real-analogue data at the fine-tune learning rate. All weights update.
pub fn train_policy_b(
    sim: &Dataset,
    real: &Dataset,
    config: TrainConfig,
) -> Result<(PolicyParams, TrainReport)> {
    let start = Instant::now();
    let mut trainer = Trainer::new(sim, Some(real), config)?;
    trainer.run_to_completion()?;
    Ok(trainer.into_result(start.elapsed().as_secs_f64()))
}
