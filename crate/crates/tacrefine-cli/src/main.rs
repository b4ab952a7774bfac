//! Command-line pipeline: dataset generation, policy training, closed-loop
//! refinement, evaluation and report rendering.

mod config;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use config::RunConfig;
use std::path::{Path, PathBuf};
use tacrefine_core::dataset::{collect, sample_grid, Dataset, DomainTag};
use tacrefine_core::eval::{
    compare_policies, generalization_eval, pose_matrix, render_report, ComparisonReport,
    CurveData, EvalEnv, GroupComparison, MatrixCell, MatrixReport, PolicyMetrics, PoseDim,
    ScenarioSet,
};
use tacrefine_core::math::Pose6;
use tacrefine_core::net::{load_params, save_params, PolicyParams};
use tacrefine_core::refine::{demonstrate_target, refine_loop, track, MotionEvent, MotionSchedule};
use tacrefine_core::rng::derive_seed;
use tacrefine_core::tacsim::{perturb_params, HandConfig, ObjectModel, SensorParams, WristPose};
use tacrefine_core::train::{train_policy_a, train_policy_b};

#[derive(Parser)]
#[command(name = "tacrefine", version, about = "Tactile-only in-hand grasp refinement pipeline")]
struct Cli {
    /// Run configuration file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory all relative paths resolve against.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,

    /// Seed override (beats config and TACREFINE_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the fully resolved default configuration as TOML.
    PrintDefaultConfig,
    /// Generate the sim and real-analogue datasets.
    GenData,
    /// Train policy a (sim only) or b (sim pretrain + real-analogue fine-tune).
    Train {
        #[arg(long)]
        policy: String,
    },
    /// Run one closed-loop refinement trial and log its trajectory.
    Refine {
        #[arg(long)]
        params: PathBuf,
        /// Initial wrist pose "x,y,z,roll,pitch,yaw".
        #[arg(long)]
        init_pose: String,
        /// Target wrist pose "x,y,z,roll,pitch,yaw".
        #[arg(long)]
        target_pose: String,
        /// Simulator domain: "sim" or "real-analogue".
        #[arg(long, default_value = "sim")]
        domain: String,
        /// Also dump per-step tactile images as PGM.
        #[arg(long)]
        pgm: bool,
    },
    /// Policy comparison, pose matrix and report bundle.
    Eval {
        #[arg(long)]
        params_a: PathBuf,
        #[arg(long)]
        params_b: PathBuf,
    },
    /// Track a moving object from a fixed target tactile image.
    Track {
        #[arg(long)]
        params: PathBuf,
        /// Motion schedule file: lines of "at_step,dim,offset".
        #[arg(long)]
        schedule: PathBuf,
        /// Target wrist pose "x,y,z,roll,pitch,yaw".
        #[arg(long)]
        target_pose: String,
        /// Initial wrist pose; defaults to the target pose.
        #[arg(long)]
        init_pose: Option<String>,
        #[arg(long, default_value = "sim")]
        domain: String,
    },
    /// Re-render the markdown/CSV bundle from evaluation CSVs.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
    },
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if matches!(cli.command, Command::PrintDefaultConfig) {
        print!("{}", RunConfig::default().to_toml());
        return Ok(());
    }

    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Ok(env_seed) = std::env::var("TACREFINE_SEED") {
        config.seed = env_seed
            .parse()
            .map_err(|_| anyhow!("TACREFINE_SEED must be an integer, got {env_seed:?}"))?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    println!("seed: {}", config.seed);

    std::fs::create_dir_all(&cli.workdir)
        .with_context(|| format!("creating workdir {}", cli.workdir.display()))?;

    match cli.command {
        Command::PrintDefaultConfig => unreachable!("handled above"),
        Command::GenData => cmd_gen_data(&config, &cli.workdir),
        Command::Train { policy } => cmd_train(&config, &cli.workdir, &policy),
        Command::Refine { params, init_pose, target_pose, domain, pgm } => {
            cmd_refine(&config, &cli.workdir, &params, &init_pose, &target_pose, &domain, pgm)
        }
        Command::Eval { params_a, params_b } => cmd_eval(&config, &cli.workdir, &params_a, &params_b),
        Command::Track { params, schedule, target_pose, init_pose, domain } => cmd_track(
            &config,
            &cli.workdir,
            &params,
            &schedule,
            &target_pose,
            init_pose.as_deref(),
            &domain,
        ),
        Command::Report { input, output } => cmd_report(&config, &cli.workdir, &input, &output),
    }
}

fn resolve(workdir: &Path, path: impl AsRef<Path>) -> PathBuf {
    let path = path.as_ref();
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        workdir.join(path)
    }
}

/// The real-analogue sensor of a run is fixed by the config seed, so data
/// generation, fine-tuning and evaluation all see the same perturbed sensor.
fn real_sensor(config: &RunConfig) -> SensorParams {
    perturb_params(
        &config.sensor.nominal(),
        config.sensor.severity,
        derive_seed(config.seed, "real-params"),
    )
}

fn domain_sensor(config: &RunConfig, domain: &str) -> Result<SensorParams> {
    match domain {
        "sim" => Ok(config.sensor.nominal()),
        "real-analogue" => Ok(real_sensor(config)),
        other => bail!("unknown domain {other:?} (use sim or real-analogue)"),
    }
}

fn parse_pose(text: &str) -> Result<Pose6> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 6 {
        bail!("pose must have 6 comma-separated components, got {}", parts.len());
    }
    let mut pose = [0.0; 6];
    for (i, part) in parts.iter().enumerate() {
        pose[i] = part
            .trim()
            .parse()
            .map_err(|_| anyhow!("pose component {i} is not a number: {part:?}"))?;
    }
    Ok(Pose6(pose))
}

fn cmd_gen_data(config: &RunConfig, workdir: &Path) -> Result<()> {
    let hash = config.config_hash();
    let object = config.object.to_object()?;
    let hand = HandConfig::default();
    let nominal = config.sensor.nominal();

    let bounds = config.bounds.to_bounds();
    let poses = sample_grid(&bounds)?;
    let sim_records = collect(
        &poses,
        &object,
        &hand,
        &nominal,
        DomainTag::Sim,
        derive_seed(config.seed, "collect-sim"),
    )?;
    let sim = Dataset {
        domain: DomainTag::Sim,
        bounds,
        sensor_hash: nominal.content_hash(),
        seed: config.seed,
        config_hash: hash,
        records: sim_records,
    };
    let sim_path = resolve(workdir, &config.paths.sim_dataset);
    sim.save(&sim_path)?;
    sim.export_csv(&sim_path.with_extension("csv"))?;
    println!("sim: {} records ({} poses) -> {}", sim.records.len(), poses.len(), sim_path.display());

    let real_params = real_sensor(config);
    let real_bounds = config.bounds.to_real_bounds();
    let real_poses = sample_grid(&real_bounds)?;
    let real_records = collect(
        &real_poses,
        &object,
        &hand,
        &real_params,
        DomainTag::RealAnalogue,
        derive_seed(config.seed, "collect-real"),
    )?;
    let real = Dataset {
        domain: DomainTag::RealAnalogue,
        bounds: real_bounds,
        sensor_hash: real_params.content_hash(),
        seed: config.seed,
        config_hash: hash,
        records: real_records,
    };
    let real_path = resolve(workdir, &config.paths.real_dataset);
    real.save(&real_path)?;
    real.export_csv(&real_path.with_extension("csv"))?;
    println!(
        "real-analogue: {} records ({} poses) -> {}",
        real.records.len(),
        real_poses.len(),
        real_path.display()
    );
    Ok(())
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

fn cmd_train(config: &RunConfig, workdir: &Path, policy: &str) -> Result<()> {
    let hash = config.config_hash();
    let sim = Dataset::load(&resolve(workdir, &config.paths.sim_dataset))
        .context("loading sim dataset (run gen-data first)")?;
    let train_config = config.train.to_train_config(config.seed);

    let (params, mut report, out_path) = match policy {
        "a" => {
            let (p, r) = train_policy_a(&sim, train_config)?;
            (p, r, resolve(workdir, &config.paths.params_a))
        }
        "b" => {
            let real = Dataset::load(&resolve(workdir, &config.paths.real_dataset))
                .context("loading real-analogue dataset (run gen-data first)")?;
            let (p, r) = train_policy_b(&sim, &real, train_config)?;
            (p, r, resolve(workdir, &config.paths.params_b))
        }
        other => bail!("unknown policy {other:?} (use a or b)"),
    };

    save_params(&params, hash, &out_path)?;
    report.params_path = Some(out_path.display().to_string());
    let loss_path = suffixed(&resolve(workdir, &config.paths.loss_log), &format!("_{policy}"));
    report.write_loss_csv(hash, &loss_path)?;

    let first = report.losses.first().copied().unwrap_or(0.0);
    let last = report.losses.last().copied().unwrap_or(0.0);
    println!(
        "policy {}: {} steps in {:.1}s, loss {:.5} -> {:.6}",
        policy,
        report.losses.len(),
        report.wall_time_secs,
        first,
        last
    );
    println!("params: {}", out_path.display());
    println!("loss log: {}", loss_path.display());
    Ok(())
}

fn load_policy(path: &Path) -> Result<PolicyParams> {
    let (params, _) = load_params(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(params)
}

#[allow(clippy::too_many_arguments)]
fn cmd_refine(
    config: &RunConfig,
    workdir: &Path,
    params: &Path,
    init_pose: &str,
    target_pose: &str,
    domain: &str,
    pgm: bool,
) -> Result<()> {
    let hash = config.config_hash();
    let policy = load_policy(&resolve(workdir, params))?;
    let object = config.object.to_object()?;
    let hand = HandConfig::default();
    let sensor = domain_sensor(config, domain)?;
    let init = parse_pose(init_pose)?;
    let target = parse_pose(target_pose)?;

    let demo = demonstrate_target(
        &WristPose::from_pose6(&target),
        &object,
        &hand,
        &sensor,
        derive_seed(config.seed, "demo"),
    )?;
    let refine_config =
        config.refine.to_refine_config(derive_seed(config.seed, "refine"), &config.bounds.to_bounds());
    let traj = refine_loop(
        &WristPose::from_pose6(&init),
        &demo,
        &policy,
        &object,
        &hand,
        &sensor,
        &refine_config,
    )?;

    let dir = resolve(workdir, &config.paths.trajectories_dir);
    let csv = dir.join("refine.csv");
    traj.write_csv(hash, &csv)?;
    if pgm {
        traj.write_pgm_dir(hash, &dir.join("refine_pgm"))?;
    }
    let (dpos, drot) = traj.final_errors();
    println!(
        "refine: {} steps, final dpos {:.4} m, drot {:.4} rad, stop: {}",
        traj.steps.len().saturating_sub(1),
        dpos,
        drot,
        traj.reason.as_str()
    );
    println!("trajectory: {}", csv.display());
    Ok(())
}

fn cmd_eval(config: &RunConfig, workdir: &Path, params_a: &Path, params_b: &Path) -> Result<()> {
    let hash = config.config_hash();
    let policy_a = load_policy(&resolve(workdir, params_a))?;
    let policy_b = load_policy(&resolve(workdir, params_b))?;

    // The comparison runs in the real-analogue domain, where the sim-to-real
    // gap shows up.
    let mut env = EvalEnv::new(real_sensor(config));
    env.object = config.object.to_object()?;
    env.bounds = config.bounds.to_bounds();
    env.thresholds = config.eval.to_thresholds(&config.refine);
    env.step_clamp = config.refine.step_clamp;
    env.stop_on_threshold = config.refine.stop_on_threshold;

    let scenarios = ScenarioSet::default_three(config.seed);
    let comparison = compare_policies(
        &policy_a,
        &policy_b,
        &scenarios,
        &env,
        derive_seed(config.seed, "compare"),
    )?;
    let matrix = pose_matrix(&policy_b, &env, derive_seed(config.seed, "matrix"))?;
    let generalization = if config.eval.generalization {
        Some(generalization_eval(
            &policy_b,
            &[
                ("rounded_rect".to_string(), ObjectModel::default_rounded_rect()),
                ("bar".to_string(), ObjectModel::default_bar()),
            ],
            &env,
            derive_seed(config.seed, "generalization"),
        )?)
    } else {
        None
    };

    let out_dir = resolve(workdir, &config.paths.reports_dir);
    let files =
        render_report(Some(&comparison), Some(&matrix), generalization.as_ref(), hash, &out_dir)?;
    println!(
        "aggregate success: policy a {:.0}%, policy b {:.0}%; matrix (policy b) {:.0}%",
        100.0 * comparison.aggregate_a,
        100.0 * comparison.aggregate_b,
        100.0 * matrix.aggregate_success()
    );
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn parse_schedule(path: &Path) -> Result<MotionSchedule> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading schedule {}", path.display()))?;
    let mut events = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("at_step") {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            bail!("schedule line {}: expected at_step,dim,offset", lineno + 1);
        }
        let at_step: usize = parts[0]
            .parse()
            .map_err(|_| anyhow!("schedule line {}: bad step {:?}", lineno + 1, parts[0]))?;
        let dim = match parts[1] {
            "x" => 0,
            "y" => 1,
            "z" => 2,
            "roll" => 3,
            "pitch" => 4,
            "yaw" => 5,
            other => bail!("schedule line {}: unknown dim {other:?}", lineno + 1),
        };
        let value: f64 = parts[2]
            .parse()
            .map_err(|_| anyhow!("schedule line {}: bad offset {:?}", lineno + 1, parts[2]))?;
        let mut offset = [0.0; 6];
        offset[dim] = value;
        events.push(MotionEvent { at_step, offset });
    }
    Ok(MotionSchedule { events })
}

fn cmd_track(
    config: &RunConfig,
    workdir: &Path,
    params: &Path,
    schedule: &Path,
    target_pose: &str,
    init_pose: Option<&str>,
    domain: &str,
) -> Result<()> {
    let hash = config.config_hash();
    let policy = load_policy(&resolve(workdir, params))?;
    let object = config.object.to_object()?;
    let hand = HandConfig::default();
    let sensor = domain_sensor(config, domain)?;
    let schedule = parse_schedule(&resolve(workdir, schedule))?;
    let target = parse_pose(target_pose)?;
    let init = match init_pose {
        Some(text) => parse_pose(text)?,
        None => target,
    };

    let demo = demonstrate_target(
        &WristPose::from_pose6(&target),
        &object,
        &hand,
        &sensor,
        derive_seed(config.seed, "demo"),
    )?;
    let refine_config =
        config.refine.to_refine_config(derive_seed(config.seed, "track"), &config.bounds.to_bounds());
    let traj = track(
        &WristPose::from_pose6(&init),
        &demo,
        &schedule,
        &policy,
        &object,
        &hand,
        &sensor,
        &refine_config,
    )?;

    let csv = resolve(workdir, &config.paths.trajectories_dir).join("track.csv");
    traj.write_csv(hash, &csv)?;
    let (dpos, drot) = traj.final_errors();
    println!(
        "track: {} steps, {} motion events, final dpos {:.4} m, drot {:.4} rad",
        traj.steps.len().saturating_sub(1),
        schedule.events.len(),
        dpos,
        drot
    );
    println!("trajectory: {}", csv.display());
    Ok(())
}

fn read_csv_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect())
}

fn parse_dim(s: &str) -> Result<PoseDim> {
    PoseDim::ALL
        .into_iter()
        .find(|d| d.as_str() == s)
        .ok_or_else(|| anyhow!("unknown pose dimension {s:?}"))
}

fn cmd_report(config: &RunConfig, workdir: &Path, input: &Path, output: &Path) -> Result<()> {
    let hash = config.config_hash();
    let input = resolve(workdir, input);
    let output = resolve(workdir, output);

    let comparison_path = input.join("comparison.csv");
    let comparison = if comparison_path.exists() {
        // Rows come in (group, policy) pairs: a then b.
        let rows = read_csv_rows(&comparison_path)?;
        let mut groups: Vec<GroupComparison> = Vec::new();
        for pair in rows.chunks(2) {
            if pair.len() != 2 || pair[0][0] != pair[1][0] {
                bail!("comparison.csv: expected a/b row pairs per group");
            }
            let metrics = |row: &[String]| -> Result<PolicyMetrics> {
                let steps = row[4].trim();
                Ok(PolicyMetrics {
                    mean_pos: row[2].parse()?,
                    mean_rot: row[3].parse()?,
                    mean_steps: if steps.is_empty() { None } else { Some(steps.parse()?) },
                    success: row[5].parse()?,
                    trials: 1,
                })
            };
            groups.push(GroupComparison {
                label: pair[0][0].clone(),
                policy_a: metrics(&pair[0])?,
                policy_b: metrics(&pair[1])?,
            });
        }
        let mean = |f: &dyn Fn(&GroupComparison) -> f64| {
            groups.iter().map(|g| f(g)).sum::<f64>() / groups.len().max(1) as f64
        };
        Some(ComparisonReport {
            aggregate_a: mean(&|g| g.policy_a.success),
            aggregate_b: mean(&|g| g.policy_b.success),
            groups,
            curves: Vec::new(),
        })
    } else {
        None
    };

    let matrix_path = input.join("pose_matrix.csv");
    let matrix = if matrix_path.exists() {
        let rows = read_csv_rows(&matrix_path)?;
        let mut cells = Vec::new();
        for row in rows {
            let goal = parse_dim(&row[0])?;
            let init = parse_dim(&row[1])?;
            let steps = row[2].trim();
            cells.push(MatrixCell {
                goal,
                init,
                metrics: PolicyMetrics {
                    mean_steps: if steps.is_empty() { None } else { Some(steps.parse()?) },
                    success: row[3].parse()?,
                    mean_pos: row[4].parse()?,
                    mean_rot: row[5].parse()?,
                    trials: 1,
                },
                curve: CurveData {
                    label: format!("init_{}_goal_{}", init.as_str(), goal.as_str()),
                    mean_pos: Vec::new(),
                    mean_rot: Vec::new(),
                },
            });
        }
        Some(MatrixReport { cells })
    } else {
        None
    };

    if comparison.is_none() && matrix.is_none() {
        bail!("no comparison.csv or pose_matrix.csv under {}", input.display());
    }
    let files = render_report(comparison.as_ref(), matrix.as_ref(), None, hash, &output)?;
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
