//! Evaluation: pose-error metrics, steps-to-threshold, success rates, the
//! Policy A/B comparison protocol, the 16-pair pose matrix, unseen-shape
//! generalization and report rendering.

use crate::dataset::PoseBounds;
use crate::error::{Error, Result};
use crate::math::{Pose6, Quat, Vec3};
use crate::net::PolicyParams;
use crate::refine::{
    demonstrate_target, refine_loop, RefineConfig, Trajectory,
};
use crate::rng::{derive_seed, derive_seed_indexed, DetRng};
use crate::tacsim::{close_fingers, HandConfig, ObjectModel, SensorParams, WristPose};
use std::path::{Path, PathBuf};

/// Success thresholds and trial counts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricThresholds {
    pub eps_pos: f64,
    pub eps_rot: f64,
    pub max_steps: usize,
    pub trials_r: usize,
}

impl Default for MetricThresholds {
    fn default() -> Self {
        MetricThresholds { eps_pos: 0.005, eps_rot: 0.05, max_steps: 10, trials_r: 5 }
    }
}

impl MetricThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_pos > 0.0) || !(self.eps_rot > 0.0) {
            return Err(Error::InvalidParams("thresholds must be > 0".into()));
        }
        if self.max_steps < 1 || self.trials_r < 1 {
            return Err(Error::InvalidParams("max_steps and trials_r must be >= 1".into()));
        }
        Ok(())
    }
}

/// Quaternion geodesic distance `2 * arccos(|<a, b>|)`, double-cover safe.
pub fn quat_geodesic(a: &Quat, b: &Quat) -> f64 {
    2.0 * a.dot(*b).abs().clamp(0.0, 1.0).acos()
}

/// 6-DoF pose error: Euclidean position error and quaternion geodesic
/// orientation error. Quaternions must be unit within 1e-6.
pub fn pose_error(p: Vec3, p_g: Vec3, q: Quat, q_g: Quat) -> Result<(f64, f64)> {
    for quat in [&q, &q_g] {
        if (quat.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidParams(format!(
                "quaternion norm {} is not unit",
                quat.norm()
            )));
        }
    }
    Ok(((p - p_g).norm(), quat_geodesic(&q, &q_g)))
}

/// First step index at which both thresholds hold, if any.
pub fn steps_to_threshold(traj: &Trajectory, thr: &MetricThresholds) -> Option<usize> {
    traj.steps
        .iter()
        .find(|s| s.delta_pos <= thr.eps_pos && s.delta_rot <= thr.eps_rot)
        .map(|s| s.step)
}

/// Outcome of one refinement trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub label: String,
    /// Final position error (meters).
    pub delta_pos: f64,
    /// Final orientation error (radians).
    pub delta_rot: f64,
    pub steps_to_threshold: Option<usize>,
    pub success: bool,
}

/// Score a trajectory: success requires the final errors inside both
/// thresholds and the thresholds reached within the horizon.
pub fn evaluate_trial(traj: &Trajectory, thr: &MetricThresholds, label: &str) -> TrialResult {
    let (dpos, drot) = traj.final_errors();
    let s_star = steps_to_threshold(traj, thr);
    TrialResult {
        label: label.to_string(),
        delta_pos: dpos,
        delta_rot: drot,
        steps_to_threshold: s_star,
        success: dpos <= thr.eps_pos && drot <= thr.eps_rot && s_star.is_some(),
    }
}

/// Fraction of successful trials.
pub fn success_rate(trials: &[TrialResult]) -> Result<f64> {
    if trials.is_empty() {
        return Err(Error::EmptyInput("no trials".into()));
    }
    Ok(trials.iter().filter(|t| t.success).count() as f64 / trials.len() as f64)
}

/// The simulated environment and protocol settings an evaluation runs in.
#[derive(Clone, Debug)]
pub struct EvalEnv {
    pub object: ObjectModel,
    pub hand: HandConfig,
    /// Evaluation-domain sensor (typically the real-analogue parameters).
    pub sensor: SensorParams,
    pub bounds: PoseBounds,
    pub thresholds: MetricThresholds,
    pub step_clamp: [f64; 6],
    pub stop_on_threshold: bool,
}

impl EvalEnv {
    pub fn new(sensor: SensorParams) -> Self {
        EvalEnv {
            object: ObjectModel::default_disc(),
            hand: HandConfig::default(),
            sensor,
            bounds: PoseBounds::default(),
            thresholds: MetricThresholds::default(),
            step_clamp: RefineConfig::default().step_clamp,
            stop_on_threshold: false,
        }
    }

    fn refine_config(&self, seed: u64) -> RefineConfig {
        RefineConfig {
            max_steps: self.thresholds.max_steps,
            step_clamp: self.step_clamp,
            pose_box: self.bounds.trust_box(1.2),
            eps_pos: self.thresholds.eps_pos,
            eps_rot: self.thresholds.eps_rot,
            stop_on_threshold: self.stop_on_threshold,
            seed,
        }
    }
}

/// A trial plus its full rollout (kept for the error-vs-step curves).
#[derive(Clone, Debug)]
pub struct TrialRun {
    pub result: TrialResult,
    pub trajectory: Trajectory,
}

/// Run one (initial, target) refinement trial in the given environment.
pub fn run_trial(
    env: &EvalEnv,
    policy: &PolicyParams,
    init: &Pose6,
    target: &Pose6,
    seed: u64,
    label: &str,
) -> Result<TrialRun> {
    let demo = demonstrate_target(
        &WristPose::from_pose6(target),
        &env.object,
        &env.hand,
        &env.sensor,
        derive_seed(seed, "demo"),
    )?;
    let trajectory = refine_loop(
        &WristPose::from_pose6(init),
        &demo,
        policy,
        &env.object,
        &env.hand,
        &env.sensor,
        &env.refine_config(seed),
    )?;
    let result = evaluate_trial(&trajectory, &env.thresholds, label);
    Ok(TrialRun { result, trajectory })
}

/// Uniform pose inside the bounds that actually touches the object.
pub fn sample_contact_pose(env: &EvalEnv, rng: &mut DetRng) -> Result<Pose6> {
    for _ in 0..64 {
        let pose = env.bounds.sample_uniform(rng);
        let state = close_fingers(&WristPose::from_pose6(&pose), &env.object, &env.hand)?;
        if state.any_contact() {
            return Ok(pose);
        }
    }
    Err(Error::NonContact("could not sample a contactable pose within bounds".into()))
}

/// One scenario group: a label and the seed that fixes its pose pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioGroup {
    pub label: String,
    pub seed: u64,
}

/// The comparison scenarios; by default three groups of randomly selected
/// initial/target pose pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSet {
    pub groups: Vec<ScenarioGroup>,
}

impl ScenarioSet {
    pub fn default_three(seed: u64) -> Self {
        ScenarioSet {
            groups: ["I", "II", "III"]
                .iter()
                .enumerate()
                .map(|(k, label)| ScenarioGroup {
                    label: label.to_string(),
                    seed: derive_seed_indexed(seed, "scenario-group", k as u64),
                })
                .collect(),
        }
    }
}

/// Aggregated metrics of one policy on one scenario or cell.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyMetrics {
    pub mean_pos: f64,
    pub mean_rot: f64,
    /// Mean steps-to-threshold over the trials that reached it.
    pub mean_steps: Option<f64>,
    pub success: f64,
    pub trials: usize,
}

fn summarize(trials: &[TrialResult]) -> PolicyMetrics {
    let finite: Vec<&TrialResult> =
        trials.iter().filter(|t| t.delta_pos.is_finite()).collect();
    let mean = |f: &dyn Fn(&TrialResult) -> f64| -> f64 {
        if finite.is_empty() {
            f64::NAN
        } else {
            finite.iter().map(|t| f(t)).sum::<f64>() / finite.len() as f64
        }
    };
    let reached: Vec<usize> = trials.iter().filter_map(|t| t.steps_to_threshold).collect();
    PolicyMetrics {
        mean_pos: mean(&|t| t.delta_pos),
        mean_rot: mean(&|t| t.delta_rot),
        mean_steps: if reached.is_empty() {
            None
        } else {
            Some(reached.iter().sum::<usize>() as f64 / reached.len() as f64)
        },
        success: trials.iter().filter(|t| t.success).count() as f64 / trials.len().max(1) as f64,
        trials: trials.len(),
    }
}

/// Mean error-vs-step curve over a set of rollouts.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveData {
    pub label: String,
    pub mean_pos: Vec<f64>,
    pub mean_rot: Vec<f64>,
}

fn mean_curve(label: &str, trajectories: &[&Trajectory]) -> CurveData {
    let horizon = trajectories.iter().map(|t| t.steps.len()).max().unwrap_or(0);
    let mut mean_pos = Vec::with_capacity(horizon);
    let mut mean_rot = Vec::with_capacity(horizon);
    for s in 0..horizon {
        let at: Vec<(f64, f64)> = trajectories
            .iter()
            .filter_map(|t| t.steps.get(s).map(|e| (e.delta_pos, e.delta_rot)))
            .collect();
        let n = at.len().max(1) as f64;
        mean_pos.push(at.iter().map(|v| v.0).sum::<f64>() / n);
        mean_rot.push(at.iter().map(|v| v.1).sum::<f64>() / n);
    }
    CurveData { label: label.to_string(), mean_pos, mean_rot }
}

/// Side-by-side metrics of both policies on one group.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupComparison {
    pub label: String,
    pub policy_a: PolicyMetrics,
    pub policy_b: PolicyMetrics,
}

/// The Policy A vs Policy B comparison over all scenario groups.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub groups: Vec<GroupComparison>,
    /// Pooled success rate over every trial of each policy.
    pub aggregate_a: f64,
    pub aggregate_b: f64,
    pub curves: Vec<CurveData>,
}

/// Run R trials per policy per scenario group and tabulate all metrics.
/// Both policies see identical pose pairs and render-noise seeds.
pub fn compare_policies(
    policy_a: &PolicyParams,
    policy_b: &PolicyParams,
    scenarios: &ScenarioSet,
    env: &EvalEnv,
    seed: u64,
) -> Result<ComparisonReport> {
    env.thresholds.validate()?;
    if scenarios.groups.is_empty() {
        return Err(Error::EmptyInput("no scenario groups".into()));
    }
    let mut groups = Vec::new();
    let mut curves = Vec::new();
    let mut all_a = Vec::new();
    let mut all_b = Vec::new();
    for group in &scenarios.groups {
        let group_seed = derive_seed(seed, &format!("scenario:{}", group.label)) ^ group.seed;
        let mut rng = DetRng::new(group_seed);
        let init = sample_contact_pose(env, &mut rng)?;
        let target = sample_contact_pose(env, &mut rng)?;

        let mut runs_a = Vec::new();
        let mut runs_b = Vec::new();
        for r in 0..env.thresholds.trials_r {
            let trial_seed = derive_seed_indexed(group_seed, "trial", r as u64);
            let label = format!("group {} trial {r}", group.label);
            runs_a.push(run_trial(env, policy_a, &init, &target, trial_seed, &label)?);
            runs_b.push(run_trial(env, policy_b, &init, &target, trial_seed, &label)?);
        }
        for (suffix, runs) in [("a", &runs_a), ("b", &runs_b)] {
            let trajs: Vec<&Trajectory> = runs.iter().map(|r| &r.trajectory).collect();
            curves.push(mean_curve(&format!("group_{}_policy_{suffix}", group.label), &trajs));
        }
        groups.push(GroupComparison {
            label: group.label.clone(),
            policy_a: summarize(&runs_a.iter().map(|r| r.result.clone()).collect::<Vec<_>>()),
            policy_b: summarize(&runs_b.iter().map(|r| r.result.clone()).collect::<Vec<_>>()),
        });
        all_a.extend(runs_a.into_iter().map(|r| r.result));
        all_b.extend(runs_b.into_iter().map(|r| r.result));
    }
    Ok(ComparisonReport {
        groups,
        aggregate_a: success_rate(&all_a)?,
        aggregate_b: success_rate(&all_b)?,
        curves,
    })
}

/// The four sampled pose dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoseDim {
    Pitch,
    Roll,
    Y,
    Z,
}

impl PoseDim {
    pub const ALL: [PoseDim; 4] = [PoseDim::Pitch, PoseDim::Roll, PoseDim::Y, PoseDim::Z];

    pub fn as_str(&self) -> &'static str {
        match self {
            PoseDim::Pitch => "pitch",
            PoseDim::Roll => "roll",
            PoseDim::Y => "y",
            PoseDim::Z => "z",
        }
    }

    /// Index into the `(x, y, z, roll, pitch, yaw)` pose vector.
    fn pose_index(&self) -> usize {
        match self {
            PoseDim::Pitch => 4,
            PoseDim::Roll => 3,
            PoseDim::Y => 1,
            PoseDim::Z => 2,
        }
    }

    fn lower(&self, bounds: &PoseBounds) -> f64 {
        match self {
            PoseDim::Pitch => bounds.pitch.lower,
            PoseDim::Roll => bounds.roll.lower,
            PoseDim::Y => bounds.y.lower,
            PoseDim::Z => bounds.z.lower,
        }
    }

    fn upper(&self, bounds: &PoseBounds) -> f64 {
        match self {
            PoseDim::Pitch => bounds.pitch.upper,
            PoseDim::Roll => bounds.roll.upper,
            PoseDim::Y => bounds.y.upper,
            PoseDim::Z => bounds.z.upper,
        }
    }
}

/// One pose-matrix cell: initial at `init`'s negative extreme, goal at
/// `goal`'s positive extreme.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixCell {
    pub goal: PoseDim,
    pub init: PoseDim,
    pub metrics: PolicyMetrics,
    pub curve: CurveData,
}

/// 4x4 dimension-combination table (goal-major order).
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixReport {
    pub cells: Vec<MatrixCell>,
}

impl MatrixReport {
    pub fn cell(&self, goal: PoseDim, init: PoseDim) -> Option<&MatrixCell> {
        self.cells.iter().find(|c| c.goal == goal && c.init == init)
    }

    /// Pooled success rate over all cells and trials.
    pub fn aggregate_success(&self) -> f64 {
        let total: usize = self.cells.iter().map(|c| c.metrics.trials).sum();
        if total == 0 {
            return 0.0;
        }
        let weighted: f64 =
            self.cells.iter().map(|c| c.metrics.success * c.metrics.trials as f64).sum();
        weighted / total as f64
    }
}

fn run_matrix_cell(
    policy: &PolicyParams,
    env: &EvalEnv,
    goal: PoseDim,
    init: PoseDim,
    seed: u64,
) -> Result<MatrixCell> {
    let mut init_pose = Pose6([env.bounds.x_fixed, 0.0, 0.0, 0.0, 0.0, env.bounds.yaw_fixed]);
    init_pose.0[init.pose_index()] = init.lower(&env.bounds);
    let mut goal_pose = Pose6([env.bounds.x_fixed, 0.0, 0.0, 0.0, 0.0, env.bounds.yaw_fixed]);
    goal_pose.0[goal.pose_index()] = goal.upper(&env.bounds);

    let mut runs = Vec::new();
    for r in 0..env.thresholds.trials_r {
        // Cell seeds depend only on the dimensions and trial index so the
        // generalization control (same object, same seed) reproduces them.
        let trial_seed =
            derive_seed(seed, &format!("cell:{}:{}:{r}", goal.as_str(), init.as_str()));
        let label = format!("init {}- goal {}+ trial {r}", init.as_str(), goal.as_str());
        runs.push(run_trial(env, policy, &init_pose, &goal_pose, trial_seed, &label)?);
    }
    let trajs: Vec<&Trajectory> = runs.iter().map(|r| &r.trajectory).collect();
    let curve = mean_curve(&format!("init_{}_goal_{}", init.as_str(), goal.as_str()), &trajs);
    let results: Vec<TrialResult> = runs.into_iter().map(|r| r.result).collect();
    Ok(MatrixCell { goal, init, metrics: summarize(&results), curve })
}

/// Run all 16 dimension-pair combinations, R trials each.
pub fn pose_matrix(policy: &PolicyParams, env: &EvalEnv, seed: u64) -> Result<MatrixReport> {
    env.thresholds.validate()?;
    let mut cells = Vec::with_capacity(16);
    for goal in PoseDim::ALL {
        for init in PoseDim::ALL {
            cells.push(run_matrix_cell(policy, env, goal, init, seed)?);
        }
    }
    Ok(MatrixReport { cells })
}

/// Pose-matrix results restricted to roll/y pairs on one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeReport {
    pub label: String,
    pub cells: Vec<MatrixCell>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizationReport {
    pub shapes: Vec<ShapeReport>,
}

/// Repeat the roll/y sub-matrix on shapes excluded from training. The cell
/// seeds match [`pose_matrix`], so running the training shape as a control
/// reproduces its matrix cells exactly.
pub fn generalization_eval(
    policy: &PolicyParams,
    objects: &[(String, ObjectModel)],
    env: &EvalEnv,
    seed: u64,
) -> Result<GeneralizationReport> {
    if objects.is_empty() {
        return Err(Error::EmptyInput("no objects for generalization".into()));
    }
    let dims = [PoseDim::Roll, PoseDim::Y];
    let mut shapes = Vec::new();
    for (label, object) in objects {
        let mut shape_env = env.clone();
        shape_env.object = object.clone();
        let mut cells = Vec::new();
        for goal in dims {
            for init in dims {
                cells.push(run_matrix_cell(policy, &shape_env, goal, init, seed)?);
            }
        }
        shapes.push(ShapeReport { label: label.clone(), cells });
    }
    Ok(GeneralizationReport { shapes })
}

fn fmt_steps(m: &PolicyMetrics) -> String {
    match m.mean_steps {
        Some(s) => format!("{s:.1}"),
        None => String::new(),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn comparison_csv(report: &ComparisonReport, config_hash: u64) -> String {
    let mut out = format!("# config_hash={config_hash:016x}\n");
    out.push_str("group,policy,mean_dpos,mean_drot,mean_steps,success_rate\n");
    for g in &report.groups {
        for (name, m) in [("a", &g.policy_a), ("b", &g.policy_b)] {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                g.label,
                name,
                m.mean_pos,
                m.mean_rot,
                fmt_steps(m),
                m.success
            ));
        }
    }
    out
}

fn matrix_csv(cells: &[MatrixCell], config_hash: u64, shape: Option<&str>) -> String {
    let mut out = format!("# config_hash={config_hash:016x}\n");
    if shape.is_some() {
        out.push_str("shape,goal_dim,init_dim,mean_steps,success_rate,mean_dpos,mean_drot\n");
    } else {
        out.push_str("goal_dim,init_dim,mean_steps,success_rate,mean_dpos,mean_drot\n");
    }
    for c in cells {
        if let Some(s) = shape {
            out.push_str(&format!("{s},"));
        }
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.goal.as_str(),
            c.init.as_str(),
            fmt_steps(&c.metrics),
            c.metrics.success,
            c.metrics.mean_pos,
            c.metrics.mean_rot
        ));
    }
    out
}

fn curve_csv(curve: &CurveData, config_hash: u64) -> String {
    let mut out = format!("# config_hash={config_hash:016x}\n");
    out.push_str("step,mean_dpos,mean_drot\n");
    for (s, (p, r)) in curve.mean_pos.iter().zip(curve.mean_rot.iter()).enumerate() {
        out.push_str(&format!("{s},{p},{r}\n"));
    }
    out
}

fn markdown_report(
    comparison: Option<&ComparisonReport>,
    matrix: Option<&MatrixReport>,
    generalization: Option<&GeneralizationReport>,
    config_hash: u64,
) -> String {
    let mut md = String::from("# Grasp refinement evaluation\n\n");
    md.push_str(&format!("config_hash: `{config_hash:016x}`\n\n"));
    if let Some(report) = comparison {
        md.push_str("## Policy comparison\n\n");
        md.push_str("| Group | Metric | Policy A | Policy B |\n|---|---|---|---|\n");
        for g in &report.groups {
            md.push_str(&format!(
                "| {} | position error (m) | {:.4} | {:.4} |\n",
                g.label, g.policy_a.mean_pos, g.policy_b.mean_pos
            ));
            md.push_str(&format!(
                "| {} | orientation error (rad) | {:.4} | {:.4} |\n",
                g.label, g.policy_a.mean_rot, g.policy_b.mean_rot
            ));
            md.push_str(&format!(
                "| {} | steps | {} | {} |\n",
                g.label,
                fmt_steps(&g.policy_a),
                fmt_steps(&g.policy_b)
            ));
            md.push_str(&format!(
                "| {} | success rate | {:.0}% | {:.0}% |\n",
                g.label,
                100.0 * g.policy_a.success,
                100.0 * g.policy_b.success
            ));
        }
        md.push_str(&format!(
            "\nAggregate success: Policy A {:.0}%, Policy B {:.0}%.\n\n",
            100.0 * report.aggregate_a,
            100.0 * report.aggregate_b
        ));
    }
    if let Some(report) = matrix {
        md.push_str("## Pose matrix (success % / mean steps)\n\n");
        md.push_str("| Goal(+) \\ Init(-) | pitch | roll | y | z |\n|---|---|---|---|---|\n");
        for goal in PoseDim::ALL {
            md.push_str(&format!("| {} |", goal.as_str()));
            for init in PoseDim::ALL {
                if let Some(c) = report.cell(goal, init) {
                    md.push_str(&format!(
                        " {:.0}% / {} |",
                        100.0 * c.metrics.success,
                        fmt_steps(&c.metrics)
                    ));
                } else {
                    md.push_str(" |");
                }
            }
            md.push('\n');
        }
        md.push_str(&format!(
            "\nAggregate success: {:.0}%.\n\n",
            100.0 * report.aggregate_success()
        ));
    }
    if let Some(report) = generalization {
        md.push_str("## Unseen-shape generalization (roll/y pairs)\n\n");
        for shape in &report.shapes {
            md.push_str(&format!("### {}\n\n", shape.label));
            md.push_str("| Goal(+) | Init(-) | Success | Steps |\n|---|---|---|---|\n");
            for c in &shape.cells {
                md.push_str(&format!(
                    "| {} | {} | {:.0}% | {} |\n",
                    c.goal.as_str(),
                    c.init.as_str(),
                    100.0 * c.metrics.success,
                    fmt_steps(&c.metrics)
                ));
            }
            md.push('\n');
        }
    }
    md
}

/// Write the CSV/markdown report bundle. Returns the files written.
pub fn render_report(
    comparison: Option<&ComparisonReport>,
    matrix: Option<&MatrixReport>,
    generalization: Option<&GeneralizationReport>,
    config_hash: u64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if comparison.is_none() && matrix.is_none() && generalization.is_none() {
        return Err(Error::EmptyInput("nothing to report".into()));
    }
    let mut written = Vec::new();
    let mut emit = |path: PathBuf, text: String| -> Result<()> {
        write_text(&path, &text)?;
        written.push(path);
        Ok(())
    };
    if let Some(report) = comparison {
        if report.groups.is_empty() {
            return Err(Error::EmptyInput("comparison has no groups".into()));
        }
        emit(out_dir.join("comparison.csv"), comparison_csv(report, config_hash))?;
        for curve in &report.curves {
            emit(
                out_dir.join(format!("curves/comparison_{}.csv", curve.label)),
                curve_csv(curve, config_hash),
            )?;
        }
    }
    if let Some(report) = matrix {
        if report.cells.is_empty() {
            return Err(Error::EmptyInput("matrix has no cells".into()));
        }
        emit(out_dir.join("pose_matrix.csv"), matrix_csv(&report.cells, config_hash, None))?;
        for cell in &report.cells {
            emit(
                out_dir.join(format!("curves/matrix_{}.csv", cell.curve.label)),
                curve_csv(&cell.curve, config_hash),
            )?;
        }
    }
    if let Some(report) = generalization {
        let mut text = String::new();
        for shape in &report.shapes {
            if text.is_empty() {
                text = matrix_csv(&shape.cells, config_hash, Some(&shape.label));
            } else {
                let body = matrix_csv(&shape.cells, config_hash, Some(&shape.label));
                // Skip the comment and header lines of subsequent shapes.
                text.push_str(body.split_inclusive('\n').skip(2).collect::<String>().as_str());
            }
        }
        emit(out_dir.join("generalization.csv"), text)?;
    }
    emit(
        out_dir.join("report.md"),
        markdown_report(comparison, matrix, generalization, config_hash),
    )?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::init_params;
    use crate::refine::{StopReason, TrajectoryStep};
    use crate::tacsim::{perturb_params, TactileImage, SENSOR_COLS, SENSOR_ROWS};

    #[test]
    fn pose_error_identity() {
        let q = Quat::from_euler(0.1, -0.2, 0.3);
        let (dpos, drot) = pose_error(Vec3::ZERO, Vec3::ZERO, q, q).unwrap();
        assert_eq!(dpos, 0.0);
        assert!(drot.abs() < 1e-9);
    }

    #[test]
    fn pose_error_double_cover() {
        let q = Quat::from_euler(0.4, 0.1, -0.2);
        let neg = Quat::new(-q.w, -q.x, -q.y, -q.z);
        let (_, drot) = pose_error(Vec3::ZERO, Vec3::ZERO, q, neg).unwrap();
        assert!(drot.abs() < 1e-9);
    }

    #[test]
    fn pose_error_3_4_5_triangle() {
        let (dpos, _) = pose_error(
            Vec3::ZERO,
            Vec3::new(0.003, 0.004, 0.0),
            Quat::IDENTITY,
            Quat::IDENTITY,
        )
        .unwrap();
        assert!((dpos - 0.005).abs() < 1e-12);
    }

    #[test]
    fn pose_error_rejects_non_unit_quaternion() {
        let bad = Quat::new(1.0, 0.1, 0.0, 0.0);
        assert!(pose_error(Vec3::ZERO, Vec3::ZERO, bad, Quat::IDENTITY).is_err());
    }

    #[test]
    fn pose_error_invariances() {
        let mut rng = DetRng::new(5);
        for _ in 0..100 {
            let q = Quat::from_euler(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
            let g = Quat::from_euler(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
            let flip = Quat::new(-q.w, -q.x, -q.y, -q.z);
            assert_eq!(quat_geodesic(&q, &g), quat_geodesic(&flip, &g));
            let p = Vec3::new(rng.uniform(-1.0, 1.0), 0.2, -0.3);
            let pg = Vec3::new(0.4, rng.uniform(-1.0, 1.0), 0.1);
            let shift = Vec3::new(5.0, -2.0, 1.0);
            let (d1, _) = pose_error(p, pg, q, g).unwrap();
            let (d2, _) = pose_error(p + shift, pg + shift, q, g).unwrap();
            assert!((d1 - d2).abs() < 1e-12);
            let r = quat_geodesic(&q, &g);
            assert!((0.0..=std::f64::consts::PI + 1e-12).contains(&r));
        }
    }

    fn blank_step(step: usize, dpos: f64, drot: f64) -> TrajectoryStep {
        let img = || TactileImage::zeros(SENSOR_ROWS, SENSOR_COLS);
        TrajectoryStep {
            step,
            pose: Pose6::default(),
            wrist: WristPose::canonical(),
            joints: [0.0; 6],
            images: [img(), img(), img()],
            predicted: [0.0; 6],
            applied: [0.0; 6],
            delta_pos: dpos,
            delta_rot: drot,
        }
    }

    fn synthetic_trajectory(errors: &[(f64, f64)]) -> Trajectory {
        let img = || TactileImage::zeros(SENSOR_ROWS, SENSOR_COLS);
        Trajectory {
            steps: errors
                .iter()
                .enumerate()
                .map(|(s, (p, r))| blank_step(s, *p, *r))
                .collect(),
            target_pose: WristPose::canonical(),
            target_images: [img(), img(), img()],
            reason: StopReason::HorizonReached,
        }
    }

    #[test]
    fn steps_to_threshold_fixtures() {
        let thr = MetricThresholds::default();
        let inside = synthetic_trajectory(&[(0.001, 0.01)]);
        assert_eq!(steps_to_threshold(&inside, &thr), Some(0));

        let never = synthetic_trajectory(&[(0.05, 0.2), (0.03, 0.1), (0.02, 0.08)]);
        assert_eq!(steps_to_threshold(&never, &thr), None);

        // Position crosses at step 2 but both conditions only hold at 3.
        let crossing = synthetic_trajectory(&[
            (0.03, 0.2),
            (0.01, 0.1),
            (0.004, 0.06),
            (0.002, 0.01),
            (0.001, 0.005),
        ]);
        assert_eq!(steps_to_threshold(&crossing, &thr), Some(3));
    }

    #[test]
    fn steps_to_threshold_is_prefix_stable() {
        let thr = MetricThresholds::default();
        let errors = [(0.03, 0.2), (0.01, 0.1), (0.004, 0.03), (0.002, 0.01)];
        let full = synthetic_trajectory(&errors);
        let full_star = steps_to_threshold(&full, &thr);
        let mut last: Option<usize> = None;
        for len in 1..=errors.len() {
            let prefix = synthetic_trajectory(&errors[..len]);
            let star = steps_to_threshold(&prefix, &thr);
            if let (Some(a), Some(b)) = (last, star) {
                assert!(b >= a || a == b);
            }
            if star.is_some() {
                assert_eq!(star, full_star);
            }
            last = star.or(last);
        }
    }

    fn trial(success: bool) -> TrialResult {
        TrialResult {
            label: String::new(),
            delta_pos: if success { 0.001 } else { 0.02 },
            delta_rot: 0.01,
            steps_to_threshold: success.then_some(3),
            success,
        }
    }

    #[test]
    fn success_rate_fixtures() {
        let all: Vec<TrialResult> = (0..5).map(|_| trial(true)).collect();
        assert_eq!(success_rate(&all).unwrap(), 1.0);
        let four: Vec<TrialResult> =
            (0..5).map(|i| trial(i != 0)).collect();
        assert_eq!(success_rate(&four).unwrap(), 0.8);
        assert!(success_rate(&[]).is_err());
    }

    #[test]
    fn success_is_monotone_in_thresholds() {
        let traj = synthetic_trajectory(&[(0.03, 0.2), (0.008, 0.06), (0.004, 0.04)]);
        let tight = MetricThresholds { eps_pos: 0.002, eps_rot: 0.02, ..Default::default() };
        let medium = MetricThresholds::default();
        let loose = MetricThresholds { eps_pos: 0.01, eps_rot: 0.1, ..Default::default() };
        let s_tight = evaluate_trial(&traj, &tight, "t").success as u8;
        let s_medium = evaluate_trial(&traj, &medium, "m").success as u8;
        let s_loose = evaluate_trial(&traj, &loose, "l").success as u8;
        assert!(s_tight <= s_medium && s_medium <= s_loose);
    }

    fn quick_env() -> EvalEnv {
        let sensor = perturb_params(&crate::tacsim::SensorParams::nominal(), 0.2, 11);
        let mut env = EvalEnv::new(sensor);
        env.thresholds.trials_r = 2;
        env.thresholds.max_steps = 4;
        env
    }

    #[test]
    fn identical_policies_give_identical_rows() {
        let env = quick_env();
        let policy = init_params(31);
        let scenarios = ScenarioSet::default_three(9);
        let report = compare_policies(&policy, &policy, &scenarios, &env, 3).unwrap();
        assert_eq!(report.groups.len(), 3);
        for g in &report.groups {
            assert_eq!(g.policy_a, g.policy_b);
        }
        assert_eq!(report.aggregate_a, report.aggregate_b);
        // Deterministic under the same seed.
        let again = compare_policies(&policy, &policy, &scenarios, &env, 3).unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn pose_matrix_shape_and_untrained_sanity() {
        let env = quick_env();
        let policy = init_params(33);
        let report = pose_matrix(&policy, &env, 5).unwrap();
        assert_eq!(report.cells.len(), 16);
        for goal in PoseDim::ALL {
            for init in PoseDim::ALL {
                let cell = report.cell(goal, init).unwrap();
                assert_eq!(cell.metrics.trials, env.thresholds.trials_r);
            }
        }
        // An untrained policy should be nowhere near reliable.
        assert!(
            report.aggregate_success() <= 0.25,
            "untrained policy aggregate {}",
            report.aggregate_success()
        );
    }

    #[test]
    fn generalization_control_matches_matrix() {
        let env = quick_env();
        let policy = init_params(35);
        let matrix = pose_matrix(&policy, &env, 7).unwrap();
        let gen = generalization_eval(
            &policy,
            &[("disc".to_string(), env.object.clone())],
            &env,
            7,
        )
        .unwrap();
        for cell in &gen.shapes[0].cells {
            let reference = matrix.cell(cell.goal, cell.init).unwrap();
            assert_eq!(cell.metrics, reference.metrics);
        }
    }

    fn tmp_dir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("tacrefine-eval-{}-{name}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn report_bundle_round_trips() {
        let env = quick_env();
        let policy = init_params(37);
        let scenarios = ScenarioSet::default_three(1);
        let comparison = compare_policies(&policy, &policy, &scenarios, &env, 1).unwrap();
        let matrix = pose_matrix(&policy, &env, 1).unwrap();
        let dir = tmp_dir("report");
        let files =
            render_report(Some(&comparison), Some(&matrix), None, 0xcafe, &dir).unwrap();
        assert!(files.iter().any(|f| f.ends_with("comparison.csv")));
        assert!(files.iter().any(|f| f.ends_with("pose_matrix.csv")));
        assert!(files.iter().any(|f| f.ends_with("report.md")));

        let text = std::fs::read_to_string(dir.join("comparison.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "# config_hash=000000000000cafe");
        assert_eq!(
            lines.next().unwrap(),
            "group,policy,mean_dpos,mean_drot,mean_steps,success_rate"
        );
        assert_eq!(text.lines().count(), 2 + 2 * comparison.groups.len());

        let matrix_text = std::fs::read_to_string(dir.join("pose_matrix.csv")).unwrap();
        assert_eq!(matrix_text.lines().count(), 2 + 16);

        // Stable output: rendering twice gives identical bytes.
        let dir2 = tmp_dir("report2");
        render_report(Some(&comparison), Some(&matrix), None, 0xcafe, &dir2).unwrap();
        assert_eq!(
            std::fs::read(dir.join("report.md")).unwrap(),
            std::fs::read(dir2.join("report.md")).unwrap()
        );
    }

    #[test]
    fn empty_report_is_rejected() {
        let dir = tmp_dir("empty");
        assert!(render_report(None, None, None, 0, &dir).is_err());
    }
}
