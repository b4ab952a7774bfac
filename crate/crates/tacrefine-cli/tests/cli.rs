//! End-to-end command-line tests against a desk-scale configuration.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_tacrefine");

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("tacrefine-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Small but complete configuration: 2^4 grids, short training.
fn small_config(dir: &Path) -> PathBuf {
    let text = r#"
seed = 11

[bounds]
real_steps = 2
pitch = { lower = -0.15, upper = 0.15, steps = 2 }
roll = { lower = -0.15, upper = 0.15, steps = 2 }
y = { lower = -0.02, upper = 0.02, steps = 2 }
z = { lower = -0.02, upper = 0.02, steps = 2 }

[train]
batch_size = 8
steps_pretrain = 40
steps_finetune = 10

[refine]
max_steps = 4

[eval]
trials_r = 2
"#;
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(workdir: &Path, config: Option<&Path>, args: &[&str]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.arg("--workdir").arg(workdir);
    if let Some(cfg) = config {
        cmd.arg("--config").arg(cfg);
    }
    cmd.args(args);
    cmd.env_remove("TACREFINE_SEED");
    cmd.output().expect("binary runs")
}

fn assert_success(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn full_pipeline_smoke() {
    let dir = tmp_dir("pipeline");
    let config = small_config(&dir);

    let out = run(&dir, Some(&config), &["gen-data"]);
    assert_success(&out, "gen-data");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("seed: 11"), "must print the resolved seed: {stdout}");
    assert!(dir.join("sim.tacd").exists());
    assert!(dir.join("real.tacd").exists());
    assert!(dir.join("sim.csv").exists());

    assert_success(&run(&dir, Some(&config), &["train", "--policy", "a"]), "train a");
    assert_success(&run(&dir, Some(&config), &["train", "--policy", "b"]), "train b");
    assert!(dir.join("policy_a.tacw").exists());
    assert!(dir.join("policy_b.tacw").exists());
    assert!(dir.join("loss_a.csv").exists());
    assert!(dir.join("loss_b.csv").exists());

    let out = run(
        &dir,
        Some(&config),
        &["eval", "--params-a", "policy_a.tacw", "--params-b", "policy_b.tacw"],
    );
    assert_success(&out, "eval");
    assert!(dir.join("reports/comparison.csv").exists());
    assert!(dir.join("reports/pose_matrix.csv").exists());
    assert!(dir.join("reports/report.md").exists());

    // Every artifact embeds the config hash.
    for f in ["sim.csv", "loss_a.csv", "reports/comparison.csv"] {
        let text = std::fs::read_to_string(dir.join(f)).unwrap();
        assert!(text.starts_with("# config_hash="), "{f} missing config hash");
    }

    let out = run(
        &dir,
        Some(&config),
        &[
            "refine",
            "--params",
            "policy_b.tacw",
            "--init-pose",
            "0,-0.01,0.01,0.05,-0.05,0",
            "--target-pose",
            "0,0.01,0,0,0.05,0",
            "--pgm",
        ],
    );
    assert_success(&out, "refine");
    assert!(dir.join("trajectories/refine.csv").exists());
    assert!(dir.join("trajectories/refine_pgm/step00_finger0.pgm").exists());

    std::fs::write(dir.join("schedule.csv"), "at_step,dim,offset\n2,y,0.005\n").unwrap();
    let out = run(
        &dir,
        Some(&config),
        &[
            "track",
            "--params",
            "policy_b.tacw",
            "--schedule",
            "schedule.csv",
            "--target-pose",
            "0,0,0,0,0,0",
        ],
    );
    assert_success(&out, "track");
    assert!(dir.join("trajectories/track.csv").exists());

    let out = run(&dir, Some(&config), &["report", "--in", "reports", "--out", "reports2"]);
    assert_success(&out, "report");
    assert!(dir.join("reports2/report.md").exists());
}

#[test]
fn malformed_config_key_is_named() {
    let dir = tmp_dir("badkey");
    let path = dir.join("bad.toml");
    std::fs::write(&path, "[train]\nsteps_pretrian = 10\n").unwrap();
    let out = run(&dir, Some(&path), &["gen-data"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.lines().any(|l| l.starts_with("error:")), "one-line error: {stderr}");
    assert!(stderr.contains("steps_pretrian"), "error must name the key: {stderr}");
}

#[test]
fn same_seed_gives_byte_identical_artifacts() {
    let dir_a = tmp_dir("det-a");
    let dir_b = tmp_dir("det-b");
    let config_a = small_config(&dir_a);
    let config_b = small_config(&dir_b);

    for (dir, config) in [(&dir_a, &config_a), (&dir_b, &config_b)] {
        assert_success(&run(dir, Some(config), &["--seed", "7", "gen-data"]), "gen-data");
        assert_success(
            &run(dir, Some(config), &["--seed", "7", "train", "--policy", "a"]),
            "train",
        );
        assert_success(
            &run(
                dir,
                Some(config),
                &["--seed", "7", "eval", "--params-a", "policy_a.tacw", "--params-b", "policy_a.tacw"],
            ),
            "eval",
        );
    }

    for f in
        ["sim.tacd", "real.tacd", "policy_a.tacw", "loss_a.csv", "reports/comparison.csv", "reports/pose_matrix.csv", "reports/report.md"]
    {
        let a = std::fs::read(dir_a.join(f)).unwrap();
        let b = std::fs::read(dir_b.join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical-seed runs");
    }
}

#[test]
fn seed_precedence_env_and_flag() {
    let dir = tmp_dir("seed");
    let config = small_config(&dir);

    let mut cmd = Command::new(BIN);
    cmd.arg("--workdir").arg(&dir).arg("--config").arg(&config).arg("gen-data");
    cmd.env("TACREFINE_SEED", "99");
    let out = cmd.output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("seed: 99"));

    let mut cmd = Command::new(BIN);
    cmd.arg("--workdir").arg(&dir).arg("--config").arg(&config);
    cmd.arg("--seed").arg("123").arg("gen-data");
    cmd.env("TACREFINE_SEED", "99");
    let out = cmd.output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("seed: 123"));
}

#[test]
fn print_default_config_parses_back() {
    let dir = tmp_dir("defaults");
    let out = run(&dir, None, &["print-default-config"]);
    assert_success(&out, "print-default-config");
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("[train]"));
    let path = dir.join("default.toml");
    std::fs::write(&path, text.as_bytes()).unwrap();
    // The printed config must be loadable as-is.
    let out = run(&dir, Some(&path), &["print-default-config"]);
    assert_success(&out, "reload");
}

#[test]
fn missing_files_fail_cleanly() {
    let dir = tmp_dir("missing");
    let config = small_config(&dir);
    let out = run(&dir, Some(&config), &["train", "--policy", "a"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error:"), "{stderr}");

    let out = run(&dir, Some(&config), &["train", "--policy", "c"]);
    assert!(!out.status.success());
}
