//! End-to-end runs of the `sparserob` binary on small synthetic tasks:
//! exit codes, artifact layout, determinism, manifest verification, and
//! report aggregation.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sparserob(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparserob"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn assert_code(out: &Output, expect: i32, context: &str) {
    let code = out.status.code().unwrap_or(-1);
    assert_eq!(
        code,
        expect,
        "{context}: expected exit {expect}, got {code}\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

/// A small two-Gaussian task with an MLP, two attacks, and a two-round
/// pruning schedule. `eps` is parameterized so tests can build
/// deliberately incompatible configs.
fn figure_config(out_dir: &Path, seeds: &str, eps: f64) -> String {
    format!(
        r#"
output_dir = "{}"
seeds = {seeds}

[dataset]
kind = "synth"
mu_plus = [2.0, 1.0, 1.0, -1.0, 0.5, -0.5]
mu_minus = [-2.0, -1.0, -1.0, 1.0, -0.5, 0.5]
sigma = 0.6
n_per_class = 60
eval_n_per_class = 80

[model]
kind = "custom"
dims = [16, 2]

[train]
iterations = 800
batch_size = 16

[schedule]
rounds = 2
fraction = 0.4
retrain_iterations = 150

[[attacks]]
kind = "fgs"
eps = {eps}

[[attacks]]
kind = "deepfool"
max_iter = 50
"#,
        out_dir.display()
    )
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn figure_pipeline_artifacts_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("run_a");
    let out_b = tmp.path().join("run_b");
    let cfg = write_config(tmp.path(), "a.toml", &figure_config(&out_a, "[1, 2]", 0.1));

    let out = sparserob(&["figure", "--config", cfg.to_str().unwrap()]);
    assert_code(&out, 0, "figure run");

    let csv = read(&out_a.join("attack_eval.csv"));
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "model_id,seed,round,sparsity_w,sparsity_a,benign_acc,attack,metric,value,failures"
    );
    // 2 seeds × 3 pipeline stages (dense + 2 rounds) × 2 attacks.
    assert_eq!(lines.count(), 12, "csv rows:\n{csv}");
    assert!(csv.contains("fgs[eps=0.1],r_inf"));
    assert!(csv.contains("deepfool[max_iter=50 overshoot=0.02],r_2"));

    for name in [
        "manifest.csv",
        "fingerprint.txt",
        "curve_fgs_r_inf.svg",
        "curve_deepfool_r_2.svg",
        "curve_accuracy.svg",
        "seed1/pipeline_ledger.csv",
        "seed2/round_02_sparsity_0.6328.ckpt",
    ] {
        assert!(out_a.join(name).is_file(), "missing artifact {name}");
    }
    let reports: Vec<_> = std::fs::read_dir(out_a.join("reports"))
        .unwrap()
        .collect();
    assert_eq!(reports.len(), 6, "one text report per evaluated model");

    // The same config into a different directory reproduces the metric
    // CSV and the charts byte for byte.
    let cfg_b = write_config(tmp.path(), "b.toml", &figure_config(&out_b, "[1, 2]", 0.1));
    let out = sparserob(&["figure", "--config", cfg_b.to_str().unwrap()]);
    assert_code(&out, 0, "figure rerun");
    assert_eq!(csv, read(&out_b.join("attack_eval.csv")));
    assert_eq!(
        read(&out_a.join("curve_deepfool_r_2.svg")),
        read(&out_b.join("curve_deepfool_r_2.svg"))
    );
}

#[test]
fn report_aggregates_and_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("run");
    let cfg = write_config(tmp.path(), "exp.toml", &figure_config(&out_dir, "[1, 2]", 0.1));
    assert_code(
        &sparserob(&["figure", "--config", cfg.to_str().unwrap()]),
        0,
        "figure",
    );

    let out = sparserob(&["report", out_dir.to_str().unwrap()]);
    assert_code(&out, 0, "report");
    let report = read(&out_dir.join("report.csv"));
    let mut lines = report.lines();
    assert_eq!(
        lines.next().unwrap(),
        "round,attack,metric,sparsity_w,sparsity_a,benign_acc_mean,benign_acc_std,value_mean,value_std,seeds"
    );
    // 3 rounds × 2 attack/metric pairs, each aggregated over 2 seeds.
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6, "report rows:\n{report}");
    assert!(rows.iter().all(|r| r.ends_with(",2")), "two seeds per row");

    // Aggregating again must give identical bytes.
    assert_code(&sparserob(&["report", out_dir.to_str().unwrap()]), 0, "report rerun");
    assert_eq!(report, read(&out_dir.join("report.csv")));
}

#[test]
fn report_refuses_incompatible_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    // Same experiment shape, different attack strength: not aggregable.
    let cfg_a = write_config(tmp.path(), "a.toml", &figure_config(&out_a, "[1]", 0.1));
    let cfg_b = write_config(tmp.path(), "b.toml", &figure_config(&out_b, "[2]", 0.2));
    assert_code(&sparserob(&["figure", "--config", cfg_a.to_str().unwrap()]), 0, "run a");
    assert_code(&sparserob(&["figure", "--config", cfg_b.to_str().unwrap()]), 0, "run b");

    let out = sparserob(&["report", out_a.to_str().unwrap(), out_b.to_str().unwrap()]);
    assert_code(&out, 2, "mixed-fingerprint report");
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("incompatible"),
        "stderr names the problem"
    );
}

#[test]
fn tampered_artifacts_fail_verification() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("run");
    let cfg = write_config(tmp.path(), "exp.toml", &figure_config(&out_dir, "[1]", 0.1));
    assert_code(&sparserob(&["figure", "--config", cfg.to_str().unwrap()]), 0, "figure");

    let target = out_dir.join("attack_eval.csv");
    let mut text = read(&target);
    text.push(' ');
    std::fs::write(&target, text).unwrap();

    let out = sparserob(&["report", out_dir.to_str().unwrap()]);
    assert_code(&out, 3, "report on tampered run");
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("run");

    // Empty seed list.
    let cfg = write_config(tmp.path(), "empty.toml", &figure_config(&out_dir, "[]", 0.1));
    assert_code(
        &sparserob(&["figure", "--config", cfg.to_str().unwrap()]),
        2,
        "empty seeds",
    );

    // Unknown field (config schema is closed).
    let body = figure_config(&out_dir, "[1]", 0.1).replace("[train]", "typo_field = 3\n[train]");
    let cfg = write_config(tmp.path(), "unknown.toml", &body);
    assert_code(
        &sparserob(&["figure", "--config", cfg.to_str().unwrap()]),
        2,
        "unknown field",
    );

    // Missing file.
    assert_code(
        &sparserob(&["figure", "--config", tmp.path().join("nope.toml").to_str().unwrap()]),
        2,
        "missing config",
    );

    // Attack task without a models_dir.
    let cfg = write_config(tmp.path(), "nodir.toml", &figure_config(&out_dir, "[1]", 0.1));
    assert_code(
        &sparserob(&["attack", "--config", cfg.to_str().unwrap()]),
        2,
        "attack without models_dir",
    );
}

#[test]
fn train_then_attack_on_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let train_out = tmp.path().join("train");
    let attack_out = tmp.path().join("attack");
    let cfg = write_config(tmp.path(), "exp.toml", &figure_config(&train_out, "[1, 2]", 0.1));

    assert_code(&sparserob(&["train", "--config", cfg.to_str().unwrap()]), 0, "train");
    let models = train_out.join("models");
    assert!(models.join("custom_seed1.ckpt").is_file());
    assert!(models.join("custom_seed2.ckpt").is_file());
    let summary = read(&train_out.join("train_summary.csv"));
    assert_eq!(summary.lines().count(), 3, "header + one row per seed");

    let out = sparserob(&[
        "attack",
        "--config",
        cfg.to_str().unwrap(),
        "--models-dir",
        models.to_str().unwrap(),
        "--output-dir",
        attack_out.to_str().unwrap(),
    ]);
    assert_code(&out, 0, "attack");
    let csv = read(&attack_out.join("attack_eval.csv"));
    // 2 checkpoints × 2 attacks, with the seed recovered from the name.
    assert_eq!(csv.lines().count(), 5, "csv:\n{csv}");
    assert!(csv.contains("custom_seed2,2,0,"));
}

#[test]
fn theorem_checks_pass_on_separable_synth() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("run");
    let body = figure_config(&out_dir, "[1]", 0.1).replace(
        "kind = \"custom\"\ndims = [16, 2]",
        "kind = \"linear\"",
    );
    let cfg = write_config(tmp.path(), "exp.toml", &body);

    let out = sparserob(&["theorems", "--config", cfg.to_str().unwrap()]);
    assert_code(&out, 0, "theorems");
    let csv = read(&out_dir.join("theorem_checks.csv"));
    assert_eq!(csv.lines().next().unwrap(), "seed,check,value,reference,pass");
    assert!(csv.contains("1,r2_identity,"), "csv:\n{csv}");
    assert!(csv.contains("1,rinf_markov,"), "csv:\n{csv}");
    assert!(!csv.contains("fail"), "all checks pass on separable data:\n{csv}");
}

#[test]
fn lipschitz_certificates_and_masked_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let train_out = tmp.path().join("train");
    let lip_out = tmp.path().join("lip");
    let mut body = figure_config(&train_out, "[1]", 0.1);
    body.push_str(
        "\n[lipschitz]\nq = 2\nradius = 0.5\nprobe_count = 16\nmask_samples = 40\nalphas = [0.0, 0.5]\nexamples = 4\n",
    );
    let cfg = write_config(tmp.path(), "exp.toml", &body);

    assert_code(&sparserob(&["train", "--config", cfg.to_str().unwrap()]), 0, "train");
    let models = train_out.join("models");
    let out = sparserob(&[
        "lipschitz",
        "--config",
        cfg.to_str().unwrap(),
        "--models-dir",
        models.to_str().unwrap(),
        "--output-dir",
        lip_out.to_str().unwrap(),
    ]);
    assert_code(&out, 0, "lipschitz");

    let csv = read(&lip_out.join("lipschitz_estimates.csv"));
    assert_eq!(csv.lines().count(), 5, "header + one row per example:\n{csv}");
    // Probed difference quotients never exceed the certified bound.
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let bound: f64 = f[5].parse().unwrap();
        let sampled: f64 = f[7].parse().unwrap();
        assert!(
            sampled <= bound * (1.0 + 1e-9),
            "sampled quotient above bound: {line}"
        );
    }
    // The dense model gets a masked-bound study.
    let masked = read(&lip_out.join("masked_bounds_custom_seed1.csv"));
    assert_eq!(masked.lines().count(), 3, "header + one row per alpha:\n{masked}");
    assert!(masked.starts_with("alpha,q,mean_bound,std_bound,alive_fraction,samples,c1,c2"));
}
