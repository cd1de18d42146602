//! The experiment stages behind each subcommand. Every stage writes into
//! the config's output directory, records artifacts and stage outcomes in
//! the manifest, and keeps CSV bytes deterministic for fixed config+seeds.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sparserob_core::data::Dataset;
use sparserob_core::lipschitz::{
    guaranteed_radius, local_lipschitz_bound, masked_bound_sweep, norm_product_constants,
    write_masked_bound_csv,
};
use sparserob_core::nn::{load_checkpoint, save_checkpoint, sgd_train, Network};
use sparserob_core::robustness::{
    binary_margin_bounds, evaluate_r_2, evaluate_r_inf, multiclass_margin_bounds, LinfAttack,
    MetricEntry, RobustnessReport,
};
use sparserob_core::rng::derive_seed;
use sparserob_core::sparsity::{activation_sparsity, progressive_pipeline, weight_sparsity};

use crate::config::{ExperimentConfig, ParsedAttack, Task};
use crate::manifest::Manifest;
use crate::svg::{Chart, Series};
use crate::CliError;

/// Column order of `attack_eval.csv`.
pub const ATTACK_EVAL_HEADER: &str =
    "model_id,seed,round,sparsity_w,sparsity_a,benign_acc,attack,metric,value,failures";

/// Per-seed point lists for one chart: (seed, (x, y) points).
type SeedCurves = Vec<(u64, Vec<(f64, f64)>)>;

fn stage_err(e: sparserob_core::error::Error) -> CliError {
    CliError::Stage(e.to_string())
}

fn accuracy(net: &Network, ds: &Dataset) -> Result<f64, CliError> {
    net.accuracy(ds).map_err(stage_err)
}

fn prepare_output(cfg: &ExperimentConfig) -> Result<Manifest, CliError> {
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| CliError::Stage(format!("cannot create output dir: {e}")))?;
    let mut manifest = Manifest::new(&cfg.output_dir);
    let fp_path = cfg.output_dir.join("fingerprint.txt");
    std::fs::write(&fp_path, format!("{}\n", cfg.fingerprint()))
        .map_err(|e| CliError::Stage(e.to_string()))?;
    manifest.add_file(&fp_path)?;
    Ok(manifest)
}

fn finish(manifest: &Manifest) -> Result<(), CliError> {
    manifest.write()?;
    if manifest.any_stage_failed() {
        return Err(CliError::Stage(
            "one or more stages failed (see manifest.csv)".into(),
        ));
    }
    Ok(())
}

/// One evaluated model: all metric rows plus the per-model report.
struct ModelEval {
    report: RobustnessReport,
    rows: Vec<String>,
}

#[allow(clippy::too_many_arguments)]
fn evaluate_model(
    cfg: &ExperimentConfig,
    net: &Network,
    eval: &Dataset,
    attacks: &[ParsedAttack],
    model_id: &str,
    seed: u64,
    round: usize,
) -> Result<ModelEval, CliError> {
    let subset_len = cfg.eval_subset(eval);
    let indices: Vec<usize> = (0..subset_len).collect();
    let attack_set = eval.subset(&indices).map_err(stage_err)?;

    let benign_acc = accuracy(net, eval)?;
    let sw = weight_sparsity(net);
    let sa = activation_sparsity(net, &attack_set).map_err(stage_err)?;

    let mut entries = Vec::new();
    for attack in attacks {
        match attack {
            ParsedAttack::Linf {
                name,
                params,
                attack,
                eps,
            } => {
                let concrete = match attack {
                    LinfAttack::Fgs => LinfAttack::Fgs,
                    LinfAttack::Rfgs { .. } => LinfAttack::Rfgs {
                        seed: derive_seed(seed, &[round as u64]),
                    },
                };
                let value =
                    evaluate_r_inf(net, &attack_set, concrete, *eps).map_err(stage_err)?;
                entries.push(MetricEntry {
                    attack: name.to_string(),
                    params: params.clone(),
                    metric: "r_inf".into(),
                    value,
                    failures: 0,
                });
            }
            ParsedAttack::L2 {
                name,
                params,
                attack,
            } => {
                let r2 = evaluate_r_2(net, &attack_set, attack).map_err(stage_err)?;
                entries.push(MetricEntry {
                    attack: name.to_string(),
                    params: params.clone(),
                    metric: "r_2".into(),
                    value: r2.mean_distance,
                    failures: r2.failures,
                });
            }
        }
    }

    let mut rows = Vec::with_capacity(entries.len());
    for e in &entries {
        rows.push(format!(
            "{model_id},{seed},{round},{sw:.6},{sa:.6},{benign_acc:.6},{}[{}],{},{:.6},{}",
            e.attack, e.params, e.metric, e.value, e.failures
        ));
    }
    Ok(ModelEval {
        report: RobustnessReport {
            model_id: model_id.to_string(),
            benign_accuracy: benign_acc,
            weight_sparsity: sw,
            activation_sparsity: sa,
            entries,
        },
        rows,
    })
}

fn write_report_files(
    out_dir: &Path,
    manifest: &mut Manifest,
    eval: &ModelEval,
) -> Result<(), CliError> {
    let reports = out_dir.join("reports");
    std::fs::create_dir_all(&reports).map_err(|e| CliError::Stage(e.to_string()))?;
    let path = reports.join(format!("{}.txt", eval.report.model_id));
    std::fs::write(&path, eval.report.text_summary())
        .map_err(|e| CliError::Stage(e.to_string()))?;
    manifest.add_file(&path)?;
    Ok(())
}

fn write_attack_csv(
    out_dir: &Path,
    manifest: &mut Manifest,
    rows: &[String],
) -> Result<PathBuf, CliError> {
    let path = out_dir.join("attack_eval.csv");
    let mut text = String::from(ATTACK_EVAL_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    std::fs::write(&path, text).map_err(|e| CliError::Stage(e.to_string()))?;
    manifest.add_file(&path)?;
    Ok(path)
}

/// `train`: one dense model per seed, checkpointed, with a summary CSV.
pub fn run_train(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let mut manifest = prepare_output(cfg)?;
    let models_dir = cfg.output_dir.join("models");
    std::fs::create_dir_all(&models_dir).map_err(|e| CliError::Stage(e.to_string()))?;
    let mut summary = String::from("model_id,seed,benign_acc,weight_sparsity,activation_sparsity\n");

    for &seed in &cfg.seeds {
        let stage = format!("train_seed{seed}");
        match train_one(cfg, seed, &models_dir, &mut manifest) {
            Ok(line) => {
                summary.push_str(&line);
                manifest.add_stage(&stage, "ok");
            }
            Err(e) => {
                log::error!("{stage}: {e}");
                manifest.add_stage(&stage, &format!("failed: {e}"));
            }
        }
    }
    let path = cfg.output_dir.join("train_summary.csv");
    std::fs::write(&path, summary).map_err(|e| CliError::Stage(e.to_string()))?;
    manifest.add_file(&path)?;
    finish(&manifest)
}

fn train_one(
    cfg: &ExperimentConfig,
    seed: u64,
    models_dir: &Path,
    manifest: &mut Manifest,
) -> Result<String, CliError> {
    let (train, eval) = cfg.datasets(seed)?;
    let mut net = cfg.build_model(&train, seed)?;
    let train_cfg = cfg.train_config(seed);
    sgd_train(&mut net, &train, &train_cfg).map_err(stage_err)?;
    let model_id = format!("{}_seed{seed}", cfg.model.kind);
    let ckpt = models_dir.join(format!("{model_id}.ckpt"));
    save_checkpoint(&net, Some(&train_cfg), &ckpt).map_err(stage_err)?;
    manifest.add_file(&ckpt)?;
    let acc = accuracy(&net, &eval)?;
    let subset: Vec<usize> = (0..cfg.eval_subset(&eval)).collect();
    let sa = activation_sparsity(&net, &eval.subset(&subset).map_err(stage_err)?)
        .map_err(stage_err)?;
    Ok(format!(
        "{model_id},{seed},{acc:.6},{:.6},{sa:.6}\n",
        weight_sparsity(&net)
    ))
}

/// `prune-sweep`: dense training plus the progressive pipeline per seed.
/// Checkpoints land in `seed{N}/` subdirectories.
pub fn run_prune_sweep(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let mut manifest = prepare_output(cfg)?;
    let mut summary = String::from("seed,round,sparsity_w,checkpoint\n");
    for &seed in &cfg.seeds {
        let stage = format!("sweep_seed{seed}");
        match sweep_one(cfg, seed, &mut manifest) {
            Ok(rows) => {
                summary.push_str(&rows);
                manifest.add_stage(&stage, "ok");
            }
            Err(e) => {
                log::error!("{stage}: {e}");
                manifest.add_stage(&stage, &format!("failed: {e}"));
            }
        }
    }
    let path = cfg.output_dir.join("sweep_summary.csv");
    std::fs::write(&path, summary).map_err(|e| CliError::Stage(e.to_string()))?;
    manifest.add_file(&path)?;
    finish(&manifest)
}

fn sweep_one(
    cfg: &ExperimentConfig,
    seed: u64,
    manifest: &mut Manifest,
) -> Result<String, CliError> {
    let (train, _) = cfg.datasets(seed)?;
    let mut net = cfg.build_model(&train, seed)?;
    let train_cfg = cfg.train_config(seed);
    sgd_train(&mut net, &train, &train_cfg).map_err(stage_err)?;
    let dir = cfg.output_dir.join(format!("seed{seed}"));
    let run = progressive_pipeline(&net, &train, &cfg.prune_schedule(), &train_cfg, &dir)
        .map_err(stage_err)?;
    let mut rows = String::new();
    for s in &run.stages {
        manifest.add_file(&s.checkpoint)?;
        let _ = writeln!(
            rows,
            "{seed},{},{:.6},{}",
            s.round,
            s.sparsity,
            s.checkpoint.display()
        );
    }
    manifest.add_file(&run.ledger)?;
    Ok(rows)
}

fn checkpoints_in(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = std::fs::read_dir(&d)
            .map_err(|e| CliError::Stage(format!("read {}: {e}", d.display())))?;
        for entry in entries {
            let path = entry.map_err(|e| CliError::Stage(e.to_string()))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "ckpt") {
                found.push(path);
            }
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(CliError::Stage(format!(
            "no .ckpt files under {}",
            dir.display()
        )));
    }
    Ok(found)
}

/// Digits following the last `marker` occurrence anywhere in `text`.
fn trailing_number(text: &str, marker: &str) -> Option<u64> {
    let mut found = None;
    let mut from = 0;
    while let Some(pos) = text[from..].find(marker) {
        let start = from + pos + marker.len();
        let digits: String = text[start..]
            .chars()
            .take_while(char::is_ascii_digit)
            .collect();
        if let Ok(v) = digits.parse() {
            found = Some(v);
        }
        from = start;
    }
    found
}

/// Recovers the seed and pipeline round a checkpoint path encodes —
/// "seed3/round_07_…" or "linear_seed3.ckpt" — defaulting to 0.
fn parse_seed_and_round(path: &Path) -> (u64, usize) {
    let text = path.to_string_lossy();
    let seed = trailing_number(&text, "seed").unwrap_or(0);
    let round = trailing_number(&text, "round_").unwrap_or(0) as usize;
    (seed, round)
}

/// `attack`: evaluates every checkpoint under models_dir against the
/// configured attack set.
pub fn run_attack_eval(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let mut manifest = prepare_output(cfg)?;
    let models_dir = cfg.models_dir.as_ref().expect("validated");
    let checkpoints = checkpoints_in(models_dir)?;
    let attacks = cfg.parsed_attacks();
    let (_, eval) = cfg.datasets(cfg.seeds[0])?;

    let mut rows = Vec::new();
    for ckpt in &checkpoints {
        let model_id = ckpt
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .to_string();
        let stage = format!("attack_{model_id}");
        let (seed, round) = parse_seed_and_round(ckpt);
        let outcome = load_checkpoint(ckpt)
            .map_err(stage_err)
            .and_then(|(net, _)| {
                evaluate_model(cfg, &net, &eval, &attacks, &model_id, seed, round)
            });
        match outcome {
            Ok(eval_result) => {
                rows.extend(eval_result.rows.iter().cloned());
                write_report_files(&cfg.output_dir, &mut manifest, &eval_result)?;
                manifest.add_stage(&stage, "ok");
            }
            Err(e) => {
                log::error!("{stage}: {e}");
                manifest.add_stage(&stage, &format!("failed: {e}"));
            }
        }
    }
    write_attack_csv(&cfg.output_dir, &mut manifest, &rows)?;
    finish(&manifest)
}

/// `figure`: the full pipeline — train, prune-retrain sweep, attack every
/// stage, and render metric-versus-sparsity curves.
pub fn run_full_figure(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let mut manifest = prepare_output(cfg)?;
    let attacks = cfg.parsed_attacks();
    let mut rows: Vec<String> = Vec::new();
    // (attack label, metric) → seed → (sparsity, value) points.
    let mut curves: Vec<((String, String), SeedCurves)> = Vec::new();
    let mut acc_curve: SeedCurves = Vec::new();

    for &seed in &cfg.seeds {
        let stage = format!("figure_seed{seed}");
        match figure_one(cfg, seed, &attacks, &mut manifest) {
            Ok(evals) => {
                let mut acc_points = Vec::new();
                for me in &evals {
                    rows.extend(me.rows.iter().cloned());
                    acc_points.push((me.report.weight_sparsity, me.report.benign_accuracy));
                    for e in &me.report.entries {
                        let key = (format!("{}[{}]", e.attack, e.params), e.metric.clone());
                        let slot = match curves.iter_mut().find(|(k, _)| *k == key) {
                            Some((_, s)) => s,
                            None => {
                                curves.push((key, Vec::new()));
                                &mut curves.last_mut().expect("just pushed").1
                            }
                        };
                        match slot.iter_mut().find(|(s, _)| *s == seed) {
                            Some((_, pts)) => pts.push((me.report.weight_sparsity, e.value)),
                            None => slot
                                .push((seed, vec![(me.report.weight_sparsity, e.value)])),
                        }
                    }
                    write_report_files(&cfg.output_dir, &mut manifest, me)?;
                }
                acc_curve.push((seed, acc_points));
                manifest.add_stage(&stage, "ok");
            }
            Err(e) => {
                log::error!("{stage}: {e}");
                manifest.add_stage(&stage, &format!("failed: {e}"));
            }
        }
    }

    write_attack_csv(&cfg.output_dir, &mut manifest, &rows)?;

    // One SVG per (attack, metric), with one series per seed.
    for ((attack_label, metric), by_seed) in &curves {
        let name = attack_label
            .split('[')
            .next()
            .unwrap_or(attack_label)
            .to_string();
        let chart = Chart {
            title: format!("{metric} vs weight sparsity — {attack_label}"),
            x_label: "weight sparsity".into(),
            y_label: metric.clone(),
            series: by_seed
                .iter()
                .map(|(seed, pts)| Series {
                    label: format!("seed {seed}"),
                    points: pts.clone(),
                })
                .collect(),
        };
        let path = cfg.output_dir.join(format!("curve_{name}_{metric}.svg"));
        std::fs::write(&path, chart.render()).map_err(|e| CliError::Stage(e.to_string()))?;
        manifest.add_file(&path)?;
    }
    if !acc_curve.is_empty() {
        let chart = Chart {
            title: "benign accuracy vs weight sparsity".into(),
            x_label: "weight sparsity".into(),
            y_label: "accuracy".into(),
            series: acc_curve
                .iter()
                .map(|(seed, pts)| Series {
                    label: format!("seed {seed}"),
                    points: pts.clone(),
                })
                .collect(),
        };
        let path = cfg.output_dir.join("curve_accuracy.svg");
        std::fs::write(&path, chart.render()).map_err(|e| CliError::Stage(e.to_string()))?;
        manifest.add_file(&path)?;
    }
    finish(&manifest)
}

fn figure_one(
    cfg: &ExperimentConfig,
    seed: u64,
    attacks: &[ParsedAttack],
    manifest: &mut Manifest,
) -> Result<Vec<ModelEval>, CliError> {
    let (train, eval) = cfg.datasets(seed)?;
    let mut net = cfg.build_model(&train, seed)?;
    let train_cfg = cfg.train_config(seed);
    sgd_train(&mut net, &train, &train_cfg).map_err(stage_err)?;
    let dir = cfg.output_dir.join(format!("seed{seed}"));
    let run = progressive_pipeline(&net, &train, &cfg.prune_schedule(), &train_cfg, &dir)
        .map_err(stage_err)?;
    manifest.add_file(&run.ledger)?;
    let mut evals = Vec::with_capacity(run.stages.len());
    for s in &run.stages {
        manifest.add_file(&s.checkpoint)?;
        let model_id = format!("{}_seed{seed}_round{:02}", cfg.model.kind, s.round);
        evals.push(evaluate_model(
            cfg, &s.net, &eval, attacks, &model_id, seed, s.round,
        )?);
    }
    Ok(evals)
}

/// `lipschitz`: margin-bound certificates for eval examples of every
/// checkpoint, plus the random-masking bound study on dense models.
pub fn run_lipschitz(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let mut manifest = prepare_output(cfg)?;
    let models_dir = cfg.models_dir.as_ref().expect("validated");
    let checkpoints = checkpoints_in(models_dir)?;
    let (_, eval) = cfg.datasets(cfg.seeds[0])?;
    let q = cfg.lipschitz_q();
    let radius = cfg.lipschitz.radius.unwrap_or(0.5);
    let probes = cfg.lipschitz.probe_count.unwrap_or(64);
    let examples = cfg.lipschitz.examples.unwrap_or(8).min(eval.len());
    let mask_samples = cfg.lipschitz.mask_samples.unwrap_or(200);
    let alphas = cfg
        .lipschitz
        .alphas
        .clone()
        .unwrap_or_else(|| vec![0.0, 0.25, 0.5, 0.75]);
    let seed = cfg.seeds[0];

    let mut rows = String::from(
        "model_id,example_id,q,radius,k,bound,sup_active,sampled_quotient_max,c1,c2,guaranteed_radius\n",
    );
    for ckpt in &checkpoints {
        let model_id = ckpt
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .to_string();
        let stage = format!("lipschitz_{model_id}");
        let q_label = match q {
            sparserob_core::tensor::PNorm::L1 => "1",
            sparserob_core::tensor::PNorm::L2 => "2",
            _ => "inf",
        };
        let mut run = || -> Result<String, CliError> {
            let (net, _) = load_checkpoint(ckpt).map_err(stage_err)?;
            let c = net
                .forward(&eval.example(0))
                .map_err(stage_err)?
                .logits
                .len();
            if c < 2 {
                return Ok("skipped: single-logit model has no class-pair margin".into());
            }
            for i in 0..examples {
                let x = eval.example(i);
                let y_hat = net.predict(&x).map_err(stage_err)?;
                // Margin against the runner-up class.
                let logits = net.forward(&x).map_err(stage_err)?.logits;
                let mut k_best = 0usize;
                let mut best = f64::NEG_INFINITY;
                for (k0, &z) in logits.data().iter().enumerate() {
                    let k = k0 + 1;
                    if k != y_hat && z > best {
                        best = z;
                        k_best = k;
                    }
                }
                let est = local_lipschitz_bound(&net, &x, k_best, q, radius, probes, seed)
                    .map_err(stage_err)?;
                let consts = norm_product_constants(&net, y_hat, k_best).map_err(stage_err)?;
                let gamma =
                    guaranteed_radius(&net, &x, q, radius, probes, seed).map_err(stage_err)?;
                let _ = writeln!(
                    rows,
                    "{model_id},{i},{q_label},{radius},{k_best},{:.6e},{},{:.6e},{:.6e},{:.6e},{:.6e}",
                    est.bound, est.sup_active, est.sampled_quotient_max, consts.c1,
                    consts.c2, gamma
                );
            }
            // Random-masking study only on dense parents (masking must be
            // the only zero source).
            if weight_sparsity(&net) == 0.0 && examples > 0 {
                let x = eval.example(0);
                let y_hat = net.predict(&x).map_err(stage_err)?;
                let k = if y_hat == 1 { 2 } else { 1 };
                let stats = masked_bound_sweep(
                    &net,
                    &alphas,
                    &x,
                    k,
                    q,
                    radius,
                    probes,
                    mask_samples,
                    seed,
                )
                .map_err(stage_err)?;
                let consts = norm_product_constants(&net, y_hat, k).map_err(stage_err)?;
                let path = cfg
                    .output_dir
                    .join(format!("masked_bounds_{model_id}.csv"));
                write_masked_bound_csv(&path, q, &stats, consts).map_err(stage_err)?;
                manifest.add_file(&path)?;
            }
            Ok("ok".into())
        };
        match run() {
            Ok(status) => manifest.add_stage(&stage, &status),
            Err(e) => {
                log::error!("{stage}: {e}");
                manifest.add_stage(&stage, &format!("failed: {e}"));
            }
        }
    }
    let path = cfg.output_dir.join("lipschitz_estimates.csv");
    std::fs::write(&path, rows).map_err(|e| CliError::Stage(e.to_string()))?;
    manifest.add_file(&path)?;
    finish(&manifest)
}

/// `theorems`: margin-bound identities and dominance checks for linear
/// models on the configured dataset, one row per check per seed.
pub fn run_theorems(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let mut manifest = prepare_output(cfg)?;
    let eps = cfg
        .attacks
        .iter()
        .find_map(|a| a.eps)
        .unwrap_or(0.1);
    let mut rows = String::from("seed,check,value,reference,pass\n");

    for &seed in &cfg.seeds {
        let stage = format!("theorems_seed{seed}");
        match theorems_one(cfg, seed, eps) {
            Ok(lines) => {
                rows.push_str(&lines);
                manifest.add_stage(&stage, "ok");
            }
            Err(e) => {
                log::error!("{stage}: {e}");
                manifest.add_stage(&stage, &format!("failed: {e}"));
            }
        }
    }
    let path = cfg.output_dir.join("theorem_checks.csv");
    std::fs::write(&path, rows).map_err(|e| CliError::Stage(e.to_string()))?;
    manifest.add_file(&path)?;
    finish(&manifest)
}

fn theorems_one(cfg: &ExperimentConfig, seed: u64, eps: f64) -> Result<String, CliError> {
    let (train, eval) = cfg.datasets(seed)?;
    let mut net = cfg.build_model(&train, seed)?;
    let train_cfg = cfg.train_config(seed);
    sgd_train(&mut net, &train, &train_cfg).map_err(stage_err)?;

    let mut out = String::new();
    if let Some((w, b)) = net.as_linear_binary() {
        let bounds = binary_margin_bounds(&w, b, &eval, eps).map_err(stage_err)?;
        let rel = (bounds.r2_measured - bounds.r2_from_means).abs()
            / bounds.r2_from_means.max(1e-12);
        let _ = writeln!(
            out,
            "{seed},r2_identity,{:.6},{:.6},{}",
            bounds.r2_measured,
            bounds.r2_from_means,
            if rel <= 0.02 { "pass" } else { "fail" }
        );
        let r_inf = evaluate_r_inf(&net, &eval, LinfAttack::Fgs, eps).map_err(stage_err)?;
        let _ = writeln!(
            out,
            "{seed},rinf_markov,{:.6},{:.6},{}",
            r_inf,
            bounds.rinf_bound,
            if r_inf <= bounds.rinf_bound + 1e-12 {
                "pass"
            } else {
                "fail"
            }
        );
    } else if let Some((w, bias)) = net.as_linear_multiclass() {
        let bounds = multiclass_margin_bounds(&w, &bias, &eval, eps).map_err(stage_err)?;
        let assumptions_ok = bounds.assumptions.passes();
        let _ = writeln!(
            out,
            "{seed},assumptions,{:.6},0.01,{}",
            bounds.assumptions.corrected_fraction,
            if assumptions_ok { "pass" } else { "fail" }
        );
        let r2 = evaluate_r_2(&net, &eval, &Default::default()).map_err(stage_err)?;
        let _ = writeln!(
            out,
            "{seed},r2_bound,{:.6},{:.6},{}",
            r2.mean_distance,
            bounds.r2_bound,
            if !assumptions_ok {
                "skip"
            } else if r2.mean_distance <= bounds.r2_bound + 1e-12 {
                "pass"
            } else {
                "fail"
            }
        );
        let r_inf = evaluate_r_inf(&net, &eval, LinfAttack::Fgs, eps).map_err(stage_err)?;
        let _ = writeln!(
            out,
            "{seed},rinf_markov,{:.6},{:.6},{}",
            r_inf,
            bounds.rinf_bound,
            if !assumptions_ok {
                "skip"
            } else if r_inf <= bounds.rinf_bound + 1e-12 {
                "pass"
            } else {
                "fail"
            }
        );
    } else {
        return Err(CliError::Stage(
            "theorem checks need a linear model (model.kind = \"linear\")".into(),
        ));
    }
    Ok(out)
}

/// Dispatches one task.
pub fn run_task(cfg: &ExperimentConfig, task: Task) -> Result<(), CliError> {
    cfg.validate(task)?;
    match task {
        Task::Train => run_train(cfg),
        Task::PruneSweep => run_prune_sweep(cfg),
        Task::AttackEval => run_attack_eval(cfg),
        Task::LipschitzEval => run_lipschitz(cfg),
        Task::TheoremCheck => run_theorems(cfg),
        Task::FullFigure => run_full_figure(cfg),
    }
}
