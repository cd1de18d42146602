//! Aggregation of `attack_eval.csv` files from one or more runs into
//! mean ± std tables across seeds, grouped by pipeline round.
//!
//! Runs must be verifiable (manifest hashes intact) and scientifically
//! compatible (equal `fingerprint.txt`); mixing different datasets,
//! models, or attack parameter sets is refused.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::manifest::verify_manifest;
use crate::runner::ATTACK_EVAL_HEADER;
use crate::CliError;

/// Column order of `report.csv`.
pub const REPORT_HEADER: &str =
    "round,attack,metric,sparsity_w,sparsity_a,benign_acc_mean,benign_acc_std,value_mean,value_std,seeds";

struct RawRow {
    seed: u64,
    round: usize,
    sparsity_w: f64,
    sparsity_a: f64,
    benign_acc: f64,
    attack: String,
    metric: String,
    value: f64,
}

fn parse_rows(text: &str, source: &Path) -> Result<Vec<RawRow>, CliError> {
    let bad = |line: usize, why: &str| {
        CliError::Stage(format!("{}:{line}: {why}", source.display()))
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == ATTACK_EVAL_HEADER => {}
        _ => return Err(bad(1, "missing or wrong attack_eval.csv header")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(bad(i + 1, "expected 10 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 1, "bad number"));
        rows.push(RawRow {
            seed: f[1].parse().map_err(|_| bad(i + 1, "bad seed"))?,
            round: f[2].parse().map_err(|_| bad(i + 1, "bad round"))?,
            sparsity_w: num(f[3])?,
            sparsity_a: num(f[4])?,
            benign_acc: num(f[5])?,
            attack: f[6].to_string(),
            metric: f[7].to_string(),
            value: num(f[8])?,
        });
    }
    Ok(rows)
}

/// Mean and sample standard deviation (0 for a single value).
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Verifies and reads the runs, writes `report.csv` to `out`, and returns
/// the human-readable table. Re-running on the same inputs produces
/// byte-identical output.
pub fn aggregate(dirs: &[PathBuf], out: &Path) -> Result<String, CliError> {
    if dirs.is_empty() {
        return Err(CliError::Config("no run directories given".into()));
    }
    let mut fingerprint: Option<String> = None;
    let mut rows = Vec::new();
    for dir in dirs {
        verify_manifest(dir).map_err(|e| CliError::Stage(format!("{}: {e}", dir.display())))?;
        let fp_path = dir.join("fingerprint.txt");
        let fp = std::fs::read_to_string(&fp_path)
            .map_err(|e| CliError::Stage(format!("{}: {e}", fp_path.display())))?
            .trim()
            .to_string();
        match &fingerprint {
            None => fingerprint = Some(fp),
            Some(first) if *first == fp => {}
            Some(first) => {
                return Err(CliError::Config(format!(
                    "incompatible runs: {} was produced by a different experiment\n  it:    {fp}\n  first: {first}",
                    dir.display()
                )))
            }
        }
        let csv_path = dir.join("attack_eval.csv");
        let text = std::fs::read_to_string(&csv_path)
            .map_err(|e| CliError::Stage(format!("{}: {e}", csv_path.display())))?;
        rows.extend(parse_rows(&text, &csv_path)?);
    }
    if rows.is_empty() {
        return Err(CliError::Stage("no metric rows to aggregate".into()));
    }

    // Per-round benign accuracy, deduplicated by seed (it repeats on every
    // attack row of the same model).
    let mut acc_by_round: BTreeMap<usize, BTreeMap<u64, f64>> = BTreeMap::new();
    for r in &rows {
        acc_by_round
            .entry(r.round)
            .or_default()
            .entry(r.seed)
            .or_insert(r.benign_acc);
    }

    let mut groups: BTreeMap<(usize, String, String), Vec<&RawRow>> = BTreeMap::new();
    for r in &rows {
        groups
            .entry((r.round, r.attack.clone(), r.metric.clone()))
            .or_default()
            .push(r);
    }

    let mut csv = String::from(REPORT_HEADER);
    csv.push('\n');
    let mut table = format!("{:<6} {:<34} {:<6} {:>10} {:>22}\n", "round", "attack", "metric", "sparsity", "value (mean ± std)");
    for ((round, attack, metric), members) in &groups {
        let values: Vec<f64> = members.iter().map(|r| r.value).collect();
        let sw: Vec<f64> = members.iter().map(|r| r.sparsity_w).collect();
        let sa: Vec<f64> = members.iter().map(|r| r.sparsity_a).collect();
        let accs: Vec<f64> = acc_by_round[round].values().copied().collect();
        let (v_mean, v_std) = mean_std(&values);
        let (a_mean, a_std) = mean_std(&accs);
        let (sw_mean, _) = mean_std(&sw);
        let (sa_mean, _) = mean_std(&sa);
        let _ = writeln!(
            csv,
            "{round},{attack},{metric},{sw_mean:.6},{sa_mean:.6},{a_mean:.6},{a_std:.6},{v_mean:.6},{v_std:.6},{}",
            values.len()
        );
        let _ = writeln!(
            table,
            "{round:<6} {attack:<34} {metric:<6} {sw_mean:>10.4} {:>22}",
            format!("{v_mean:.4} ± {v_std:.4} ({})", values.len())
        );
    }
    std::fs::write(out, &csv)
        .map_err(|e| CliError::Stage(format!("cannot write {}: {e}", out.display())))?;
    Ok(table)
}
