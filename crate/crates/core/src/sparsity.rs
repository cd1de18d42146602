//! Magnitude pruning with persistent masks and the progressive
//! prune–retrain pipeline.
//!
//! Each pruning round zeroes, per layer, the fraction ρ of the *currently
//! surviving* weights with the smallest magnitudes, and marks them in the
//! layer's 0/1 mask so that retraining can never revive them. Iterating m
//! rounds drives the surviving fraction to (1−ρ)^m, i.e. a terminal
//! sparsity of 1 − (1−ρ)^m (up to integer rounding per layer).

use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{save_checkpoint, sgd_train, Layer, Network, TrainConfig};
use crate::rng::derive_seed;

/// Plan for a progressive prune–retrain run.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneSchedule {
    /// Number of prune–retrain rounds m (0 = keep only the dense model).
    pub rounds: usize,
    /// Fraction ρ of surviving weights pruned per round, in (0, 1).
    pub fraction: f64,
    /// SGD iterations after each pruning round.
    pub retrain_iterations: usize,
    /// Layer indices to prune (`None` = every prunable layer). Indices
    /// refer to the network's layer list, as in [`Network::prunable_layers`].
    pub layers_in_scope: Option<Vec<usize>>,
}

impl Default for PruneSchedule {
    fn default() -> Self {
        PruneSchedule {
            rounds: 16,
            fraction: 1.0 / 3.0,
            retrain_iterations: 10_000,
            layers_in_scope: None,
        }
    }
}

impl PruneSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "prune fraction must lie strictly inside (0, 1), got {}",
                self.fraction
            )));
        }
        Ok(())
    }

    /// The sparsity 1 − (1−ρ)^m that `rounds` rounds at `fraction` drive
    /// in-scope layers toward (exact up to per-layer integer rounding).
    pub fn terminal_sparsity(&self) -> f64 {
        1.0 - (1.0 - self.fraction).powi(self.rounds as i32)
    }
}

/// The layer indices a schedule scope resolves to, validated against the
/// network's prunable layers.
fn resolve_scope(net: &Network, scope: Option<&[usize]>) -> Result<Vec<usize>> {
    let prunable = net.prunable_layers();
    match scope {
        None => Ok(prunable),
        Some(indices) => {
            for &i in indices {
                if !prunable.contains(&i) {
                    return Err(Error::InvalidParameter(format!(
                        "layer {i} is not prunable (prunable layers: {prunable:?})"
                    )));
                }
            }
            Ok(indices.to_vec())
        }
    }
}

/// One round of magnitude pruning: per in-scope layer, the ⌊ρ·u⌋ smallest
/// surviving weights by |value| (u = current unmasked count) get value 0
/// and mask 0. Ties at the threshold magnitude fall to the lowest flat
/// index. Already-masked entries are never touched, so masks only ever
/// lose ones. A layer with no surviving weights is skipped with a warning.
pub fn prune_round(net: &Network, rho: f64, scope: Option<&[usize]>) -> Result<Network> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "prune fraction must lie strictly inside (0, 1), got {rho}"
        )));
    }
    let in_scope = resolve_scope(net, scope)?;
    let mut pruned = net.clone();
    for layer_idx in in_scope {
        let layer = &mut pruned.layers_mut()[layer_idx];
        let Some((weight, _, mask)) = layer.weights_mut() else {
            continue;
        };
        let mut survivors: Vec<(f64, usize)> = mask
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &m)| m != 0.0)
            .map(|(i, _)| (weight.data()[i].abs(), i))
            .collect();
        if survivors.is_empty() {
            log::warn!("prune_round: layer {layer_idx} has no surviving weights, skipping");
            continue;
        }
        let kill = (rho * survivors.len() as f64).floor() as usize;
        survivors.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, flat) in survivors.iter().take(kill) {
            mask.data_mut()[flat] = 0.0;
        }
        layer.apply_mask();
    }
    Ok(pruned)
}

/// Fraction of exactly-zero entries over the prunable weight tensors
/// (biases excluded — pruning never touches them).
pub fn weight_sparsity(net: &Network) -> f64 {
    let mut zeros = 0usize;
    let mut total = 0usize;
    for layer_idx in net.prunable_layers() {
        let (weight, _, _) = net.layers()[layer_idx].weights().expect("prunable");
        total += weight.len();
        zeros += weight.data().iter().filter(|&&v| v == 0.0).count();
    }
    if total == 0 {
        0.0
    } else {
        zeros as f64 / total as f64
    }
}

/// Mean fraction of exactly-zero entries in the input to the network's
/// final dense layer (the "deactivated neurons" feeding the classifier),
/// averaged over the dataset.
pub fn activation_sparsity(net: &Network, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::InvalidParameter(
            "activation sparsity needs a nonempty dataset".into(),
        ));
    }
    let last_dense = net
        .layers()
        .iter()
        .rposition(|l| matches!(l, Layer::Dense { .. }))
        .ok_or_else(|| {
            Error::UnsupportedArchitecture("the network has no dense layer".into())
        })?;

    let mut zeros = 0usize;
    let mut total = 0usize;
    let chunk = 256;
    let mut start = 0;
    while start < ds.len() {
        let end = (start + chunk).min(ds.len());
        let indices: Vec<usize> = (start..end).collect();
        let batch = crate::nn::gather_batch(ds, &indices);
        let trace = net.forward_batch(&batch)?;
        let feed = &trace.layer_inputs[last_dense];
        total += feed.len();
        zeros += feed.data().iter().filter(|&&v| v == 0.0).count();
        start = end;
    }
    Ok(zeros as f64 / total as f64)
}

/// One emitted model of a progressive pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineStage {
    /// 0 for the dense reference, then 1..=m for the pruned stages.
    pub round: usize,
    /// Weight sparsity of this stage's network.
    pub sparsity: f64,
    /// Where the checkpoint was written.
    pub checkpoint: PathBuf,
    pub net: Network,
}

/// All models produced by [`progressive_pipeline`], dense first.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub stages: Vec<PipelineStage>,
    /// The per-stage ledger CSV written next to the checkpoints.
    pub ledger: PathBuf,
}

/// Column order of the pipeline ledger.
pub const PIPELINE_LEDGER_HEADER: &str = "round,sparsity_w,checkpoint";

fn checkpoint_name(round: usize, sparsity: f64) -> String {
    format!("round_{round:02}_sparsity_{sparsity:.4}.ckpt")
}

/// Runs the progressive prune–retrain pipeline: saves the (already
/// trained) dense reference, then for each round prunes by
/// `schedule.fraction` and retrains `schedule.retrain_iterations` masked
/// SGD steps, checkpointing after each round.
///
/// Retraining of round r uses `train_cfg` with the iteration budget from
/// the schedule and a per-round seed derived from `train_cfg.seed`, so
/// rounds draw independent but reproducible batch sequences. A training
/// failure aborts the run with the error; checkpoints of completed rounds
/// stay on disk.
pub fn progressive_pipeline(
    net: &Network,
    ds: &Dataset,
    schedule: &PruneSchedule,
    train_cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<PipelineRun> {
    schedule.validate()?;
    train_cfg.validate()?;
    resolve_scope(net, schedule.layers_in_scope.as_deref())?;
    std::fs::create_dir_all(out_dir)?;

    let ledger_path = out_dir.join("pipeline_ledger.csv");
    let mut ledger = std::io::BufWriter::new(std::fs::File::create(&ledger_path)?);
    writeln!(ledger, "{PIPELINE_LEDGER_HEADER}")?;

    let mut stages = Vec::with_capacity(schedule.rounds + 1);
    let mut current = net.clone();
    for round in 0..=schedule.rounds {
        if round > 0 {
            current = prune_round(
                &current,
                schedule.fraction,
                schedule.layers_in_scope.as_deref(),
            )?;
            let mut cfg = train_cfg.clone();
            cfg.iterations = schedule.retrain_iterations;
            cfg.seed = derive_seed(train_cfg.seed, &[round as u64]);
            sgd_train(&mut current, ds, &cfg)?;
        }
        let sparsity = weight_sparsity(&current);
        let path = out_dir.join(checkpoint_name(round, sparsity));
        save_checkpoint(&current, Some(train_cfg), &path)?;
        writeln!(ledger, "{round},{sparsity:.6},{}", path.display())?;
        ledger.flush()?;
        stages.push(PipelineStage {
            round,
            sparsity,
            checkpoint: path,
            net: current.clone(),
        });
    }
    Ok(PipelineRun {
        stages,
        ledger: ledger_path,
    })
}

/// True when every zero of `earlier`'s masks is still zero in `later` —
/// the "once pruned, forever pruned" guarantee.
pub fn masks_monotone(earlier: &Network, later: &Network) -> bool {
    let layers = earlier.prunable_layers();
    if layers != later.prunable_layers() {
        return false;
    }
    for idx in layers {
        let (_, _, before) = earlier.layers()[idx].weights().expect("prunable");
        let (_, _, after) = later.layers()[idx].weights().expect("prunable");
        let stays_pruned = before
            .data()
            .iter()
            .zip(after.data())
            .all(|(&b, &a)| b != 0.0 || a == 0.0);
        if !stays_pruned {
            return false;
        }
    }
    true
}
