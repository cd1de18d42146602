//! Robustness metrics and margin-based bounds.
//!
//! Two metrics summarize a model's resistance to attack:
//!
//! * `r_inf` — accuracy on l∞-bounded adversarial examples over the whole
//!   evaluation set;
//! * `r_2` — the mean l2 distance an l2 attack needs to move a correctly
//!   classified example.
//!
//! For linear classifiers both metrics have closed forms driven by the
//! class-conditional means, which [`binary_margin_bounds`] and
//! [`multiclass_margin_bounds`] compute together with diagnostics for the
//! assumptions those formulas rest on.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::attacks::{self, CwConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::rng::derive_seed;
use crate::tensor::{PNorm, Tensor};

/// l∞-bounded attacks usable for `r_inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinfAttack {
    /// One-step gradient sign.
    Fgs,
    /// Random sign step of ε/2, then a gradient sign step of ε/2. The seed
    /// is combined with each example's index so runs are reproducible and
    /// parallelizable.
    Rfgs { seed: u64 },
}

impl LinfAttack {
    pub fn name(&self) -> &'static str {
        match self {
            LinfAttack::Fgs => "fgs",
            LinfAttack::Rfgs { .. } => "rfgs",
        }
    }
}

/// l2-minimizing attacks usable for `r_2`.
#[derive(Debug, Clone, PartialEq)]
pub enum L2Attack {
    /// Iterative boundary projection; exact closed form on linear models.
    DeepFool { max_iter: usize, overshoot: f64 },
    /// Carlini–Wagner l2.
    CarliniWagner(CwConfig),
}

impl Default for L2Attack {
    fn default() -> Self {
        L2Attack::DeepFool {
            max_iter: 50,
            overshoot: 0.02,
        }
    }
}

impl L2Attack {
    pub fn name(&self) -> &'static str {
        match self {
            L2Attack::DeepFool { .. } => "deepfool",
            L2Attack::CarliniWagner(_) => "cw",
        }
    }
}

/// Fraction of the whole evaluation set still classified with its true
/// label after an l∞ attack of size `eps`.
///
/// Every example is attacked, including already-misclassified ones; an
/// example counts as robust only when the attacked point keeps the true
/// label. Deterministic given the attack's seed.
pub fn evaluate_r_inf(net: &Network, ds: &Dataset, attack: LinfAttack, eps: f64) -> Result<f64> {
    if eps <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "r_inf epsilon must be positive, got {eps}"
        )));
    }
    if ds.is_empty() {
        return Err(Error::DataConsistency("empty evaluation set".into()));
    }
    let mut surviving = 0usize;
    for i in 0..ds.len() {
        let x = ds.example(i).reshape(net.input_shape().to_vec())?;
        let y = ds.label(i);
        let outcome = match attack {
            LinfAttack::Fgs => attacks::fgs(net, &x, y, eps)?,
            LinfAttack::Rfgs { seed } => {
                attacks::rfgs(net, &x, y, eps, eps / 2.0, derive_seed(seed, &[i as u64]))?
            }
        };
        if net.predict(&outcome.x_adv)? == y {
            surviving += 1;
        }
    }
    Ok(surviving as f64 / ds.len() as f64)
}

/// Result of an `r_2` evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct R2Evaluation {
    /// Mean l2 distance to the attack's output over correctly classified
    /// examples (failed attacks contribute their final iterate).
    pub mean_distance: f64,
    /// How many correctly classified examples the attack failed to flip.
    pub failures: usize,
    /// Number of correctly classified examples evaluated.
    pub evaluated: usize,
}

/// Mean l2 distance to adversarial examples over the correctly classified
/// part of the evaluation set.
///
/// Misclassified examples are skipped (their margin is not defined); if the
/// model classifies nothing correctly the metric itself is undefined.
/// DeepFool on a purely linear model dispatches to the exact closed-form
/// projection.
pub fn evaluate_r_2(net: &Network, ds: &Dataset, attack: &L2Attack) -> Result<R2Evaluation> {
    let predictions = net.predict_dataset(ds)?;
    let correct: Vec<usize> = (0..ds.len())
        .filter(|&i| predictions[i] == ds.label(i))
        .collect();
    if correct.is_empty() {
        return Err(Error::UndefinedMetric(
            "r_2 needs at least one correctly classified example".into(),
        ));
    }

    let linear_binary = net.as_linear_binary();
    let linear_multi = net.as_linear_multiclass();
    let mut total = 0.0;
    let mut failures = 0usize;
    for &i in &correct {
        let x = ds.example(i).reshape(net.input_shape().to_vec())?;
        let outcome = match attack {
            L2Attack::DeepFool {
                max_iter,
                overshoot,
            } => {
                if let Some((w, b)) = &linear_binary {
                    attacks::deepfool_linear_binary(w, *b, &x)?
                } else if let Some((w, bias)) = &linear_multi {
                    attacks::deepfool_linear_multiclass(w, bias, &x)?
                } else {
                    attacks::deepfool(net, &x, *max_iter, *overshoot)?
                }
            }
            L2Attack::CarliniWagner(cfg) => attacks::cw_l2(net, &x, ds.label(i), cfg)?,
        };
        total += outcome.l2_dist;
        if !outcome.success {
            failures += 1;
        }
    }
    Ok(R2Evaluation {
        mean_distance: total / correct.len() as f64,
        failures,
        evaluated: correct.len(),
    })
}

/// Class-conditional statistics of a model's predictions on a dataset.
#[derive(Debug, Clone)]
pub struct ClassStats {
    /// Mean input of the correctly classified examples of each class
    /// (`None` when the class has no correctly classified example).
    pub means: Vec<Option<Tensor>>,
    /// Per-class accuracy t_k.
    pub per_class_accuracy: Vec<f64>,
    /// Class priors of the evaluation set.
    pub priors: Vec<f64>,
}

impl ClassStats {
    /// Gathers conditional means and per-class accuracies from parallel
    /// prediction/label slices.
    pub fn from_predictions(predictions: &[usize], ds: &Dataset) -> Result<ClassStats> {
        if predictions.len() != ds.len() {
            return Err(Error::DataConsistency(format!(
                "{} predictions for {} examples",
                predictions.len(),
                ds.len()
            )));
        }
        let c = ds.class_count();
        let dim = ds.feature_len();
        let mut sums = vec![vec![0.0f64; dim]; c];
        let mut correct = vec![0usize; c];
        let mut total = vec![0usize; c];
        for (i, &pred) in predictions.iter().enumerate() {
            let y = ds.label(i);
            total[y - 1] += 1;
            if pred == y {
                correct[y - 1] += 1;
                let row = ds.inputs().row(i);
                for (s, &v) in sums[y - 1].iter_mut().zip(row) {
                    *s += v;
                }
            }
        }
        let means = (0..c)
            .map(|k| {
                if correct[k] == 0 {
                    None
                } else {
                    let n = correct[k] as f64;
                    Some(Tensor::from_parts(
                        vec![dim],
                        sums[k].iter().map(|s| s / n).collect(),
                    ))
                }
            })
            .collect();
        let per_class_accuracy = (0..c)
            .map(|k| {
                if total[k] == 0 {
                    0.0
                } else {
                    correct[k] as f64 / total[k] as f64
                }
            })
            .collect();
        Ok(ClassStats {
            means,
            per_class_accuracy,
            priors: ds.class_priors(),
        })
    }

    /// Mean of the per-class accuracies.
    pub fn mean_accuracy(&self) -> f64 {
        self.per_class_accuracy.iter().sum::<f64>() / self.per_class_accuracy.len() as f64
    }

    /// Largest deviation of any class's accuracy from the mean — how far
    /// the model is from the equal-per-class-accuracy hypothesis the
    /// margin identities assume.
    pub fn accuracy_spread(&self) -> f64 {
        let t = self.mean_accuracy();
        self.per_class_accuracy
            .iter()
            .map(|tk| (tk - t).abs())
            .fold(0.0, f64::max)
    }

    /// The conditional mean of class `k` (1-based), or an undefined-metric
    /// error naming the class.
    pub fn mean_of(&self, k: usize) -> Result<&Tensor> {
        self.means[k - 1].as_ref().ok_or_else(|| {
            Error::UndefinedMetric(format!(
                "class {k} has no correctly classified example; conditional mean undefined"
            ))
        })
    }
}

/// Margin identities for a binary linear classifier: the exact mean-margin
/// form of `r_2` and the Markov bound on `r_inf`, both driven by the
/// class-conditional means.
#[derive(Debug, Clone)]
pub struct BinaryMarginBounds {
    /// Empirical r_2: mean margin |wᵀx+b|/‖w‖₂ over correct examples.
    pub r2_measured: f64,
    /// (t/2)·wᵀ(μ₊−μ₋)/‖w‖₂ from the conditional means.
    pub r2_from_means: f64,
    /// Markov bound on r_inf at the given ε: (t/2)·wᵀ(μ₊−μ₋)/(ε‖w‖₁).
    pub rinf_bound: f64,
    /// Mean per-class accuracy t.
    pub t: f64,
    /// Diagnostics for the equal-accuracy/balanced-prior hypotheses.
    pub stats: ClassStats,
}

/// Computes [`BinaryMarginBounds`] for the classifier sign(wᵀx + b) on a
/// two-class dataset (class 1 positive, class 2 negative).
pub fn binary_margin_bounds(
    w: &Tensor,
    b: f64,
    ds: &Dataset,
    eps: f64,
) -> Result<BinaryMarginBounds> {
    if ds.class_count() != 2 {
        return Err(Error::InvalidParameter(format!(
            "binary margin bounds need a two-class dataset, got {} classes",
            ds.class_count()
        )));
    }
    if eps <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {eps}"
        )));
    }
    let l2 = w.vector_norm(PNorm::L2);
    let l1 = w.vector_norm(PNorm::L1);
    if l2 == 0.0 {
        return Err(Error::DegenerateModel(
            "margin undefined for an all-zero weight vector".into(),
        ));
    }

    let mut predictions = Vec::with_capacity(ds.len());
    let mut margin_sum = 0.0;
    let mut n_correct = 0usize;
    for i in 0..ds.len() {
        let x = ds.example(i);
        let logit = w.dot(&x)? + b;
        let pred = if logit > 0.0 { 1 } else { 2 };
        predictions.push(pred);
        if pred == ds.label(i) {
            margin_sum += logit.abs() / l2;
            n_correct += 1;
        }
    }
    if n_correct == 0 {
        return Err(Error::UndefinedMetric(
            "no correctly classified example; margins undefined".into(),
        ));
    }

    let stats = ClassStats::from_predictions(&predictions, ds)?;
    let mu_plus = stats.mean_of(1)?;
    let mu_minus = stats.mean_of(2)?;
    let diff = w.dot(&mu_plus.sub(mu_minus)?)?;
    let t = stats.mean_accuracy();
    Ok(BinaryMarginBounds {
        r2_measured: margin_sum / n_correct as f64,
        r2_from_means: t / 2.0 * diff / l2,
        rinf_bound: t / 2.0 * diff / (eps * l1),
        t,
        stats,
    })
}

/// How well a multi-class linear model satisfies the two assumptions the
/// averaged-classifier bounds rest on.
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    /// Per-class rate at which the gradient sign attack flips correctly
    /// classified examples.
    pub per_class_fgs_success: Vec<f64>,
    /// Per-class flip rate of the weaker perturbation −ε·sgn(w_y − w̄).
    pub per_class_weak_success: Vec<f64>,
    /// Assumption I: the real attack is at least as strong as the weaker
    /// perturbation for every class.
    pub gradient_attack_dominates: bool,
    /// Fraction of originally misclassified examples that the attack
    /// accidentally pushes onto their true label.
    pub corrected_fraction: f64,
    /// Assumption II: corrections are rare (≤ 1%).
    pub corrections_rare: bool,
}

impl AssumptionReport {
    /// Both assumptions hold, so the bounds are expected to dominate the
    /// empirical metrics.
    pub fn passes(&self) -> bool {
        self.gradient_attack_dominates && self.corrections_rare
    }
}

/// Margin bounds for a multi-class linear classifier via its deviation
/// from the column-averaged classifier.
#[derive(Debug, Clone)]
pub struct MulticlassMarginBounds {
    /// Upper bound on r_2: (t/c)·Σ_k (w_k−w̄)ᵀμ_k/‖w_k−w̄‖₂.
    pub r2_bound: f64,
    /// Upper bound on r_inf: (t/c)·Σ_k (w_k−w̄)ᵀμ_k/(ε‖w_k−w̄‖₁).
    pub rinf_bound: f64,
    /// Mean per-class accuracy t.
    pub t: f64,
    /// Diagnostics (priors, per-class accuracies, conditional means).
    pub stats: ClassStats,
    /// Empirical checks of the bound's assumptions at the same ε.
    pub assumptions: AssumptionReport,
}

fn linear_multiclass_logits(w: &Tensor, bias: &Tensor, x: &[f64]) -> Vec<f64> {
    let c = w.shape()[1];
    let mut z = bias.data().to_vec();
    for (i, &xi) in x.iter().enumerate() {
        let row = w.row(i);
        for k in 0..c {
            z[k] += row[k] * xi;
        }
    }
    z
}

fn argmax_label(z: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = k;
        }
    }
    best + 1
}

/// Computes [`MulticlassMarginBounds`] for the classifier
/// argmax_k w_kᵀx + b_k (`w` is [n, c]) on a dataset with all classes
/// present, checking the two assumptions empirically at the same ε.
pub fn multiclass_margin_bounds(
    w: &Tensor,
    bias: &Tensor,
    ds: &Dataset,
    eps: f64,
) -> Result<MulticlassMarginBounds> {
    let (n, c) = (w.shape()[0], w.shape()[1]);
    if c < 2 {
        return Err(Error::InvalidParameter(
            "multiclass margin bounds need >= 2 classes".into(),
        ));
    }
    if ds.class_count() != c || ds.feature_len() != n {
        return Err(Error::ShapeMismatch {
            op: "multiclass_margin_bounds",
            left: w.shape().to_vec(),
            right: vec![ds.feature_len(), ds.class_count()],
        });
    }
    if eps <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {eps}"
        )));
    }

    let predictions: Vec<usize> = (0..ds.len())
        .map(|i| argmax_label(&linear_multiclass_logits(w, bias, ds.inputs().row(i))))
        .collect();
    let stats = ClassStats::from_predictions(&predictions, ds)?;
    let t = stats.mean_accuracy();

    // Column means and per-class deviations d_k = w_k − w̄.
    let mut w_bar = vec![0.0f64; n];
    for (i, wb) in w_bar.iter_mut().enumerate() {
        *wb = w.row(i).iter().sum::<f64>() / c as f64;
    }
    let mut r2_bound = 0.0;
    let mut rinf_bound = 0.0;
    for k in 0..c {
        let d_k: Vec<f64> = (0..n).map(|i| w.at2(i, k) - w_bar[i]).collect();
        let l2: f64 = d_k.iter().map(|v| v * v).sum::<f64>().sqrt();
        let l1: f64 = d_k.iter().map(|v| v.abs()).sum();
        if l2 == 0.0 {
            return Err(Error::DegenerateModel(format!(
                "class {} weight column equals the column average",
                k + 1
            )));
        }
        let mu_k = stats.mean_of(k + 1)?;
        let dot: f64 = d_k.iter().zip(mu_k.data()).map(|(a, b)| a * b).sum();
        r2_bound += dot / l2;
        rinf_bound += dot / (eps * l1);
    }
    r2_bound *= t / c as f64;
    rinf_bound *= t / c as f64;

    // Assumption checks. The gradient sign attack on a linear softmax
    // model perturbs by ε·sgn(Σ_k (p_k − 1{k=y}) w_k); the weaker
    // perturbation is −ε·sgn(w_y − w̄).
    let sign0 = |v: f64| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let mut fgs_flips = vec![0usize; c];
    let mut weak_flips = vec![0usize; c];
    let mut correct_count = vec![0usize; c];
    let mut miscls_total = 0usize;
    let mut miscls_corrected = 0usize;
    for (i, &pred) in predictions.iter().enumerate() {
        let x = ds.inputs().row(i);
        let y = ds.label(i);
        let z = linear_multiclass_logits(w, bias, x);

        if pred == y {
            correct_count[y - 1] += 1;

            // Softmax probabilities for the loss gradient.
            let zmax = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let exps: Vec<f64> = z.iter().map(|&v| (v - zmax).exp()).collect();
            let zsum: f64 = exps.iter().sum();
            let x_fgs: Vec<f64> = (0..n)
                .map(|j| {
                    let row = w.row(j);
                    let mut g = 0.0;
                    for k in 0..c {
                        let p = exps[k] / zsum;
                        let target = if k + 1 == y { 1.0 } else { 0.0 };
                        g += (p - target) * row[k];
                    }
                    x[j] + eps * sign0(g)
                })
                .collect();
            if argmax_label(&linear_multiclass_logits(w, bias, &x_fgs)) != y {
                fgs_flips[y - 1] += 1;
            }

            let x_weak: Vec<f64> = (0..n)
                .map(|j| x[j] - eps * sign0(w.at2(j, y - 1) - w_bar[j]))
                .collect();
            if argmax_label(&linear_multiclass_logits(w, bias, &x_weak)) != y {
                weak_flips[y - 1] += 1;
            }
        } else {
            miscls_total += 1;
            let zmax = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let exps: Vec<f64> = z.iter().map(|&v| (v - zmax).exp()).collect();
            let zsum: f64 = exps.iter().sum();
            let x_fgs: Vec<f64> = (0..n)
                .map(|j| {
                    let row = w.row(j);
                    let mut g = 0.0;
                    for k in 0..c {
                        let p = exps[k] / zsum;
                        let target = if k + 1 == y { 1.0 } else { 0.0 };
                        g += (p - target) * row[k];
                    }
                    x[j] + eps * sign0(g)
                })
                .collect();
            if argmax_label(&linear_multiclass_logits(w, bias, &x_fgs)) == y {
                miscls_corrected += 1;
            }
        }
    }
    let rate = |flips: &[usize]| -> Vec<f64> {
        flips
            .iter()
            .zip(&correct_count)
            .map(|(&f, &n)| if n == 0 { 0.0 } else { f as f64 / n as f64 })
            .collect()
    };
    let per_class_fgs_success = rate(&fgs_flips);
    let per_class_weak_success = rate(&weak_flips);
    let gradient_attack_dominates = per_class_fgs_success
        .iter()
        .zip(&per_class_weak_success)
        .all(|(f, w)| f >= w);
    let corrected_fraction = if miscls_total == 0 {
        0.0
    } else {
        miscls_corrected as f64 / miscls_total as f64
    };
    let assumptions = AssumptionReport {
        per_class_fgs_success,
        per_class_weak_success,
        gradient_attack_dominates,
        corrected_fraction,
        corrections_rare: corrected_fraction <= 0.01,
    };

    Ok(MulticlassMarginBounds {
        r2_bound,
        rinf_bound,
        t,
        stats,
        assumptions,
    })
}

/// Result of [`shift_invariance_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShiftInvariance {
    pub pass: bool,
    /// Index of the first example whose prediction changed, if any.
    pub first_counterexample: Option<usize>,
}

/// Verifies on every dataset example that subtracting `shift` from the
/// classifier columns leaves the argmax decision unchanged.
///
/// `shift` may be a single length-n vector applied to every class (the
/// always-safe uniform subtraction, e.g. the column average) or an [n, c]
/// tensor of per-class shifts (generally *not* decision-preserving).
pub fn shift_invariance_check(
    w: &Tensor,
    bias: &Tensor,
    shift: &Tensor,
    ds: &Dataset,
) -> Result<ShiftInvariance> {
    let (n, c) = (w.shape()[0], w.shape()[1]);
    let per_class = match shift.shape() {
        s if s == [n] => false,
        s if s == [n, c] => true,
        _ => {
            return Err(Error::ShapeMismatch {
                op: "shift_invariance_check",
                left: w.shape().to_vec(),
                right: shift.shape().to_vec(),
            })
        }
    };
    for i in 0..ds.len() {
        let x = ds.inputs().row(i);
        let base = linear_multiclass_logits(w, bias, x);
        let mut shifted = base.clone();
        for (k, sk) in shifted.iter_mut().enumerate() {
            let mut dot = 0.0;
            for (j, &xj) in x.iter().enumerate() {
                let s = if per_class {
                    shift.at2(j, k)
                } else {
                    shift.data()[j]
                };
                dot += s * xj;
            }
            *sk -= dot;
        }
        if argmax_label(&base) != argmax_label(&shifted) {
            return Ok(ShiftInvariance {
                pass: false,
                first_counterexample: Some(i),
            });
        }
    }
    Ok(ShiftInvariance {
        pass: true,
        first_counterexample: None,
    })
}

/// One measured metric inside a [`RobustnessReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct MetricEntry {
    /// Attack name ("fgs", "rfgs", "deepfool", "cw").
    pub attack: String,
    /// Human-readable attack parameters, e.g. "eps=0.1".
    pub params: String,
    /// "r_inf" or "r_2".
    pub metric: String,
    pub value: f64,
    /// Failed attack count (always 0 for r_inf, where failures are the
    /// surviving examples the metric already counts).
    pub failures: usize,
}

/// Everything measured about one model on one evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessReport {
    pub model_id: String,
    pub benign_accuracy: f64,
    pub weight_sparsity: f64,
    pub activation_sparsity: f64,
    pub entries: Vec<MetricEntry>,
}

/// Column order of [`RobustnessReport::write_csv`] rows.
pub const REPORT_CSV_HEADER: &str =
    "model_id,benign_acc,weight_sparsity,activation_sparsity,attack,params,metric,value,failures";

impl RobustnessReport {
    /// Serializes the report, one row per measured metric.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(file, "{REPORT_CSV_HEADER}")?;
        for e in &self.entries {
            writeln!(
                file,
                "{},{:.6},{:.6},{:.6},{},{},{},{:.6},{}",
                self.model_id,
                self.benign_accuracy,
                self.weight_sparsity,
                self.activation_sparsity,
                e.attack,
                e.params,
                e.metric,
                e.value,
                e.failures
            )?;
        }
        file.flush()?;
        Ok(())
    }

    /// Human-readable summary.
    pub fn text_summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "model {}", self.model_id);
        let _ = writeln!(
            out,
            "  benign accuracy {:.4}  weight sparsity {:.4}  activation sparsity {:.4}",
            self.benign_accuracy, self.weight_sparsity, self.activation_sparsity
        );
        for e in &self.entries {
            let _ = write!(
                out,
                "  {} [{}] {} = {:.4}",
                e.metric, e.params, e.attack, e.value
            );
            let _ = if e.failures > 0 {
                writeln!(out, "  ({} attack failures)", e.failures)
            } else {
                writeln!(out)
            };
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data;

    fn vec_tensor(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    /// Two well-separated Gaussian blobs along the first axis.
    fn separated_blobs(n_per_class: usize, seed: u64) -> Dataset {
        let mu_plus = vec_tensor(&[3.0, 0.5, -0.2]);
        let mu_minus = vec_tensor(&[-3.0, -0.5, 0.2]);
        data::synth_gaussians(&mu_plus, &mu_minus, 0.5, n_per_class, seed).unwrap()
    }

    fn linear_net(params: &[f64], in_dim: usize, out_dim: usize) -> Network {
        let mut net = Network::linear(in_dim, out_dim);
        net.set_parameters(params).unwrap();
        net
    }

    #[test]
    fn r_inf_matches_margin_count_on_linear_binary_model() {
        let ds = separated_blobs(100, 7);
        // w aligned with the separating axis.
        let net = linear_net(&[1.0, 0.1, -0.05, 0.02], 3, 1);
        let (w, b) = net.as_linear_binary().unwrap();
        let eps = 0.8;

        let r_inf = evaluate_r_inf(&net, &ds, LinfAttack::Fgs, eps).unwrap();

        // Closed form: an example survives iff y(wᵀx+b) > ε‖w‖₁.
        let l1 = w.vector_norm(PNorm::L1);
        let surviving = (0..ds.len())
            .filter(|&i| {
                let y = data::signed_label(ds.label(i));
                y * (w.dot(&ds.example(i)).unwrap() + b) > eps * l1
            })
            .count();
        assert!((r_inf - surviving as f64 / ds.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn r_2_closed_form_matches_margin_mean() {
        let ds = separated_blobs(80, 11);
        let net = linear_net(&[0.9, -0.2, 0.3, -0.1], 3, 1);
        let (w, b) = net.as_linear_binary().unwrap();

        let eval = evaluate_r_2(&net, &ds, &L2Attack::default()).unwrap();

        let l2 = w.vector_norm(PNorm::L2);
        let mut total = 0.0;
        let mut n = 0usize;
        for i in 0..ds.len() {
            let logit = w.dot(&ds.example(i)).unwrap() + b;
            let pred = if logit > 0.0 { 1 } else { 2 };
            if pred == ds.label(i) {
                total += logit.abs() / l2;
                n += 1;
            }
        }
        assert_eq!(eval.evaluated, n);
        assert!((eval.mean_distance - total / n as f64).abs() <= 1e-8);
        assert_eq!(eval.failures, 0);
    }

    #[test]
    fn r_2_undefined_when_nothing_is_correct() {
        let ds = separated_blobs(10, 13);
        // Weights pointing the wrong way misclassify everything.
        let net = linear_net(&[-5.0, 0.0, 0.0, 0.0], 3, 1);
        assert!(matches!(
            evaluate_r_2(&net, &ds, &L2Attack::default()),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn metrics_are_permutation_invariant() {
        let ds = separated_blobs(60, 17);
        let net = linear_net(&[1.1, 0.4, -0.3, 0.05], 3, 1);
        let perm: Vec<usize> = (0..ds.len()).rev().collect();
        let shuffled = ds.subset(&perm).unwrap();

        let a = evaluate_r_inf(&net, &ds, LinfAttack::Fgs, 0.5).unwrap();
        let b = evaluate_r_inf(&net, &shuffled, LinfAttack::Fgs, 0.5).unwrap();
        assert_eq!(a, b);

        let ra = evaluate_r_2(&net, &ds, &L2Attack::default()).unwrap();
        let rb = evaluate_r_2(&net, &shuffled, &L2Attack::default()).unwrap();
        assert!((ra.mean_distance - rb.mean_distance).abs() <= 1e-12);
    }

    #[test]
    fn binary_bounds_identity_on_well_separated_data() {
        let ds = separated_blobs(400, 19);
        let w = vec_tensor(&[1.0, 0.15, -0.1]);
        let b = 0.05;
        let bounds = binary_margin_bounds(&w, b, &ds, 0.2).unwrap();

        // Near-perfect accuracy makes the conditional and unconditional
        // normalizations agree, so the identity holds tightly.
        assert!(bounds.t > 0.99, "separation should be near-perfect");
        let rel = (bounds.r2_measured - bounds.r2_from_means).abs() / bounds.r2_measured;
        assert!(rel < 0.02, "identity off by {rel}");

        // Markov bound dominates the measured r_inf.
        let net = linear_net(&[1.0, 0.15, -0.1, 0.05], 3, 1);
        let r_inf = evaluate_r_inf(&net, &ds, LinfAttack::Fgs, 0.2).unwrap();
        assert!(r_inf <= bounds.rinf_bound + 1e-12);
    }

    #[test]
    fn mean_aligned_weights_maximize_the_margin_expression() {
        let ds = separated_blobs(200, 23);
        let stats = {
            // Perfect classifier along the separating axis for the stats.
            let preds: Vec<usize> = (0..ds.len())
                .map(|i| if ds.example(i).data()[0] > 0.0 { 1 } else { 2 })
                .collect();
            ClassStats::from_predictions(&preds, &ds).unwrap()
        };
        let diff = stats
            .mean_of(1)
            .unwrap()
            .sub(stats.mean_of(2).unwrap())
            .unwrap();
        let aligned_value = binary_margin_bounds(&diff, 0.0, &ds, 0.1)
            .unwrap()
            .r2_from_means;

        let mut stream = crate::rng::Stream::new(99);
        let norm = diff.vector_norm(PNorm::L2);
        for _ in 0..1000 {
            let v: Vec<f64> = (0..3).map(|_| stream.next_gaussian()).collect();
            let t = vec_tensor(&v);
            let scale = norm / t.vector_norm(PNorm::L2);
            let w = t.scale(scale).unwrap();
            let value = binary_margin_bounds(&w, 0.0, &ds, 0.1)
                .map(|b| b.r2_from_means)
                .unwrap_or(f64::NEG_INFINITY);
            assert!(value <= aligned_value + 1e-9);
        }
    }

    #[test]
    fn two_class_multiclass_bound_collapses_to_binary_expression() {
        let ds = separated_blobs(150, 29);
        let wv = [0.8, 0.2, -0.15];
        // W = [w, −w] makes w̄ = 0 and d_k = ±w.
        let w2 = Tensor::new(
            vec![3, 2],
            vec![wv[0], -wv[0], wv[1], -wv[1], wv[2], -wv[2]],
        )
        .unwrap();
        let bias = vec_tensor(&[0.0, 0.0]);
        let multi = multiclass_margin_bounds(&w2, &bias, &ds, 0.25).unwrap();

        let binary = binary_margin_bounds(&vec_tensor(&wv), 0.0, &ds, 0.25).unwrap();
        // (t/2)(wᵀμ₁/‖w‖ + (−w)ᵀμ₂/‖w‖) = (t/2) wᵀ(μ₁−μ₂)/‖w‖.
        assert!((multi.r2_bound - binary.r2_from_means).abs() <= 1e-12);
        assert!((multi.rinf_bound - binary.rinf_bound).abs() <= 1e-12);
    }

    #[test]
    fn degenerate_multiclass_column_is_rejected() {
        let ds = separated_blobs(10, 31);
        // Both columns identical → every d_k = 0.
        let w = Tensor::new(vec![3, 2], vec![1.0, 1.0, 0.5, 0.5, -0.2, -0.2]).unwrap();
        let bias = vec_tensor(&[0.0, 0.1]);
        assert!(matches!(
            multiclass_margin_bounds(&w, &bias, &ds, 0.1),
            Err(Error::DegenerateModel(_))
        ));
    }

    #[test]
    fn uniform_shift_preserves_decisions_but_per_class_shift_can_break_them() {
        let ds = separated_blobs(50, 37);
        let w = Tensor::new(vec![3, 2], vec![1.0, -1.0, 0.3, 0.1, -0.2, 0.4]).unwrap();
        let bias = vec_tensor(&[0.05, -0.05]);

        // Column average as the uniform shift.
        let w_bar = vec_tensor(&[0.0, 0.2, 0.1]);
        assert!(shift_invariance_check(&w, &bias, &w_bar, &ds).unwrap().pass);
        // Zero shift.
        let zero = vec_tensor(&[0.0, 0.0, 0.0]);
        assert!(shift_invariance_check(&w, &bias, &zero, &ds).unwrap().pass);

        // A per-class shift large enough to flip decisions.
        let skew = Tensor::new(vec![3, 2], vec![5.0, -5.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let check = shift_invariance_check(&w, &bias, &skew, &ds).unwrap();
        assert!(!check.pass);
        assert!(check.first_counterexample.is_some());
    }

    #[test]
    fn report_serialization_round_trip() {
        let report = RobustnessReport {
            model_id: "toy".into(),
            benign_accuracy: 0.97,
            weight_sparsity: 0.5,
            activation_sparsity: 0.25,
            entries: vec![
                MetricEntry {
                    attack: "fgs".into(),
                    params: "eps=0.1".into(),
                    metric: "r_inf".into(),
                    value: 0.31,
                    failures: 0,
                },
                MetricEntry {
                    attack: "deepfool".into(),
                    params: "max_iter=50".into(),
                    metric: "r_2".into(),
                    value: 1.32,
                    failures: 3,
                },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        report.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], REPORT_CSV_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("toy,0.970000,0.500000,0.250000,fgs,eps=0.1,r_inf,"));
        assert!(lines[2].ends_with(",3"));

        let summary = report.text_summary();
        assert!(summary.contains("benign accuracy 0.9700"));
        assert!(summary.contains("(3 attack failures)"));
    }
}
