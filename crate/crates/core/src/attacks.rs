//! Adversarial attacks: fast gradient sign (plain and randomized), the
//! closed-form minimal-l2 perturbations for linear models, the iterative
//! DeepFool linearization, and a Carlini–Wagner style l2 attack.
//!
//! All attacks are pure functions of an immutable model and a single
//! example, so callers may parallelize across examples freely. Randomized
//! attacks take an explicit seed.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{LossKind, Network};
use crate::rng::Stream;
use crate::tensor::{PNorm, Tensor};

/// Result of attacking one example.
///
/// The distance fields are always recomputed from `x_adv` and the original
/// point, never trusted from the attack's own bookkeeping. `success` means
/// the model's predicted label on `x_adv` differs from its prediction on
/// the original input (the closed-form projections, which land exactly on a
/// decision boundary, also count reaching the boundary as success).
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub x_adv: Tensor,
    pub l2_dist: f64,
    pub linf_dist: f64,
    pub success: bool,
    pub iterations_used: usize,
}

impl AttackOutcome {
    /// Builds an outcome, recomputing both distances from the two points.
    pub fn from_points(
        x: &Tensor,
        x_adv: Tensor,
        success: bool,
        iterations_used: usize,
    ) -> Result<Self> {
        let diff = x_adv.sub(x)?;
        Ok(AttackOutcome {
            l2_dist: diff.vector_norm(PNorm::L2),
            linf_dist: diff.vector_norm(PNorm::LInf),
            x_adv,
            success,
            iterations_used,
        })
    }
}

/// Column order of [`write_outcome_csv`] rows.
pub const OUTCOME_CSV_HEADER: &str = "example_id,attack,success,l2_dist,linf_dist,iterations_used";

/// Writes per-example attack outcomes as CSV.
pub fn write_outcome_csv(path: &Path, rows: &[(usize, &str, &AttackOutcome)]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "{OUTCOME_CSV_HEADER}")?;
    for (example_id, attack, outcome) in rows {
        writeln!(
            file,
            "{example_id},{attack},{},{:.17e},{:.17e},{}",
            outcome.success, outcome.l2_dist, outcome.linf_dist, outcome.iterations_used
        )?;
    }
    file.flush()?;
    Ok(())
}

/// Configuration for the Carlini–Wagner l2 attack.
#[derive(Debug, Clone, PartialEq)]
pub struct CwConfig {
    /// Gradient steps per trade-off constant.
    pub steps: usize,
    /// Optimizer learning rate.
    pub step_size: f64,
    /// How many constants the outer search tries.
    pub binary_search_rounds: usize,
    /// First trade-off constant.
    pub c_init: f64,
    /// Required logit margin κ before an example counts as attacked.
    pub confidence: f64,
}

impl Default for CwConfig {
    fn default() -> Self {
        CwConfig {
            steps: 200,
            step_size: 0.01,
            binary_search_rounds: 6,
            c_init: 0.01,
            confidence: 0.0,
        }
    }
}

impl CwConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidParameter("cw steps must be >= 1".into()));
        }
        if self.c_init <= 0.0 {
            return Err(Error::InvalidParameter("cw c_init must be > 0".into()));
        }
        if self.step_size <= 0.0 {
            return Err(Error::InvalidParameter("cw step_size must be > 0".into()));
        }
        if self.binary_search_rounds == 0 {
            return Err(Error::InvalidParameter(
                "cw binary_search_rounds must be >= 1".into(),
            ));
        }
        if self.confidence < 0.0 {
            return Err(Error::InvalidParameter(
                "cw confidence must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Label of a single-logit linear model: class 1 iff the logit is positive.
fn linear_binary_label(w: &Tensor, b: f64, x: &Tensor) -> Result<usize> {
    Ok(if w.dot(x)? + b > 0.0 { 1 } else { 2 })
}

/// One-step sign attack on a linear binary model: move every coordinate by
/// ε against the signed class direction, the strongest l∞ perturbation of
/// the margin.
///
/// `y` is the signed label (+1 for class 1, −1 for class 2).
pub fn fgs_linear_binary(
    w: &Tensor,
    b: f64,
    x: &Tensor,
    y: f64,
    eps: f64,
) -> Result<AttackOutcome> {
    if eps <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "fgs epsilon must be positive, got {eps}"
        )));
    }
    if y != 1.0 && y != -1.0 {
        return Err(Error::InvalidParameter(format!(
            "signed label must be +1 or -1, got {y}"
        )));
    }
    if w.len() != x.len() {
        return Err(Error::ShapeMismatch {
            op: "fgs_linear_binary",
            left: w.shape().to_vec(),
            right: x.shape().to_vec(),
        });
    }
    let data: Vec<f64> = x
        .data()
        .iter()
        .zip(w.data())
        .map(|(&xi, &wi)| xi - eps * y * sign0(wi))
        .collect();
    let x_adv = Tensor::new(x.shape().to_vec(), data)?;
    let success = linear_binary_label(w, b, &x_adv)? != linear_binary_label(w, b, x)?;
    AttackOutcome::from_points(x, x_adv, success, 1)
}

fn loss_for(net: &Network) -> LossKind {
    if net.class_count() == 1 {
        LossKind::SoftplusBinary
    } else {
        LossKind::SoftmaxXent
    }
}

fn checked_gradient(net: &Network, x: &Tensor, y: usize) -> Result<Tensor> {
    let grad = net.input_gradient(x, loss_for(net), y)?;
    if grad.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("attack gradient"));
    }
    Ok(grad)
}

/// Fast gradient sign attack: step ε in the sign of the loss gradient.
pub fn fgs(net: &Network, x: &Tensor, y: usize, eps: f64) -> Result<AttackOutcome> {
    if eps <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "fgs epsilon must be positive, got {eps}"
        )));
    }
    let grad = checked_gradient(net, x, y)?;
    let data: Vec<f64> = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&xi, &gi)| xi + eps * sign0(gi))
        .collect();
    let x_adv = Tensor::new(x.shape().to_vec(), data)?;
    let success = net.predict(&x_adv)? != net.predict(x)?;
    AttackOutcome::from_points(x, x_adv, success, 1)
}

/// Randomized fast gradient sign: first a random sign step of size α, then
/// a gradient sign step of size ε−α from the shifted point. The total
/// perturbation keeps ‖·‖∞ ≤ ε.
pub fn rfgs(
    net: &Network,
    x: &Tensor,
    y: usize,
    eps: f64,
    alpha: f64,
    seed: u64,
) -> Result<AttackOutcome> {
    if eps <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "rfgs epsilon must be positive, got {eps}"
        )));
    }
    if alpha <= 0.0 || alpha >= eps {
        return Err(Error::InvalidParameter(format!(
            "rfgs alpha must satisfy 0 < alpha < eps, got alpha={alpha}, eps={eps}"
        )));
    }
    let mut stream = Stream::keyed(seed, &[u64::from_be_bytes(*b"rfgsnois")]);
    let shifted: Vec<f64> = x
        .data()
        .iter()
        .map(|&xi| xi + alpha * sign0(stream.next_gaussian()))
        .collect();
    let x_shift = Tensor::new(x.shape().to_vec(), shifted)?;
    let grad = checked_gradient(net, &x_shift, y)?;
    let data: Vec<f64> = x_shift
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&xi, &gi)| xi + (eps - alpha) * sign0(gi))
        .collect();
    let x_adv = Tensor::new(x.shape().to_vec(), data)?;
    let success = net.predict(&x_adv)? != net.predict(x)?;
    AttackOutcome::from_points(x, x_adv, success, 1)
}

/// Minimal-l2 perturbation for a linear binary model: the orthogonal
/// projection of `x` onto the hyperplane wᵀx + b = 0. The resulting
/// distance is the exact margin |wᵀx + b| / ‖w‖₂.
pub fn deepfool_linear_binary(w: &Tensor, b: f64, x: &Tensor) -> Result<AttackOutcome> {
    let norm_sq = w.dot(w)?;
    if norm_sq == 0.0 {
        return Err(Error::DegenerateModel(
            "projection undefined for an all-zero weight vector".into(),
        ));
    }
    if w.len() != x.len() {
        return Err(Error::ShapeMismatch {
            op: "deepfool_linear_binary",
            left: w.shape().to_vec(),
            right: x.shape().to_vec(),
        });
    }
    let scale = (w.dot(x)? + b) / norm_sq;
    let data: Vec<f64> = x
        .data()
        .iter()
        .zip(w.data())
        .map(|(&xi, &wi)| xi - wi * scale)
        .collect();
    let x_adv = Tensor::new(x.shape().to_vec(), data)?;
    AttackOutcome::from_points(x, x_adv, true, 1)
}

/// Logits of a linear multi-class model `W [n, c]`, `bias [c]`.
fn linear_logits(w: &Tensor, bias: &Tensor, x: &Tensor) -> Result<Vec<f64>> {
    let (n, c) = (w.shape()[0], w.shape()[1]);
    if x.len() != n || bias.len() != c {
        return Err(Error::ShapeMismatch {
            op: "linear_logits",
            left: w.shape().to_vec(),
            right: x.shape().to_vec(),
        });
    }
    let mut z = bias.data().to_vec();
    for (i, &xi) in x.data().iter().enumerate() {
        let row = w.row(i);
        for (zk, &wik) in z.iter_mut().zip(row) {
            *zk += wik * xi;
        }
    }
    Ok(z)
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

/// Minimal-l2 perturbation for a linear multi-class model: projects onto
/// the nearest of the c−1 pairwise decision boundaries of the predicted
/// class (bias included in the boundary equations).
pub fn deepfool_linear_multiclass(w: &Tensor, bias: &Tensor, x: &Tensor) -> Result<AttackOutcome> {
    let (n, c) = (w.shape()[0], w.shape()[1]);
    if c < 2 {
        return Err(Error::InvalidParameter(format!(
            "multiclass projection needs >= 2 classes, got {c}"
        )));
    }
    let z = linear_logits(w, bias, x)?;
    let y_hat = argmax_label(&z);

    // Nearest boundary: argmin over k != y_hat of |z_yhat - z_k| / ||w_yhat - w_k||.
    let column = |k: usize| -> Vec<f64> { (0..n).map(|i| w.at2(i, k)).collect() };
    let w_hat = column(y_hat - 1);
    let mut best: Option<(f64, usize, Vec<f64>, f64)> = None; // (quotient, k, w_delta, f_delta)
    for k in 0..c {
        if k + 1 == y_hat {
            continue;
        }
        let wk = column(k);
        let w_delta: Vec<f64> = w_hat.iter().zip(&wk).map(|(a, b)| a - b).collect();
        let norm: f64 = w_delta.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::DegenerateModel(format!(
                "classes {y_hat} and {} share an identical weight column",
                k + 1
            )));
        }
        let f_delta = z[y_hat - 1] - z[k];
        let quotient = f_delta.abs() / norm;
        if best.as_ref().is_none_or(|(q, ..)| quotient < *q) {
            best = Some((quotient, k + 1, w_delta, f_delta));
        }
    }
    let (_, _, w_delta, f_delta) = best.expect("c >= 2 guarantees a candidate");
    let norm_sq: f64 = w_delta.iter().map(|v| v * v).sum();
    let scale = f_delta / norm_sq;
    let data: Vec<f64> = x
        .data()
        .iter()
        .zip(&w_delta)
        .map(|(&xi, &wi)| xi - wi * scale)
        .collect();
    let x_adv = Tensor::new(x.shape().to_vec(), data)?;
    AttackOutcome::from_points(x, x_adv, true, 1)
}

/// Per-class logits and their input gradients, presenting single-logit
/// binary networks as two mirrored classes so multi-class attack logic
/// applies uniformly.
fn class_scores(net: &Network, x: &Tensor) -> Result<(Vec<f64>, Vec<Tensor>)> {
    let (logits, grads) = net.logit_input_gradients(x)?;
    if logits.data().iter().any(|v| !v.is_finite())
        || grads
            .iter()
            .any(|g| g.data().iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFinite("attack gradient"));
    }
    if net.class_count() == 1 {
        let g = logits.data()[0];
        let grad = grads.into_iter().next().expect("one logit gradient");
        let neg = grad.scale(-1.0)?;
        Ok((vec![g, -g], vec![grad, neg]))
    } else {
        Ok((logits.data().to_vec(), grads))
    }
}

/// Iterative DeepFool: repeatedly linearizes the classifier around the
/// current point and steps to the nearest linearized decision boundary
/// until the prediction changes or the budget runs out. The returned point
/// is x plus (1 + overshoot) times the accumulated perturbation.
pub fn deepfool(
    net: &Network,
    x: &Tensor,
    max_iter: usize,
    overshoot: f64,
) -> Result<AttackOutcome> {
    if max_iter == 0 {
        return Err(Error::InvalidParameter("deepfool max_iter must be >= 1".into()));
    }
    if overshoot < 0.0 {
        return Err(Error::InvalidParameter(
            "deepfool overshoot must be nonnegative".into(),
        ));
    }
    let benign = net.predict(x)?;
    let mut r_tot = Tensor::zeros(x.shape().to_vec());
    let overshot = |r: &Tensor| -> Result<Tensor> { x.add(&r.scale(1.0 + overshoot)?) };

    let mut iters_used = max_iter;
    for iter in 0..max_iter {
        let x_cur = overshot(&r_tot)?;
        if net.predict(&x_cur)? != benign {
            return AttackOutcome::from_points(x, x_cur, true, iter);
        }
        let (z, grads) = class_scores(net, &x_cur)?;
        let cur = argmax_label(&z);

        // Nearest linearized boundary among all other classes.
        let mut best: Option<(f64, usize)> = None; // (quotient, class index)
        for k in 0..z.len() {
            if k + 1 == cur {
                continue;
            }
            let w_delta = grads[k].sub(&grads[cur - 1])?;
            let norm = w_delta.vector_norm(PNorm::L2);
            if norm == 0.0 {
                continue; // flat direction, boundary unreachable by this linearization
            }
            let quotient = (z[k] - z[cur - 1]).abs() / norm;
            if best.as_ref().is_none_or(|(q, _)| quotient < *q) {
                best = Some((quotient, k));
            }
        }
        let Some((quotient, k)) = best else {
            // Every boundary direction vanished: the classifier is locally
            // constant around this iterate (for ReLU nets, a fully dead
            // region), so no linearized step can make progress. Stop and
            // report the attack outcome from the current point.
            iters_used = iter;
            break;
        };
        if quotient == 0.0 {
            // Already exactly on a boundary: the zero step "flips" the
            // label in the limit, so report success with no perturbation.
            return AttackOutcome::from_points(x, x_cur, true, iter + 1);
        }
        let w_delta = grads[k].sub(&grads[cur - 1])?;
        let norm_sq = w_delta.dot(&w_delta)?;
        let step = w_delta.scale((z[cur - 1] - z[k]).abs() / norm_sq)?;
        r_tot = r_tot.add(&step)?;
    }
    let x_adv = overshot(&r_tot)?;
    let success = net.predict(&x_adv)? != benign;
    AttackOutcome::from_points(x, x_adv, success, iters_used)
}

/// Carlini–Wagner l2 attack.
///
/// Works in the tanh reparameterization x' = (tanh(u) + 1)/2, which keeps
/// adversarial points inside [0,1], and minimizes
/// ‖x'−x‖₂² + c·max(Z_y(x') − max_{k≠y} Z_k(x'), −κ) with the Adam
/// optimizer. The trade-off constant c is binary-searched: starting from
/// `c_init`, each round without a success raises it tenfold until a success
/// brackets the useful range, after which rounds bisect the bracket. `u`
/// warm-starts across rounds and the best successful iterate seen anywhere
/// is kept.
pub fn cw_l2(net: &Network, x: &Tensor, y: usize, cfg: &CwConfig) -> Result<AttackOutcome> {
    cfg.validate()?;
    if y == 0 || y > net.label_count() {
        return Err(Error::InvalidParameter(format!(
            "cw target label {y} outside 1..={}",
            net.label_count()
        )));
    }
    if x.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::InvalidParameter(
            "cw requires inputs in [0,1] for the tanh change of variables".into(),
        ));
    }
    let benign = net.predict(x)?;
    let n = x.len();

    // u = atanh(2x−1), with saturated pixels pulled just inside the box.
    const EDGE: f64 = 1e-6;
    let mut u: Vec<f64> = x
        .data()
        .iter()
        .map(|&v| {
            let v = v.clamp(EDGE, 1.0 - EDGE);
            (2.0 * v - 1.0).atanh()
        })
        .collect();

    // Adam state, kept across binary-search rounds like u itself.
    let (beta1, beta2, adam_eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0f64; n];
    let mut v = vec![0.0f64; n];
    let mut adam_t = 0usize;

    let to_input = |u: &[f64]| -> Result<Tensor> {
        Tensor::new(
            x.shape().to_vec(),
            u.iter().map(|&ui| (ui.tanh() + 1.0) / 2.0).collect(),
        )
    };

    let mut c = cfg.c_init;
    let mut c_lo = 0.0f64;
    let mut c_hi = f64::INFINITY;
    let mut best_success: Option<(f64, Tensor)> = None;
    let mut last_iterate = x.clone();
    let mut steps_done = 0usize;

    for _round in 0..cfg.binary_search_rounds {
        let mut round_succeeded = false;
        for _step in 0..cfg.steps {
            steps_done += 1;
            let x_cur = to_input(&u)?;
            let (z, grads) = class_scores(net, &x_cur)?;

            // Track any iterate that changes the prediction.
            let label = argmax_label(&z);
            if label != benign {
                let dist = x_cur.sub(x)?.vector_norm(PNorm::L2);
                if best_success
                    .as_ref()
                    .is_none_or(|(best, _)| dist < *best)
                {
                    best_success = Some((dist, x_cur.clone()));
                }
                round_succeeded = true;
            }

            // max_{k≠y} Z_k and its argmax.
            let mut other = usize::MAX;
            for k in 0..z.len() {
                if k + 1 != y && (other == usize::MAX || z[k] > z[other]) {
                    other = k;
                }
            }
            let margin = z[y - 1] - z[other];

            // d/dx of ‖x'−x‖² + c·max(margin, −κ).
            let diff = x_cur.sub(x)?;
            let mut grad_x: Vec<f64> = diff.data().iter().map(|d| 2.0 * d).collect();
            if margin > -cfg.confidence {
                for ((g, &gy), &go) in grad_x
                    .iter_mut()
                    .zip(grads[y - 1].data())
                    .zip(grads[other].data())
                {
                    *g += c * (gy - go);
                }
            }

            // Chain through x' = (tanh(u)+1)/2 and apply Adam.
            adam_t += 1;
            let bc1 = 1.0 - beta1.powi(adam_t as i32);
            let bc2 = 1.0 - beta2.powi(adam_t as i32);
            for i in 0..n {
                let t = u[i].tanh();
                let g = grad_x[i] * (1.0 - t * t) / 2.0;
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                u[i] -= cfg.step_size * (m[i] / bc1) / ((v[i] / bc2).sqrt() + adam_eps);
            }
            last_iterate = x_cur;
        }
        if round_succeeded {
            c_hi = c;
        } else {
            c_lo = c_lo.max(c);
        }
        c = if c_hi.is_finite() {
            (c_lo + c_hi) / 2.0
        } else {
            c * 10.0
        };
    }

    match best_success {
        Some((_, x_adv)) => AttackOutcome::from_points(x, x_adv, true, steps_done),
        None => AttackOutcome::from_points(x, last_iterate, false, steps_done),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;

    fn vec_tensor(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn fgs_linear_binary_known_step() {
        let w = vec_tensor(&[1.0, -1.0]);
        let x = vec_tensor(&[0.5, 0.5]);
        let out = fgs_linear_binary(&w, 0.0, &x, 1.0, 0.1).unwrap();
        assert_eq!(out.x_adv.data(), &[0.4, 0.6]);
        // Margin drops from 0 by exactly eps * ||w||_1 = 0.2.
        assert!((w.dot(&out.x_adv).unwrap() - (-0.2)).abs() < 1e-15);
        assert!(out.linf_dist <= 0.1 + 1e-15);
    }

    #[test]
    fn fgs_linear_binary_zero_weights_is_identity() {
        let w = vec_tensor(&[0.0, 0.0]);
        let x = vec_tensor(&[0.3, 0.7]);
        let out = fgs_linear_binary(&w, 0.5, &x, -1.0, 0.2).unwrap();
        assert_eq!(out.x_adv.data(), x.data());
        assert_eq!(out.l2_dist, 0.0);
        assert!(!out.success);
    }

    #[test]
    fn fgs_linear_binary_rejects_bad_label_and_eps() {
        let w = vec_tensor(&[1.0]);
        let x = vec_tensor(&[0.0]);
        assert!(fgs_linear_binary(&w, 0.0, &x, 0.5, 0.1).is_err());
        assert!(fgs_linear_binary(&w, 0.0, &x, 1.0, 0.0).is_err());
    }

    #[test]
    fn fgs_steps_lie_on_sign_lattice() {
        let mut net = Network::mlp(&[3, 4, 2]).unwrap();
        let flat: Vec<f64> = (0..net.parameters().len())
            .map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0)
            .collect();
        net.set_parameters(&flat).unwrap();
        let x = vec_tensor(&[0.2, -0.4, 0.9]);
        let eps = 0.05;
        let out = fgs(&net, &x, 1, eps).unwrap();
        for (a, b) in out.x_adv.data().iter().zip(x.data()) {
            let d = a - b;
            assert!(
                d == 0.0 || (d - eps).abs() < 1e-15 || (d + eps).abs() < 1e-15,
                "coordinate moved by {d}"
            );
        }
        assert!(out.linf_dist <= eps + 1e-15);
    }

    #[test]
    fn rfgs_respects_linf_budget_and_is_seed_deterministic() {
        let mut net = Network::mlp(&[4, 5, 3]).unwrap();
        let flat: Vec<f64> = (0..net.parameters().len())
            .map(|i| ((i * 17 % 13) as f64 - 6.0) / 9.0)
            .collect();
        net.set_parameters(&flat).unwrap();
        let x = vec_tensor(&[0.1, 0.5, -0.2, 0.8]);
        let a = rfgs(&net, &x, 2, 0.1, 0.05, 42).unwrap();
        let b = rfgs(&net, &x, 2, 0.1, 0.05, 42).unwrap();
        let c = rfgs(&net, &x, 2, 0.1, 0.05, 43).unwrap();
        assert_eq!(a.x_adv.data(), b.x_adv.data());
        assert_ne!(a.x_adv.data(), c.x_adv.data());
        assert!(a.linf_dist <= 0.1 + 1e-15);
        assert!(rfgs(&net, &x, 2, 0.1, 0.1, 1).is_err()); // alpha must be < eps
    }

    #[test]
    fn deepfool_linear_binary_axis_projection() {
        let w = vec_tensor(&[1.0, 0.0]);
        let x = vec_tensor(&[2.0, 3.0]);
        let out = deepfool_linear_binary(&w, 0.0, &x).unwrap();
        assert_eq!(out.x_adv.data(), &[0.0, 3.0]);
        assert_eq!(out.l2_dist, 2.0);
    }

    #[test]
    fn deepfool_linear_binary_on_boundary_is_zero() {
        let w = vec_tensor(&[1.0, 1.0]);
        let x = vec_tensor(&[1.0, -1.0]);
        let out = deepfool_linear_binary(&w, 0.0, &x).unwrap();
        assert_eq!(out.l2_dist, 0.0);
    }

    #[test]
    fn deepfool_linear_binary_rejects_zero_weights() {
        let w = vec_tensor(&[0.0, 0.0]);
        let x = vec_tensor(&[1.0, 2.0]);
        assert!(matches!(
            deepfool_linear_binary(&w, 0.0, &x),
            Err(Error::DegenerateModel(_))
        ));
    }

    #[test]
    fn deepfool_linear_multiclass_two_classes_reduces_to_binary() {
        // W columns w1, w2; the two-class projection must equal the binary
        // one with w = w1 - w2, b = b1 - b2.
        let w = Tensor::new(vec![3, 2], vec![1.0, 0.5, -0.25, 1.0, 2.0, -1.0]).unwrap();
        let bias = vec_tensor(&[0.3, -0.2]);
        let x = vec_tensor(&[0.7, -1.1, 0.4]);
        let multi = deepfool_linear_multiclass(&w, &bias, &x).unwrap();

        let w_diff = vec_tensor(&[1.0 - 0.5, -0.25 - 1.0, 2.0 - (-1.0)]);
        let b_diff = 0.3 - (-0.2);
        // x is classified by sign of w_diff^T x + b_diff in both views.
        let binary = deepfool_linear_binary(&w_diff, b_diff, &x).unwrap();
        for (m, b) in multi.x_adv.data().iter().zip(binary.x_adv.data()) {
            assert!((m - b).abs() < 1e-12);
        }
        assert!((multi.l2_dist - binary.l2_dist).abs() < 1e-12);
    }

    #[test]
    fn deepfool_in_dead_relu_region_reports_failure() {
        // The first layer never fires (zero weights, negative biases), so
        // the logits are constant everywhere, no boundary direction
        // exists, and the attack must report failure without moving.
        let mut net = Network::mlp(&[2, 2, 2]).unwrap();
        let params = vec![
            0.0, 0.0, 0.0, 0.0, // W1
            -1.0, -1.0, // b1
            0.4, -0.3, 0.2, 0.1, // W2
            0.3, -0.2, // b2
        ];
        net.set_parameters(&params).unwrap();
        let x = vec_tensor(&[0.5, -0.8]);
        let out = deepfool(&net, &x, 50, 0.02).unwrap();
        assert!(!out.success);
        assert_eq!(out.l2_dist, 0.0);
        assert_eq!(out.iterations_used, 0);
    }

    #[test]
    fn deepfool_linear_multiclass_rejects_duplicate_columns() {
        let w = Tensor::new(vec![2, 3], vec![1.0, 1.0, 0.0, 2.0, 2.0, 1.0]).unwrap();
        let bias = vec_tensor(&[0.0, -1.0, 0.0]);
        let x = vec_tensor(&[1.0, 1.0]);
        // Predicted class is 1 (logit 3 vs 3-1=2 and 1); class 2 duplicates
        // class 1's weight column.
        assert!(matches!(
            deepfool_linear_multiclass(&w, &bias, &x),
            Err(Error::DegenerateModel(_))
        ));
    }

    #[test]
    fn iterative_deepfool_matches_closed_form_on_linear_net() {
        let mut net = Network::linear(3, 4);
        let flat: Vec<f64> = (0..net.parameters().len())
            .map(|i| ((i * 29 % 17) as f64 - 8.0) / 5.0)
            .collect();
        net.set_parameters(&flat).unwrap();
        let (w, bias) = net.as_linear_multiclass().unwrap();
        let x = vec_tensor(&[0.4, -0.9, 1.3]);

        let iterative = deepfool(&net, &x, 50, 0.0).unwrap();
        let closed = deepfool_linear_multiclass(&w, &bias, &x).unwrap();
        for (a, b) in iterative.x_adv.data().iter().zip(closed.x_adv.data()) {
            assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
        }
        assert!((iterative.l2_dist - closed.l2_dist).abs() <= 1e-8);
    }

    #[test]
    fn iterative_deepfool_flips_the_label_on_a_relu_net() {
        let mut net = Network::new(
            vec![2],
            vec![Layer::dense(2, 6), Layer::Relu, Layer::dense(6, 3)],
        )
        .unwrap();
        let flat: Vec<f64> = (0..net.parameters().len())
            .map(|i| ((i * 13 % 19) as f64 - 9.0) / 6.0)
            .collect();
        net.set_parameters(&flat).unwrap();
        let x = vec_tensor(&[0.8, -0.3]);
        let out = deepfool(&net, &x, 50, 0.02).unwrap();
        assert!(out.success);
        assert_ne!(net.predict(&out.x_adv).unwrap(), net.predict(&x).unwrap());
        assert!(out.iterations_used <= 50);
    }

    #[test]
    fn cw_success_changes_the_label() {
        let mut net = Network::linear(2, 1);
        net.set_parameters(&[1.0, -0.5, 0.1]).unwrap();
        let x = vec_tensor(&[0.9, 0.2]);
        assert_eq!(net.predict(&x).unwrap(), 1);
        let out = cw_l2(&net, &x, 1, &CwConfig::default()).unwrap();
        assert!(out.success);
        assert_ne!(net.predict(&out.x_adv).unwrap(), 1);
        // The adversarial point stays inside the box.
        assert!(out.x_adv.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn cw_rejects_out_of_box_inputs() {
        let net = Network::linear(2, 1);
        let x = vec_tensor(&[1.5, 0.2]);
        assert!(cw_l2(&net, &x, 1, &CwConfig::default()).is_err());
    }

    #[test]
    fn outcome_csv_round_trip() {
        let x = vec_tensor(&[0.0, 0.0]);
        let adv = vec_tensor(&[0.3, -0.4]);
        let out = AttackOutcome::from_points(&x, adv, true, 7).unwrap();
        assert!((out.l2_dist - 0.5).abs() < 1e-15);
        assert!((out.linf_dist - 0.4).abs() < 1e-15);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("outcomes.csv");
        write_outcome_csv(&path, &[(3, "fgs", &out)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), OUTCOME_CSV_HEADER);
        let row = lines.next().unwrap();
        assert!(row.starts_with("3,fgs,true,"));
        assert!(row.ends_with(",7"));
    }
}
