//! Momentum SGD with the Caffe-style inverse-decay schedule.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::Tensor;

use super::{gather_batch, Layer, LossKind, Network};

/// Hyper-parameters for [`sgd_train`].
///
/// The defaults mirror the classic Caffe LeNet recipe: `base_lr` 0.01,
/// momentum 0.9, inverse decay `lr_t = base_lr * (1 + lr_gamma * t)^(-lr_power)`
/// with gamma 1e-4 and power 0.75, batch size 64. The default iteration
/// budget is 20,000 — a desk-scale compromise; raise it toward 50,000 to
/// reproduce full-budget reference numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub lr_gamma: f64,
    pub lr_power: f64,
    pub seed: u64,
    /// Coefficient of the l1 penalty on ReLU activations (0 disables it).
    pub activation_l1_lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 20_000,
            batch_size: 64,
            base_lr: 0.01,
            momentum: 0.9,
            lr_gamma: 1e-4,
            lr_power: 0.75,
            seed: 1,
            activation_l1_lambda: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        if self.base_lr <= 0.0 || self.base_lr.is_nan() {
            return Err(Error::InvalidParameter("base_lr must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParameter(
                "momentum must lie in [0, 1)".into(),
            ));
        }
        if self.lr_gamma < 0.0 || self.lr_power < 0.0 {
            return Err(Error::InvalidParameter(
                "lr_gamma and lr_power must be nonnegative".into(),
            ));
        }
        if self.activation_l1_lambda < 0.0 {
            return Err(Error::InvalidParameter(
                "activation_l1_lambda must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate at iteration `t` (0-based).
    pub fn learning_rate(&self, t: usize) -> f64 {
        self.base_lr * (1.0 + self.lr_gamma * t as f64).powf(-self.lr_power)
    }
}

/// Gaussian weight initialization.
///
/// Hidden dense/conv layers get std `sqrt(2 / fan_in)` (the ReLU-preserving
/// scale); the final dense layer gets `sqrt(1 / fan_in)`. Biases start at
/// zero. Masked entries stay zero. Each layer draws from its own
/// `(seed, layer index)` stream, so the init is independent of layer
/// evaluation order.
pub fn init_weights(net: &mut Network, seed: u64) {
    let last_prunable = *net.prunable_layers().last().expect("network has layers");
    for idx in net.prunable_layers() {
        let mut stream = Stream::keyed(seed, &[idx as u64]);
        let layer = &mut net.layers_mut()[idx];
        let fan_in = match &layer {
            Layer::Dense { weight, .. } => weight.shape()[0],
            Layer::Conv2d { weight, .. } => {
                weight.shape()[1] * weight.shape()[2] * weight.shape()[3]
            }
            _ => unreachable!("prunable layers carry weights"),
        };
        let std = if idx == last_prunable {
            (1.0 / fan_in as f64).sqrt()
        } else {
            (2.0 / fan_in as f64).sqrt()
        };
        if let Some((weight, bias, _)) = layer.weights_mut() {
            for w in weight.data_mut() {
                *w = std * stream.next_gaussian();
            }
            for b in bias.data_mut() {
                *b = 0.0;
            }
        }
        layer.apply_mask();
    }
}

/// Deterministic batch scheduler: a full shuffled pass over the dataset,
/// reshuffled whenever fewer than one batch remains.
struct BatchScheduler {
    order: Vec<usize>,
    cursor: usize,
    stream: Stream,
}

impl BatchScheduler {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = BatchScheduler {
            order: (0..n).collect(),
            cursor: 0,
            stream: Stream::keyed(seed, &[batch_key()]),
        };
        s.stream.shuffle(&mut s.order);
        s
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        if self.cursor + size > self.order.len() {
            self.stream.shuffle(&mut self.order);
            self.cursor = 0;
        }
        let batch = self.order[self.cursor..self.cursor + size].to_vec();
        self.cursor += size;
        batch
    }
}

/// Trains `net` in place with momentum SGD; returns the per-iteration loss
/// history.
///
/// The Caffe update is used: `v <- momentum*v - lr_t*grad; w <- w + v`.
/// Masked weights (and their momentum) are forced to zero after every
/// step, so pruned connections never revive. All randomness (batch order)
/// comes from `cfg.seed`; combined with [`init_weights`] under the same
/// seed, training is bitwise reproducible.
pub fn sgd_train(net: &mut Network, ds: &Dataset, cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::DataConsistency("training set is empty".into()));
    }
    let loss_kind = if net.class_count() == 1 {
        LossKind::SoftplusBinary
    } else {
        LossKind::SoftmaxXent
    };

    // Momentum buffers for every prunable layer.
    let mut velocity: Vec<Option<(Tensor, Tensor)>> = net
        .layers()
        .iter()
        .map(|l| {
            l.weights()
                .map(|(w, b, _)| (Tensor::zeros(w.shape().to_vec()), Tensor::zeros(b.shape().to_vec())))
        })
        .collect();

    let mut scheduler = BatchScheduler::new(ds.len(), cfg.seed);
    let mut history = Vec::with_capacity(cfg.iterations);
    for t in 0..cfg.iterations {
        let indices = scheduler.next_batch(cfg.batch_size);
        let x = gather_batch(ds, &indices);
        let y: Vec<usize> = indices.iter().map(|&i| ds.label(i)).collect();
        let (loss, grads, _) =
            net.loss_and_grads(&x, &y, loss_kind, cfg.activation_l1_lambda)
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::TrainingDiverged {
                        iteration: t,
                        message: "non-finite loss or gradient".into(),
                    },
                    other => other,
                })?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged {
                iteration: t,
                message: format!("loss = {loss}"),
            });
        }
        let lr = cfg.learning_rate(t);
        for (idx, layer_grads) in grads.layers.iter().enumerate() {
            let Some(g) = layer_grads else { continue };
            let (vw, vb) = velocity[idx].as_mut().expect("velocity buffer");
            for (v, &dg) in vw.data_mut().iter_mut().zip(g.d_weight.data()) {
                *v = cfg.momentum * *v - lr * dg;
            }
            for (v, &dg) in vb.data_mut().iter_mut().zip(g.d_bias.data()) {
                *v = cfg.momentum * *v - lr * dg;
            }
            let layer = &mut net.layers_mut()[idx];
            let (weight, bias, mask) = layer.weights_mut().expect("prunable layer");
            for ((w, v), &m) in weight
                .data_mut()
                .iter_mut()
                .zip(vw.data_mut().iter_mut())
                .zip(mask.data())
            {
                // Masked connections stay exactly zero, including their
                // momentum, so nothing leaks back in later.
                *v *= m;
                *w = (*w + *v) * m;
            }
            for (b, v) in bias.data_mut().iter_mut().zip(vb.data()) {
                *b += *v;
            }
        }
        history.push(loss);
    }
    Ok(history)
}

const fn batch_key() -> u64 {
    0x0062_6174_6368 // "batch"
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_gaussians;

    fn toy_binary_dataset() -> Dataset {
        let mu_p = Tensor::new(vec![4], vec![1.0, 1.0, -1.0, 0.5]).unwrap();
        let mu_m = mu_p.scale(-1.0).unwrap();
        synth_gaussians(&mu_p, &mu_m, 0.4, 60, 5).unwrap()
    }

    #[test]
    fn inverse_decay_schedule_matches_formula() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate(0), 0.01);
        let lr = cfg.learning_rate(10_000);
        assert!((lr - 0.01 * 2.0f64.powf(-0.75)).abs() < 1e-12, "{lr}");
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let ds = toy_binary_dataset();
        let cfg = TrainConfig {
            iterations: 50,
            batch_size: 16,
            seed: 9,
            ..TrainConfig::default()
        };
        let run = || {
            let mut net = Network::linear(4, 1);
            init_weights(&mut net, cfg.seed);
            let hist = sgd_train(&mut net, &ds, &cfg).unwrap();
            (net, hist)
        };
        let (net_a, hist_a) = run();
        let (net_b, hist_b) = run();
        assert_eq!(hist_a, hist_b);
        let (wa, _, _) = net_a.layers()[0].weights().unwrap();
        let (wb, _, _) = net_b.layers()[0].weights().unwrap();
        assert_eq!(wa.data(), wb.data()); // bitwise
    }

    #[test]
    fn training_separates_gaussians() {
        let ds = toy_binary_dataset();
        let mut net = Network::linear(4, 1);
        init_weights(&mut net, 2);
        let cfg = TrainConfig {
            iterations: 400,
            batch_size: 16,
            seed: 2,
            ..TrainConfig::default()
        };
        let hist = sgd_train(&mut net, &ds, &cfg).unwrap();
        assert!(hist.last().unwrap() < &hist[0]);
        assert!(net.accuracy(&ds).unwrap() > 0.95);
    }

    #[test]
    fn masked_weights_stay_exactly_zero() {
        let ds = toy_binary_dataset();
        let mut net = Network::linear(4, 1);
        init_weights(&mut net, 3);
        if let Some((_, _, m)) = net.layers_mut()[0].weights_mut() {
            m.data_mut()[1] = 0.0;
            m.data_mut()[3] = 0.0;
        }
        net.layers_mut()[0].apply_mask();
        let cfg = TrainConfig {
            iterations: 120,
            batch_size: 8,
            seed: 3,
            ..TrainConfig::default()
        };
        sgd_train(&mut net, &ds, &cfg).unwrap();
        let (w, _, _) = net.layers()[0].weights().unwrap();
        assert_eq!(w.data()[1], 0.0);
        assert_eq!(w.data()[3], 0.0);
        assert!(w.data()[0] != 0.0 && w.data()[2] != 0.0);
    }

    #[test]
    fn divergence_reports_iteration() {
        // A linear softplus model saturates safely at any learning rate, so
        // provoke the blow-up through an MLP, where oversized weights
        // compound across layers until the forward pass overflows.
        let ds = toy_binary_dataset();
        let mut net = Network::mlp(&[4, 8, 1]).unwrap();
        init_weights(&mut net, 4);
        let cfg = TrainConfig {
            iterations: 50,
            batch_size: 8,
            base_lr: 1e150,
            seed: 4,
            ..TrainConfig::default()
        };
        match sgd_train(&mut net, &ds, &cfg) {
            Err(Error::TrainingDiverged { iteration, .. }) => {
                assert!(iteration < 50);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn large_activation_penalty_increases_sparsity() {
        // Paired run on a small MLP: with a huge activation l1 coefficient
        // the mean ReLU activity must drop.
        let mu_p = Tensor::new(vec![6], vec![1.0, -0.5, 0.8, 0.3, -1.0, 0.6]).unwrap();
        let mu_m = mu_p.scale(-1.0).unwrap();
        let ds = synth_gaussians(&mu_p, &mu_m, 0.5, 80, 6).unwrap();
        let run = |lambda: f64| {
            let mut net = Network::mlp(&[6, 12, 1]).unwrap();
            init_weights(&mut net, 7);
            let cfg = TrainConfig {
                iterations: 300,
                batch_size: 16,
                seed: 7,
                activation_l1_lambda: lambda,
                ..TrainConfig::default()
            };
            sgd_train(&mut net, &ds, &cfg).unwrap();
            // Fraction of zero ReLU outputs over the dataset.
            let mut zeros = 0usize;
            let mut total = 0usize;
            for i in 0..ds.len() {
                let trace = net.forward(&ds.example(i)).unwrap();
                for active in &trace.active_sets {
                    zeros += active.iter().filter(|&&a| !a).count();
                    total += active.len();
                }
            }
            zeros as f64 / total as f64
        };
        let baseline = run(0.0);
        let penalized = run(10.0);
        assert!(
            penalized > baseline,
            "activation sparsity {penalized} should exceed baseline {baseline}"
        );
    }
}
