//! Feed-forward ReLU networks with masked weights.
//!
//! A [`Network`] is an ordered list of layers — dense, 2-d convolution,
//! max-pooling, ReLU, flatten — ending in a dense layer whose output width
//! is the class count. Dense and conv layers carry a binary mask of the
//! same shape as their weights; a masked entry is pinned to exactly zero
//! through construction, training and checkpointing, which is what the
//! pruning experiments rely on.
//!
//! Forward passes record enough intermediate state to run reverse-mode
//! differentiation with respect to both parameters and inputs, and to
//! expose the ReLU activity pattern (strict `> 0`) needed by the Lipschitz
//! bounds.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use train::{init_weights, sgd_train, TrainConfig};

use crate::data::{signed_label, Dataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One layer of a network.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// Fully connected map `a -> W^T a + b` with `W: [in, out]`.
    Dense {
        weight: Tensor,
        bias: Tensor,
        mask: Tensor,
    },
    /// Direct 2-d convolution, valid padding, square kernel.
    /// `weight: [out_ch, in_ch, k, k]`.
    Conv2d {
        weight: Tensor,
        bias: Tensor,
        mask: Tensor,
        stride: usize,
    },
    /// Max pooling with a square window; ties route to the first
    /// (row-major) maximal element for deterministic backprop.
    MaxPool { window: usize, stride: usize },
    /// Elementwise `max(0, x)`.
    Relu,
    /// Collapse `[C, H, W]` to a flat vector.
    Flatten,
}

impl Layer {
    /// New dense layer with zero weights and an all-ones mask.
    pub fn dense(in_dim: usize, out_dim: usize) -> Layer {
        Layer::Dense {
            weight: Tensor::zeros(vec![in_dim, out_dim]),
            bias: Tensor::zeros(vec![out_dim]),
            mask: Tensor::filled(vec![in_dim, out_dim], 1.0),
        }
    }

    /// New conv layer with zero weights and an all-ones mask.
    pub fn conv2d(in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Layer {
        Layer::Conv2d {
            weight: Tensor::zeros(vec![out_ch, in_ch, kernel, kernel]),
            bias: Tensor::zeros(vec![out_ch]),
            mask: Tensor::filled(vec![out_ch, in_ch, kernel, kernel], 1.0),
            stride,
        }
    }

    /// True for layers that carry weights (and can therefore be pruned).
    pub fn is_prunable(&self) -> bool {
        matches!(self, Layer::Dense { .. } | Layer::Conv2d { .. })
    }

    /// Weight and mask tensors, if the layer has them.
    pub fn weights(&self) -> Option<(&Tensor, &Tensor, &Tensor)> {
        match self {
            Layer::Dense { weight, bias, mask } | Layer::Conv2d { weight, bias, mask, .. } => {
                Some((weight, bias, mask))
            }
            _ => None,
        }
    }

    pub(crate) fn weights_mut(&mut self) -> Option<(&mut Tensor, &mut Tensor, &mut Tensor)> {
        match self {
            Layer::Dense { weight, bias, mask } | Layer::Conv2d { weight, bias, mask, .. } => {
                Some((weight, bias, mask))
            }
            _ => None,
        }
    }

    /// Forces masked weight entries to exactly zero.
    pub(crate) fn apply_mask(&mut self) {
        if let Some((weight, _, mask)) = self.weights_mut() {
            let mask = mask.clone();
            for (w, &m) in weight.data_mut().iter_mut().zip(mask.data()) {
                if m == 0.0 {
                    *w = 0.0;
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Layer::Dense { weight, bias, mask } => {
                if weight.rank() != 2 {
                    return Err(Error::InvalidParameter(
                        "dense weight must be rank 2".into(),
                    ));
                }
                if bias.shape() != [weight.shape()[1]] {
                    return Err(Error::ShapeMismatch {
                        op: "dense bias",
                        left: weight.shape().to_vec(),
                        right: bias.shape().to_vec(),
                    });
                }
                check_mask(weight, mask)
            }
            Layer::Conv2d {
                weight,
                bias,
                mask,
                stride,
            } => {
                if weight.rank() != 4 || weight.shape()[2] != weight.shape()[3] {
                    return Err(Error::InvalidParameter(
                        "conv weight must be [out_ch, in_ch, k, k]".into(),
                    ));
                }
                if *stride == 0 {
                    return Err(Error::InvalidParameter("conv stride must be >= 1".into()));
                }
                if bias.shape() != [weight.shape()[0]] {
                    return Err(Error::ShapeMismatch {
                        op: "conv bias",
                        left: weight.shape().to_vec(),
                        right: bias.shape().to_vec(),
                    });
                }
                check_mask(weight, mask)
            }
            Layer::MaxPool { window, stride } => {
                if *window == 0 || *stride == 0 {
                    return Err(Error::InvalidParameter(
                        "maxpool window and stride must be >= 1".into(),
                    ));
                }
                Ok(())
            }
            Layer::Relu | Layer::Flatten => Ok(()),
        }
    }

    /// Output shape of this layer for a given (single-example) input shape.
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |left: &[usize]| Error::ShapeMismatch {
            op: "layer shape chain",
            left: left.to_vec(),
            right: input.to_vec(),
        };
        match self {
            Layer::Dense { weight, .. } => {
                if input != [weight.shape()[0]] {
                    return Err(mismatch(weight.shape()));
                }
                Ok(vec![weight.shape()[1]])
            }
            Layer::Conv2d { weight, stride, .. } => {
                let (out_ch, in_ch, k) = (weight.shape()[0], weight.shape()[1], weight.shape()[2]);
                if input.len() != 3 || input[0] != in_ch || input[1] < k || input[2] < k {
                    return Err(mismatch(weight.shape()));
                }
                Ok(vec![
                    out_ch,
                    (input[1] - k) / stride + 1,
                    (input[2] - k) / stride + 1,
                ])
            }
            Layer::MaxPool { window, stride } => {
                if input.len() != 3 || input[1] < *window || input[2] < *window {
                    return Err(mismatch(&[*window, *window]));
                }
                Ok(vec![
                    input[0],
                    (input[1] - window) / stride + 1,
                    (input[2] - window) / stride + 1,
                ])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

fn check_mask(weight: &Tensor, mask: &Tensor) -> Result<()> {
    if mask.shape() != weight.shape() {
        return Err(Error::ShapeMismatch {
            op: "weight mask",
            left: weight.shape().to_vec(),
            right: mask.shape().to_vec(),
        });
    }
    if !mask.data().iter().all(|&m| m == 0.0 || m == 1.0) {
        return Err(Error::InvalidParameter(
            "mask entries must be 0 or 1".into(),
        ));
    }
    Ok(())
}

/// Loss functions understood by [`Network::loss_and_grads`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Binary softplus loss τ(−y·g) on a single-logit network; dataset
    /// classes 1/2 are mapped to y = +1/−1.
    SoftplusBinary,
    /// Multi-class softmax cross-entropy.
    SoftmaxXent,
}

/// A feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    class_count: usize,
}

/// Record of one single-example forward pass.
///
/// `activations[0]` is the input; `activations[i + 1]` is the output of
/// layer `i`; `logits` aliases the final activation. `active_sets` holds,
/// for each ReLU layer in order, the strict `> 0` activity indicator of its
/// output units.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub activations: Vec<Tensor>,
    pub logits: Tensor,
    pub active_sets: Vec<Vec<bool>>,
}

/// Per-layer parameter gradients (None for parameterless layers).
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub layers: Vec<Option<LayerGrads>>,
}

impl ParamGrads {
    /// Flat copy laid out exactly like [`Network::parameters`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in self.layers.iter().flatten() {
            out.extend_from_slice(g.d_weight.data());
            out.extend_from_slice(g.d_bias.data());
        }
        out
    }
}

/// Gradients for one dense/conv layer. Masked weight entries are zero.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub d_weight: Tensor,
    pub d_bias: Tensor,
}

/// Batched forward record: the input seen by every layer, max-pool routing
/// indices, and the final logits.
pub(crate) struct BatchTrace {
    pub(crate) layer_inputs: Vec<Tensor>,
    pool_routes: Vec<Option<Vec<usize>>>,
    pub(crate) logits: Tensor,
}

impl Network {
    /// Builds a network, validating every layer and the whole shape chain,
    /// and pinning masked weights to zero.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter("network has no layers".into()));
        }
        let mut shape = input_shape.clone();
        for layer in &layers {
            layer.validate()?;
            shape = layer.output_shape(&shape)?;
        }
        let class_count = match layers.last() {
            Some(Layer::Dense { weight, .. }) => weight.shape()[1],
            _ => {
                return Err(Error::InvalidParameter(
                    "final layer must be dense (its columns are the class vectors)".into(),
                ))
            }
        };
        let mut net = Network {
            layers,
            input_shape,
            class_count,
        };
        for layer in &mut net.layers {
            layer.apply_mask();
        }
        Ok(net)
    }

    /// Single dense layer `in_dim -> out_dim` (a linear model).
    pub fn linear(in_dim: usize, out_dim: usize) -> Self {
        Network::new(vec![in_dim], vec![Layer::dense(in_dim, out_dim)]).expect("valid linear net")
    }

    /// Dense/ReLU multi-layer perceptron; `dims` lists layer widths
    /// including input and output, e.g. `[784, 300, 100, 10]`.
    pub fn mlp(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidParameter(
                "mlp needs at least input and output widths".into(),
            ));
        }
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            layers.push(Layer::dense(dims[i], dims[i + 1]));
            if i + 2 < dims.len() {
                layers.push(Layer::Relu);
            }
        }
        Network::new(vec![dims[0]], layers)
    }

    /// The Caffe variant of LeNet-5 for 28×28 single-channel images:
    /// conv 20@5×5, pool 2, conv 50@5×5, pool 2, flatten, 800→500 dense,
    /// ReLU, 500→10 dense.
    pub fn lenet5() -> Self {
        Network::new(
            vec![1, 28, 28],
            vec![
                Layer::conv2d(1, 20, 5, 1),
                Layer::MaxPool {
                    window: 2,
                    stride: 2,
                },
                Layer::conv2d(20, 50, 5, 1),
                Layer::MaxPool {
                    window: 2,
                    stride: 2,
                },
                Layer::Flatten,
                Layer::dense(800, 500),
                Layer::Relu,
                Layer::dense(500, 10),
            ],
        )
        .expect("valid lenet5")
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Width of the final dense layer (1 for binary single-logit models).
    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Label space size when used as a classifier: single-logit networks
    /// decide between 2 classes by sign.
    pub fn label_count(&self) -> usize {
        if self.class_count == 1 {
            2
        } else {
            self.class_count
        }
    }

    /// Indices of layers that carry weights.
    pub fn prunable_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_prunable())
            .map(|(i, _)| i)
            .collect()
    }

    /// Flat copy of all parameters: for each dense/conv layer in order, its
    /// weights then its bias.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let Some((w, b, _)) = layer.weights() {
                out.extend_from_slice(w.data());
                out.extend_from_slice(b.data());
            }
        }
        out
    }

    /// Overwrites all parameters from a flat slice laid out as
    /// [`Network::parameters`]; masked weight entries are re-zeroed.
    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        let expected = self.parameters().len();
        if values.len() != expected {
            return Err(Error::ShapeMismatch {
                op: "set_parameters",
                left: vec![expected],
                right: vec![values.len()],
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("set_parameters"));
        }
        let mut cursor = 0;
        for layer in &mut self.layers {
            if let Some((w, b, _)) = layer.weights_mut() {
                let wl = w.len();
                w.data_mut().copy_from_slice(&values[cursor..cursor + wl]);
                cursor += wl;
                let bl = b.len();
                b.data_mut().copy_from_slice(&values[cursor..cursor + bl]);
                cursor += bl;
            }
            layer.apply_mask();
        }
        Ok(())
    }

    /// If the network is a single dense layer with one output, returns the
    /// weight vector (length `in`) and bias.
    pub fn as_linear_binary(&self) -> Option<(Tensor, f64)> {
        match self.layers.as_slice() {
            [Layer::Dense { weight, bias, .. }] if weight.shape()[1] == 1 => Some((
                Tensor::from_parts(vec![weight.shape()[0]], weight.data().to_vec()),
                bias.data()[0],
            )),
            _ => None,
        }
    }

    /// If the network is a single dense layer, returns `(W [in, c], bias [c])`.
    pub fn as_linear_multiclass(&self) -> Option<(Tensor, Tensor)> {
        match self.layers.as_slice() {
            [Layer::Dense { weight, bias, .. }] => Some((weight.clone(), bias.clone())),
            _ => None,
        }
    }

    fn check_batch_shape(&self, x: &Tensor) -> Result<()> {
        if x.rank() < 2 || &x.shape()[1..] != self.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "forward input",
                left: x.shape().to_vec(),
                right: self.input_shape.clone(),
            });
        }
        Ok(())
    }

    /// Forward pass over a batch whose leading dimension is the batch size.
    pub(crate) fn forward_batch(&self, x: &Tensor) -> Result<BatchTrace> {
        self.check_batch_shape(x)?;
        let batch = x.shape()[0];
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut pool_routes = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        for layer in &self.layers {
            layer_inputs.push(current.clone());
            let mut route = None;
            current = match layer {
                Layer::Dense { weight, bias, .. } => {
                    let flat = current.reshape(vec![batch, weight.shape()[0]])?;
                    let mut out = flat.matmul(weight)?;
                    let ncols = weight.shape()[1];
                    for i in 0..batch {
                        for (o, &b) in out.row_mut(i).iter_mut().zip(bias.data()) {
                            *o += b;
                        }
                    }
                    debug_assert_eq!(out.shape(), [batch, ncols]);
                    out
                }
                Layer::Conv2d { weight, bias, stride, .. } => {
                    conv2d_forward(&current, weight, bias, *stride)
                }
                Layer::MaxPool { window, stride } => {
                    let (out, routes) = maxpool_forward(&current, *window, *stride);
                    route = Some(routes);
                    out
                }
                Layer::Relu => {
                    let data = current.data().iter().map(|&v| v.max(0.0)).collect();
                    Tensor::from_parts(current.shape().to_vec(), data)
                }
                Layer::Flatten => {
                    let feat = current.len() / batch;
                    current.reshape(vec![batch, feat])?
                }
            };
            pool_routes.push(route);
        }
        if !current.data().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("forward"));
        }
        Ok(BatchTrace {
            layer_inputs,
            pool_routes,
            logits: current,
        })
    }

    /// Forward pass on a single example, recording activations and ReLU
    /// activity patterns.
    pub fn forward(&self, x: &Tensor) -> Result<ForwardTrace> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "forward input",
                left: x.shape().to_vec(),
                right: self.input_shape.clone(),
            });
        }
        let mut batch_shape = vec![1];
        batch_shape.extend_from_slice(x.shape());
        let xb = x.clone().reshape(batch_shape)?;
        let trace = self.forward_batch(&xb)?;

        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        let mut active_sets = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let output = if i + 1 < self.layers.len() {
                strip_batch_dim(&trace.layer_inputs[i + 1])
            } else {
                strip_batch_dim(&trace.logits)
            };
            if matches!(layer, Layer::Relu) {
                active_sets.push(output.data().iter().map(|&v| v > 0.0).collect());
            }
            activations.push(output);
        }
        let logits = activations.last().expect("nonempty").clone();
        Ok(ForwardTrace {
            activations,
            logits,
            active_sets,
        })
    }

    /// Predicted label (1-based) for one example.
    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(self.forward(x)?.logits.predicted_label())
    }

    /// Predicted labels for a whole dataset, evaluated in deterministic
    /// fixed-size chunks.
    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(ds.len());
        let chunk = 512;
        let mut start = 0;
        while start < ds.len() {
            let end = (start + chunk).min(ds.len());
            let idx: Vec<usize> = (start..end).collect();
            let batch = gather_batch(ds, &idx);
            let trace = self.forward_batch(&batch)?;
            let c = trace.logits.shape()[1];
            for i in 0..idx.len() {
                out.push(predicted_label_from_row(trace.logits.row(i), c));
            }
            start = end;
        }
        Ok(out)
    }

    /// Fraction of the dataset classified correctly.
    pub fn accuracy(&self, ds: &Dataset) -> Result<f64> {
        let preds = self.predict_dataset(ds)?;
        let correct = preds
            .iter()
            .zip(ds.labels())
            .filter(|(p, y)| p == y)
            .count();
        Ok(correct as f64 / ds.len() as f64)
    }

    /// Per-class accuracies, indexed by `label - 1`.
    pub fn per_class_accuracy(&self, ds: &Dataset) -> Result<Vec<f64>> {
        let preds = self.predict_dataset(ds)?;
        let classes = ds.class_count();
        let mut correct = vec![0usize; classes];
        let mut total = vec![0usize; classes];
        for (p, &y) in preds.iter().zip(ds.labels()) {
            total[y - 1] += 1;
            if *p == y {
                correct[y - 1] += 1;
            }
        }
        Ok((0..classes)
            .map(|k| {
                if total[k] == 0 {
                    f64::NAN
                } else {
                    correct[k] as f64 / total[k] as f64
                }
            })
            .collect())
    }

    /// Mean loss and gradients over a batch.
    ///
    /// Returns `(loss, parameter gradients, input gradients)`. The loss is
    /// the mean per-example loss plus `lambda_act` times the mean total l1
    /// norm of all ReLU outputs. Gradients of masked weights are zero.
    pub fn loss_and_grads(
        &self,
        x_batch: &Tensor,
        y_batch: &[usize],
        loss: LossKind,
        lambda_act: f64,
    ) -> Result<(f64, ParamGrads, Tensor)> {
        let trace = self.forward_batch(x_batch)?;
        let batch = x_batch.shape()[0];
        if y_batch.len() != batch {
            return Err(Error::DataConsistency(format!(
                "{batch} inputs but {} labels",
                y_batch.len()
            )));
        }
        if lambda_act < 0.0 {
            return Err(Error::InvalidParameter(
                "activation l1 coefficient must be nonnegative".into(),
            ));
        }

        // Base loss and its gradient with respect to the logits.
        let c = trace.logits.shape()[1];
        let mut logit_grad = Tensor::zeros(vec![batch, c]);
        let mut base_loss = 0.0;
        match loss {
            LossKind::SoftplusBinary => {
                if c != 1 {
                    return Err(Error::InvalidParameter(format!(
                        "softplus_binary needs a single-logit network, got {c} outputs"
                    )));
                }
                for (i, &label) in y_batch.iter().enumerate() {
                    if label != 1 && label != 2 {
                        return Err(Error::DataConsistency(format!(
                            "binary label {label} outside {{1, 2}}"
                        )));
                    }
                    let y = signed_label(label);
                    let g = trace.logits.row(i)[0];
                    base_loss += softplus(-y * g);
                    logit_grad.row_mut(i)[0] = -y * sigmoid(-y * g) / batch as f64;
                }
            }
            LossKind::SoftmaxXent => {
                for (i, &label) in y_batch.iter().enumerate() {
                    if label == 0 || label > c {
                        return Err(Error::DataConsistency(format!(
                            "label {label} outside 1..={c}"
                        )));
                    }
                    let row = trace.logits.row(i);
                    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    let sum_exp: f64 = row.iter().map(|&v| (v - max).exp()).sum();
                    let log_z = max + sum_exp.ln();
                    base_loss += log_z - row[label - 1];
                    let grad_row = logit_grad.row_mut(i);
                    for (k, (g, &v)) in grad_row.iter_mut().zip(row).enumerate() {
                        let p = (v - max).exp() / sum_exp;
                        let target = if k == label - 1 { 1.0 } else { 0.0 };
                        *g = (p - target) / batch as f64;
                    }
                }
            }
        }
        base_loss /= batch as f64;

        // Activation l1 term: mean over the batch of the summed l1 norms of
        // every ReLU output.
        let mut act_l1 = 0.0;
        if lambda_act > 0.0 {
            for (i, layer) in self.layers.iter().enumerate() {
                if matches!(layer, Layer::Relu) {
                    let out = if i + 1 < self.layers.len() {
                        &trace.layer_inputs[i + 1]
                    } else {
                        &trace.logits
                    };
                    act_l1 += out.data().iter().sum::<f64>(); // ReLU outputs are >= 0
                }
            }
            act_l1 /= batch as f64;
        }
        let total_loss = base_loss + lambda_act * act_l1;
        if !total_loss.is_finite() {
            return Err(Error::NonFinite("loss"));
        }

        let (param_grads, input_grads) =
            self.backward(&trace, logit_grad, lambda_act / batch as f64)?;
        Ok((total_loss, param_grads, input_grads))
    }

    /// Gradient of the per-example loss with respect to the input.
    pub fn input_gradient(&self, x: &Tensor, loss: LossKind, y: usize) -> Result<Tensor> {
        let mut batch_shape = vec![1];
        batch_shape.extend_from_slice(x.shape());
        let xb = x.clone().reshape(batch_shape)?;
        let (_, _, input_grads) = self.loss_and_grads(&xb, &[y], loss, 0.0)?;
        input_grads.reshape(x.shape().to_vec())
    }

    /// Logits and the gradient of every logit with respect to the input.
    ///
    /// Used by attacks (DeepFool, Carlini–Wagner) that need the full input
    /// Jacobian rather than a loss gradient.
    pub fn logit_input_gradients(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let mut batch_shape = vec![1];
        batch_shape.extend_from_slice(x.shape());
        let xb = x.clone().reshape(batch_shape)?;
        let trace = self.forward_batch(&xb)?;
        let c = trace.logits.shape()[1];
        let logits = Tensor::from_parts(vec![c], trace.logits.data().to_vec());
        let mut grads = Vec::with_capacity(c);
        for k in 0..c {
            let mut seed = Tensor::zeros(vec![1, c]);
            seed.row_mut(0)[k] = 1.0;
            let (_, input) = self.backward(&trace, seed, 0.0)?;
            grads.push(input.reshape(x.shape().to_vec())?);
        }
        Ok((logits, grads))
    }

    /// Reverse-mode pass from a gradient at the logits down to parameter
    /// and input gradients. `act_l1_per_example` is the coefficient added
    /// to every active ReLU output's gradient (the activation l1 term).
    fn backward(
        &self,
        trace: &BatchTrace,
        logit_grad: Tensor,
        act_l1_per_example: f64,
    ) -> Result<(ParamGrads, Tensor)> {
        let batch = trace.layer_inputs[0].shape()[0];
        let mut grad = logit_grad;
        let mut layer_grads: Vec<Option<LayerGrads>> = vec![None; self.layers.len()];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.layer_inputs[i];
            match layer {
                Layer::Dense { weight, mask, .. } => {
                    let flat_in = input.clone().reshape(vec![batch, weight.shape()[0]])?;
                    let mut d_weight = flat_in.transpose()?.matmul(&grad)?;
                    for (g, &m) in d_weight.data_mut().iter_mut().zip(mask.data()) {
                        *g *= m;
                    }
                    let mut d_bias = Tensor::zeros(vec![weight.shape()[1]]);
                    for i in 0..batch {
                        for (b, &g) in d_bias.data_mut().iter_mut().zip(grad.row(i)) {
                            *b += g;
                        }
                    }
                    layer_grads[i] = Some(LayerGrads { d_weight, d_bias });
                    grad = grad.matmul(&weight.transpose()?)?;
                    grad = grad.reshape(input.shape().to_vec())?;
                }
                Layer::Conv2d {
                    weight,
                    mask,
                    stride,
                    ..
                } => {
                    let (d_weight, d_bias, d_input) =
                        conv2d_backward(input, weight, *stride, &grad);
                    let mut d_weight = d_weight;
                    for (g, &m) in d_weight.data_mut().iter_mut().zip(mask.data()) {
                        *g *= m;
                    }
                    layer_grads[i] = Some(LayerGrads { d_weight, d_bias });
                    grad = d_input;
                }
                Layer::MaxPool { .. } => {
                    let routes = trace.pool_routes[i].as_ref().expect("maxpool trace");
                    let mut d_input = Tensor::zeros(input.shape().to_vec());
                    for (&src, &g) in routes.iter().zip(grad.data()) {
                        d_input.data_mut()[src] += g;
                    }
                    grad = d_input;
                }
                Layer::Relu => {
                    // Output of this layer = input of the next (or logits).
                    let mut g = grad;
                    for (gv, &iv) in g.data_mut().iter_mut().zip(input.data()) {
                        if iv > 0.0 {
                            *gv += act_l1_per_example;
                        } else {
                            *gv = 0.0;
                        }
                    }
                    grad = g;
                }
                Layer::Flatten => {
                    grad = grad.reshape(input.shape().to_vec())?;
                }
            }
        }
        if !grad.data().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("backward"));
        }
        Ok((
            ParamGrads {
                layers: layer_grads,
            },
            grad,
        ))
    }
}

/// Numerically safe softplus log(1 + e^z).
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Logistic sigmoid.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Decision rule shared by every consumer: single-logit networks decide by
/// sign (positive ↦ class 1), wider networks by first-maximum argmax.
fn predicted_label_from_row(logits: &[f64], c: usize) -> usize {
    if c == 1 {
        if logits[0] > 0.0 {
            1
        } else {
            2
        }
    } else {
        let mut best = 0;
        for (k, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = k;
            }
        }
        best + 1
    }
}

impl Tensor {
    /// Predicted label from a logit vector (see `predicted_label_from_row`).
    pub fn predicted_label(&self) -> usize {
        predicted_label_from_row(self.data(), self.len())
    }
}

/// Gathers dataset examples into a batch tensor of shape `[k, ...example]`.
pub fn gather_batch(ds: &Dataset, indices: &[usize]) -> Tensor {
    let f = ds.feature_len();
    let mut data = Vec::with_capacity(indices.len() * f);
    for &i in indices {
        data.extend_from_slice(&ds.inputs().data()[i * f..(i + 1) * f]);
    }
    let mut shape = vec![indices.len()];
    shape.extend_from_slice(&ds.example_shape());
    Tensor::from_parts(shape, data)
}

fn strip_batch_dim(t: &Tensor) -> Tensor {
    Tensor::from_parts(t.shape()[1..].to_vec(), t.data().to_vec())
}

fn conv2d_forward(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize) -> Tensor {
    let (batch, in_ch, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (out_ch, k) = (weight.shape()[0], weight.shape()[2]);
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut out = Tensor::zeros(vec![batch, out_ch, oh, ow]);
    let idata = input.data();
    let wdata = weight.data();
    let odata = out.data_mut();
    for b in 0..batch {
        for co in 0..out_ch {
            let base_o = ((b * out_ch) + co) * oh * ow;
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = bias.data()[co];
                    for ci in 0..in_ch {
                        let base_i = ((b * in_ch) + ci) * h * w;
                        let base_w = ((co * in_ch) + ci) * k * k;
                        for ky in 0..k {
                            let irow = base_i + (y * stride + ky) * w + x * stride;
                            let wrow = base_w + ky * k;
                            for kx in 0..k {
                                acc += idata[irow + kx] * wdata[wrow + kx];
                            }
                        }
                    }
                    odata[base_o + y * ow + x] = acc;
                }
            }
        }
    }
    out
}

fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (batch, in_ch, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (out_ch, k) = (weight.shape()[0], weight.shape()[2]);
    let (oh, ow) = (grad_out.shape()[2], grad_out.shape()[3]);
    let mut d_weight = Tensor::zeros(weight.shape().to_vec());
    let mut d_bias = Tensor::zeros(vec![out_ch]);
    let mut d_input = Tensor::zeros(input.shape().to_vec());
    let idata = input.data();
    let wdata = weight.data();
    let gdata = grad_out.data();
    for b in 0..batch {
        for co in 0..out_ch {
            let base_g = ((b * out_ch) + co) * oh * ow;
            for y in 0..oh {
                for x in 0..ow {
                    let g = gdata[base_g + y * ow + x];
                    if g == 0.0 {
                        continue;
                    }
                    d_bias.data_mut()[co] += g;
                    for ci in 0..in_ch {
                        let base_i = ((b * in_ch) + ci) * h * w;
                        let base_w = ((co * in_ch) + ci) * k * k;
                        for ky in 0..k {
                            let irow = base_i + (y * stride + ky) * w + x * stride;
                            let wrow = base_w + ky * k;
                            for kx in 0..k {
                                d_weight.data_mut()[wrow + kx] += idata[irow + kx] * g;
                                d_input.data_mut()[irow + kx] += wdata[wrow + kx] * g;
                            }
                        }
                    }
                }
            }
        }
    }
    (d_weight, d_bias, d_input)
}

fn maxpool_forward(input: &Tensor, window: usize, stride: usize) -> (Tensor, Vec<usize>) {
    let (batch, ch, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Tensor::zeros(vec![batch, ch, oh, ow]);
    let mut routes = vec![0usize; batch * ch * oh * ow];
    let idata = input.data();
    for b in 0..batch {
        for c in 0..ch {
            let base_i = ((b * ch) + c) * h * w;
            let base_o = ((b * ch) + c) * oh * ow;
            for y in 0..oh {
                for x in 0..ow {
                    let mut best_idx = base_i + (y * stride) * w + x * stride;
                    let mut best = idata[best_idx];
                    for ky in 0..window {
                        for kx in 0..window {
                            let idx = base_i + (y * stride + ky) * w + (x * stride + kx);
                            if idata[idx] > best {
                                best = idata[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.data_mut()[base_o + y * ow + x] = best;
                    routes[base_o + y * ow + x] = best_idx;
                }
            }
        }
    }
    (out, routes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_linear_net_reproduces_input() {
        let mut net = Network::linear(2, 2);
        if let Some((w, _, _)) = net.layers_mut()[0].weights_mut() {
            w.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        }
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let trace = net.forward(&x).unwrap();
        assert_eq!(trace.logits.data(), &[1.0, 2.0]);
    }

    #[test]
    fn dead_layer_propagates_bias_only() {
        let mut net = Network::mlp(&[2, 3, 2]).unwrap();
        // First layer weights zero, bias (1, -1, 2); second layer is
        // identity-ish so the logits are a pure function of the biases.
        if let Some((_, b, _)) = net.layers_mut()[0].weights_mut() {
            b.data_mut().copy_from_slice(&[1.0, -1.0, 2.0]);
        }
        if let Some((w, _, _)) = net.layers_mut()[2].weights_mut() {
            w.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        }
        let for_zero = net
            .forward(&Tensor::new(vec![2], vec![0.3, -0.9]).unwrap())
            .unwrap();
        // relu(bias) = (1, 0, 2); logits = W2^T (1,0,2)
        assert_eq!(for_zero.logits.data(), &[1.0 + 2.0, 0.0 + 2.0]);
    }

    #[test]
    fn lenet300_shape_chain() {
        let net = Network::mlp(&[784, 300, 100, 10]).unwrap();
        assert_eq!(net.class_count(), 10);
        let ok = Tensor::zeros(vec![784]);
        assert!(net.forward(&ok).is_ok());
        let bad = Tensor::zeros(vec![785]);
        assert!(matches!(
            net.forward(&bad).unwrap_err(),
            Error::ShapeMismatch { .. }
        ));
    }

    #[test]
    fn masked_weights_zeroed_at_construction() {
        let weight = Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap();
        let mask = Tensor::new(vec![2, 1], vec![1.0, 0.0]).unwrap();
        let net = Network::new(
            vec![2],
            vec![Layer::Dense {
                weight,
                bias: Tensor::zeros(vec![1]),
                mask,
            }],
        )
        .unwrap();
        let (w, _, _) = net.layers()[0].weights().unwrap();
        assert_eq!(w.data(), &[3.0, 0.0]);
    }

    #[test]
    fn softplus_loss_at_zero_logit_is_log2() {
        let net = Network::linear(3, 1); // zero weights → g(x) = 0
        let x = Tensor::zeros(vec![2, 3]);
        let (loss, _, _) = net
            .loss_and_grads(&x, &[1, 2], LossKind::SoftplusBinary, 0.0)
            .unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15, "{loss}");
    }

    #[test]
    fn uniform_softmax_loss_is_log_c() {
        let net = Network::linear(4, 10); // zero weights → uniform softmax
        let x = Tensor::zeros(vec![3, 4]);
        let (loss, _, _) = net
            .loss_and_grads(&x, &[1, 5, 10], LossKind::SoftmaxXent, 0.0)
            .unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let net = Network::linear(4, 3);
        let x = Tensor::zeros(vec![1, 4]);
        assert!(matches!(
            net.loss_and_grads(&x, &[4], LossKind::SoftmaxXent, 0.0)
                .unwrap_err(),
            Error::DataConsistency(_)
        ));
        let net = Network::linear(4, 1);
        assert!(matches!(
            net.loss_and_grads(&x, &[3], LossKind::SoftplusBinary, 0.0)
                .unwrap_err(),
            Error::DataConsistency(_)
        ));
    }

    #[test]
    fn linear_binary_input_gradient_sign_pattern() {
        // w = (1, -1): sign of grad must be (-y·sgn(w)) = (-1, +1) for y=+1.
        let mut net = Network::linear(2, 1);
        if let Some((w, _, _)) = net.layers_mut()[0].weights_mut() {
            w.data_mut().copy_from_slice(&[1.0, -1.0]);
        }
        let x = Tensor::new(vec![2], vec![0.2, 0.7]).unwrap();
        let g = net
            .input_gradient(&x, LossKind::SoftplusBinary, 1)
            .unwrap();
        assert!(g.data()[0] < 0.0 && g.data()[1] > 0.0, "{:?}", g.data());
    }

    #[test]
    fn zero_input_zero_bias_relu_net_has_zero_gradient() {
        let mut net = Network::mlp(&[3, 4, 2]).unwrap();
        if let Some((w, _, _)) = net.layers_mut()[0].weights_mut() {
            for v in w.data_mut() {
                *v = 0.5;
            }
        }
        let x = Tensor::zeros(vec![3]);
        let g = net.input_gradient(&x, LossKind::SoftmaxXent, 1).unwrap();
        // Pre-activations are all zero, D = 0 under the strict convention,
        // so nothing flows back to the input.
        assert!(g.data().iter().all(|&v| v == 0.0), "{:?}", g.data());
    }

    #[test]
    fn relu_trace_consistency() {
        let mut net = Network::mlp(&[3, 5, 2]).unwrap();
        let mut stream = crate::rng::Stream::new(3);
        for layer in net.layers_mut() {
            if let Some((w, b, _)) = layer.weights_mut() {
                for v in w.data_mut() {
                    *v = stream.next_gaussian();
                }
                for v in b.data_mut() {
                    *v = 0.1 * stream.next_gaussian();
                }
            }
        }
        let x = Tensor::new(vec![3], vec![0.4, -0.2, 0.9]).unwrap();
        let trace = net.forward(&x).unwrap();
        // activations[1] is the dense pre-activation, activations[2] the
        // ReLU output; the active set must match both (strict > 0).
        let pre = &trace.activations[1];
        let post = &trace.activations[2];
        let active = &trace.active_sets[0];
        #[allow(clippy::needless_range_loop)]
        for u in 0..pre.len() {
            assert_eq!(active[u], pre.data()[u] > 0.0);
            let expected = if active[u] { pre.data()[u] } else { 0.0 };
            assert_eq!(post.data()[u], expected);
        }
    }

    #[test]
    fn maxpool_routes_ties_to_first_index() {
        let input = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let (out, routes) = maxpool_forward(&input, 2, 2);
        assert_eq!(out.data(), &[1.0]);
        assert_eq!(routes, vec![0]);
    }

    #[test]
    fn lenet5_shape_chain() {
        let net = Network::lenet5();
        assert_eq!(net.class_count(), 10);
        let x = Tensor::zeros(vec![1, 28, 28]);
        let trace = net.forward(&x).unwrap();
        assert_eq!(trace.logits.len(), 10);
    }

    #[test]
    fn linear_views() {
        let net = Network::linear(4, 1);
        assert!(net.as_linear_binary().is_some());
        let net = Network::linear(4, 3);
        assert!(net.as_linear_binary().is_none());
        assert!(net.as_linear_multiclass().is_some());
        let net = Network::mlp(&[4, 3, 2]).unwrap();
        assert!(net.as_linear_multiclass().is_none());
    }
}
