//! Shared helpers for the integration tests: independent numerical oracles
//! (kept deliberately naive so they cannot share bugs with the library) and
//! MNIST data access.

#![allow(dead_code)] // each test binary uses a different subset

use std::path::PathBuf;
use std::sync::OnceLock;

use sparserob_core::data::{self, Dataset, MnistSplit};
use sparserob_core::nn::{LossKind, Network};
use sparserob_core::rng::Stream;
use sparserob_core::tensor::Tensor;

/// Naive triple-loop matrix product, the oracle for `Tensor::matmul`.
pub fn matmul_oracle(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    assert_eq!(k, b.shape()[0]);
    let mut out = vec![0.0f64; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for kk in 0..k {
                acc += a.data()[i * k + kk] * b.data()[kk * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::new(vec![m, n], out).unwrap()
}

/// All singular values of a matrix by one-sided Jacobi rotations, sorted
/// descending. Independent oracle for the power-iteration spectral norm.
pub fn jacobi_singular_values(a: &Tensor) -> Vec<f64> {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    // Work on columns of a copy.
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..m).map(|i| a.data()[i * n + j]).collect())
        .collect();
    let tol = 1e-14;
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha: f64 = cols[p].iter().map(|v| v * v).sum();
                let beta: f64 = cols[q].iter().map(|v| v * v).sum();
                let gamma: f64 = cols[p].iter().zip(&cols[q]).map(|(x, y)| x * y).sum();
                if gamma.abs() <= tol * (alpha * beta).sqrt().max(1e-300) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                #[allow(clippy::needless_range_loop)]
                for i in 0..m {
                    let vp = cols[p][i];
                    let vq = cols[q][i];
                    cols[p][i] = c * vp - s * vq;
                    cols[q][i] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sigmas: Vec<f64> = cols
        .iter()
        .map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    sigmas.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sigmas
}

/// Central finite-difference gradient of the batch loss with respect to
/// every parameter.
pub fn fd_param_gradient(
    net: &Network,
    x: &Tensor,
    y: &[usize],
    loss: LossKind,
    lambda: f64,
    h: f64,
) -> Vec<f64> {
    let params = net.parameters();
    let mut grad = vec![0.0; params.len()];
    let mut work = net.clone();
    for i in 0..params.len() {
        let mut plus = params.clone();
        plus[i] += h;
        work.set_parameters(&plus).unwrap();
        let (lp, _, _) = work.loss_and_grads(x, y, loss, lambda).unwrap();
        let mut minus = params.clone();
        minus[i] -= h;
        work.set_parameters(&minus).unwrap();
        let (lm, _, _) = work.loss_and_grads(x, y, loss, lambda).unwrap();
        grad[i] = (lp - lm) / (2.0 * h);
    }
    grad
}

/// Central finite-difference gradient of the single-example loss with
/// respect to the input.
pub fn fd_input_gradient(net: &Network, x: &Tensor, y: usize, loss: LossKind, h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let batchify = |data: Vec<f64>| {
        let mut shape = vec![1];
        shape.extend_from_slice(x.shape());
        Tensor::new(shape, data).unwrap()
    };
    for i in 0..x.len() {
        let mut plus = x.data().to_vec();
        plus[i] += h;
        let (lp, _, _) = net
            .loss_and_grads(&batchify(plus), &[y], loss, 0.0)
            .unwrap();
        let mut minus = x.data().to_vec();
        minus[i] -= h;
        let (lm, _, _) = net
            .loss_and_grads(&batchify(minus), &[y], loss, 0.0)
            .unwrap();
        grad[i] = (lp - lm) / (2.0 * h);
    }
    grad
}

/// Largest relative error between an analytic and an oracle gradient,
/// with a small absolute floor so near-zero entries compare sanely.
pub fn max_relative_error(analytic: &[f64], oracle: &[f64]) -> f64 {
    assert_eq!(analytic.len(), oracle.len());
    analytic
        .iter()
        .zip(oracle)
        .map(|(&a, &o)| (a - o).abs() / a.abs().max(o.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Gives every dense/conv layer small random weights (for toy nets in
/// tests; training uses `init_weights`).
pub fn randomize_network(net: &mut Network, seed: u64, weight_scale: f64, bias_scale: f64) {
    let flat: Vec<f64> = {
        let mut stream = Stream::keyed(seed, &[0xBEEF]);
        net.parameters()
            .iter()
            .map(|_| stream.next_gaussian())
            .collect()
    };
    // Scale weights and biases differently: walk layers to know which is which.
    let mut scaled = Vec::with_capacity(flat.len());
    let mut cursor = 0;
    for layer in net.layers() {
        if let Some((w, b, _)) = layer.weights() {
            for _ in 0..w.len() {
                scaled.push(flat[cursor] * weight_scale);
                cursor += 1;
            }
            for _ in 0..b.len() {
                scaled.push(flat[cursor] * bias_scale);
                cursor += 1;
            }
        }
    }
    net.set_parameters(&scaled).unwrap();
}

/// Directory containing the MNIST IDX files, or a panic with instructions.
pub fn mnist_dir() -> PathBuf {
    if let Some(root) = data::resolve_data_root(None) {
        return root;
    }
    let repo_default = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    if repo_default.join("t10k-images-idx3-ubyte").exists() {
        return repo_default;
    }
    panic!(
        "MNIST data not found: run scripts/fetch_mnist.sh or set {} to the IDX directory",
        data::DATA_ROOT_ENV
    );
}

/// MNIST test split, loaded once per test binary.
pub fn mnist_test() -> &'static Dataset {
    static DS: OnceLock<Dataset> = OnceLock::new();
    DS.get_or_init(|| {
        data::load_mnist_split(&mnist_dir(), MnistSplit::Test).expect("load t10k MNIST")
    })
}

/// MNIST train split, loaded once per test binary.
pub fn mnist_train() -> &'static Dataset {
    static DS: OnceLock<Dataset> = OnceLock::new();
    DS.get_or_init(|| {
        data::load_mnist_split(&mnist_dir(), MnistSplit::Train).expect("load train MNIST")
    })
}
