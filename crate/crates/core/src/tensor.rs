//! Dense row-major `f64` tensors.
//!
//! Everything downstream (networks, attacks, bounds) is built on this small
//! kernel set. Two properties matter more than raw speed here:
//!
//! * **Determinism.** Every reduction runs in a fixed sequential order, so
//!   repeated runs are bit-identical.
//! * **Finiteness.** No public operation lets a NaN or infinity escape:
//!   constructors validate their input and compute kernels scan their
//!   output.

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Norms defined for vectors (and, by flattening, for any tensor's entries).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PNorm {
    /// Sum of absolute values.
    L1,
    /// Euclidean norm.
    L2,
    /// Maximum absolute value.
    LInf,
}

impl PNorm {
    /// Maps the numeric values 1, 2 and +inf onto the enum; anything else is
    /// a parameter error. Useful at config/CLI boundaries.
    pub fn try_from_p(p: f64) -> Result<Self> {
        if p == 1.0 {
            Ok(PNorm::L1)
        } else if p == 2.0 {
            Ok(PNorm::L2)
        } else if p == f64::INFINITY {
            Ok(PNorm::LInf)
        } else {
            Err(Error::InvalidParameter(format!(
                "unsupported vector norm p = {p}; expected 1, 2 or inf"
            )))
        }
    }

    /// The conjugate exponent q with 1/p + 1/q = 1.
    pub fn conjugate(self) -> PNorm {
        match self {
            PNorm::L1 => PNorm::LInf,
            PNorm::L2 => PNorm::L2,
            PNorm::LInf => PNorm::L1,
        }
    }
}

/// Operator norms of the linear map `a -> W^T a` induced by a rank-2 tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpNorm {
    /// Largest singular value (p = 2).
    Spectral,
    /// Max over columns of the column l1 norm (p = inf, i.e. the
    /// l-inf -> l-inf operator norm of `W^T`).
    MaxColumnL1,
}

impl OpNorm {
    /// Maps the numeric values 2 and +inf onto the enum.
    pub fn try_from_p(p: f64) -> Result<Self> {
        if p == 2.0 {
            Ok(OpNorm::Spectral)
        } else if p == f64::INFINITY {
            Ok(OpNorm::MaxColumnL1)
        } else {
            Err(Error::InvalidParameter(format!(
                "unsupported operator norm p = {p}; expected 2 or inf"
            )))
        }
    }
}

/// A dense tensor of `f64` values in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, validating that the shape is positive, consistent
    /// with the data length, and that every entry is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "tensor shape must have positive dimensions, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::new",
                left: shape,
                right: vec![data.len()],
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("Tensor::new"));
        }
        Ok(Tensor { shape, data })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: Vec<usize>) -> Self {
        let len: usize = shape.iter().product();
        assert!(!shape.is_empty() && shape.iter().all(|&d| d > 0));
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    /// Tensor filled with a constant.
    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        assert!(value.is_finite());
        let len: usize = shape.iter().product();
        assert!(!shape.is_empty() && shape.iter().all(|&d| d > 0));
        Tensor {
            shape,
            data: vec![value; len],
        }
    }

    /// Tensor of i.i.d. Gaussian draws with the given standard deviation.
    pub fn gaussian(shape: Vec<usize>, std: f64, stream: &mut Stream) -> Self {
        let len: usize = shape.iter().product();
        assert!(!shape.is_empty() && shape.iter().all(|&d| d > 0));
        let data = (0..len).map(|_| std * stream.next_gaussian()).collect();
        Tensor { shape, data }
    }

    /// Internal constructor for values already known to be finite.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable entry access. Callers are responsible for keeping entries
    /// finite; every public compute kernel re-checks its own output.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Reinterprets the data with a new shape of the same total length.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || expected != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape.clone(),
                right: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Entry of a rank-2 tensor.
    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    /// Row `i` of a rank-2 tensor as a slice.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert_eq!(self.rank(), 2);
        let n = self.shape[1];
        &self.data[i * n..(i + 1) * n]
    }

    /// Row `i` of a rank-2 tensor as a mutable slice.
    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        debug_assert_eq!(self.rank(), 2);
        let n = self.shape[1];
        &mut self.data[i * n..(i + 1) * n]
    }

    /// Matrix product of two rank-2 tensors (`[m,k] x [k,n] -> [m,n]`).
    ///
    /// Fixed i-k-j loop order: accumulation happens row by row in a single
    /// deterministic sequence, and the inner loop runs over contiguous
    /// memory in both operands.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || rhs.rank() != 2 || self.shape[1] != rhs.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], rhs.shape[1]);
        let mut out = vec![0.0f64; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (kk, &a_ik) in a_row.iter().enumerate() {
                let b_row = &rhs.data[kk * n..(kk + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a_ik * b;
                }
            }
        }
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("matmul"));
        }
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "transpose",
                left: self.shape.clone(),
                right: vec![],
            });
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0f64; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor::from_parts(vec![n, m], out))
    }

    /// Elementwise sum; shapes must match exactly.
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    /// Elementwise difference; shapes must match exactly.
    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    /// Elementwise (Hadamard) product; shapes must match exactly.
    pub fn hadamard(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_with(rhs, "hadamard", |a, b| a * b)
    }

    fn zip_with(&self, rhs: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != rhs.shape {
            return Err(Error::ShapeMismatch {
                op: "elementwise",
                left: self.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(op));
        }
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    /// Scalar multiple.
    pub fn scale(&self, s: f64) -> Result<Tensor> {
        let data: Vec<f64> = self.data.iter().map(|&a| a * s).collect();
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("scale"));
        }
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    /// Inner product of the flattened entries; shapes must match exactly.
    pub fn dot(&self, rhs: &Tensor) -> Result<f64> {
        if self.shape != rhs.shape {
            return Err(Error::ShapeMismatch {
                op: "dot",
                left: self.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        let s: f64 = self.data.iter().zip(&rhs.data).map(|(&a, &b)| a * b).sum();
        if !s.is_finite() {
            return Err(Error::NonFinite("dot"));
        }
        Ok(s)
    }

    /// Index of the first maximal entry (ties broken toward the lower index).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    /// l1 / l2 / l-inf norm of the flattened entries.
    ///
    /// For rank-1 tensors this is the ordinary vector norm; for higher ranks
    /// it treats the tensor as one long vector (so `vector_norm(W, L2)`
    /// agrees with [`Tensor::frobenius_norm`] on matrices).
    pub fn vector_norm(&self, p: PNorm) -> f64 {
        match p {
            PNorm::L1 => self.data.iter().map(|v| v.abs()).sum(),
            PNorm::L2 => self.data.iter().map(|v| v * v).sum::<f64>().sqrt(),
            PNorm::LInf => self.data.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        }
    }

    /// Frobenius norm of a rank-2 tensor.
    pub fn frobenius_norm(&self) -> Result<f64> {
        if self.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "frobenius_norm",
                left: self.shape.clone(),
                right: vec![],
            });
        }
        Ok(self.vector_norm(PNorm::L2))
    }

    /// Maximum over columns of the column l1 norm of a rank-2 tensor.
    pub fn max_column_l1(&self) -> Result<f64> {
        if self.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "max_column_l1",
                left: self.shape.clone(),
                right: vec![],
            });
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut acc = vec![0.0f64; n];
        for i in 0..m {
            for (a, &v) in acc.iter_mut().zip(&self.data[i * n..(i + 1) * n]) {
                *a += v.abs();
            }
        }
        Ok(acc.iter().fold(0.0f64, |m, &v| m.max(v)))
    }

    /// Operator norm of the linear map `a -> W^T a`.
    ///
    /// * [`OpNorm::Spectral`]: largest singular value via power iteration
    ///   (relative tolerance 1e-8, at most 500 iterations). The iteration
    ///   starts from the all-ones direction; if that direction is annihilated
    ///   it restarts from a fixed pseudo-random vector, and finally from the
    ///   heaviest basis column, so a nonzero matrix never reports zero.
    /// * [`OpNorm::MaxColumnL1`]: the l-inf induced norm of `W^T`, which is
    ///   the maximum column l1 norm of `W`.
    pub fn operator_norm(&self, p: OpNorm) -> Result<f64> {
        match p {
            OpNorm::MaxColumnL1 => self.max_column_l1(),
            OpNorm::Spectral => self.spectral_norm(),
        }
    }

    fn spectral_norm(&self) -> Result<f64> {
        if self.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "operator_norm",
                left: self.shape.clone(),
                right: vec![],
            });
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        if self.data.iter().all(|&v| v == 0.0) {
            return Ok(0.0);
        }

        let w_v = |v: &[f64]| -> Vec<f64> {
            // u = W v, accumulated row by row.
            let mut u = vec![0.0f64; m];
            for (i, ui) in u.iter_mut().enumerate() {
                *ui = self.data[i * n..(i + 1) * n]
                    .iter()
                    .zip(v)
                    .map(|(&a, &b)| a * b)
                    .sum();
            }
            u
        };
        let wt_u = |u: &[f64]| -> Vec<f64> {
            // v = W^T u via row-major accumulation over rows of W.
            let mut v = vec![0.0f64; n];
            for (i, &ui) in u.iter().enumerate() {
                for (vj, &wij) in v.iter_mut().zip(&self.data[i * n..(i + 1) * n]) {
                    *vj += ui * wij;
                }
            }
            v
        };
        let normalize = |v: &mut [f64]| -> f64 {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                for x in v.iter_mut() {
                    *x /= norm;
                }
            }
            norm
        };

        // Starting directions, tried in order until one survives a first
        // multiplication by W.
        let starts: [Box<dyn Fn() -> Vec<f64>>; 3] = [
            Box::new(|| vec![1.0 / (n as f64).sqrt(); n]),
            Box::new(|| {
                let mut s = Stream::new(0x5eed_cafe);
                let mut v: Vec<f64> = (0..n).map(|_| s.next_gaussian()).collect();
                normalize(&mut v);
                v
            }),
            Box::new(|| {
                let mut heaviest = 0;
                let mut best = -1.0;
                for j in 0..n {
                    let col: f64 = (0..m).map(|i| self.data[i * n + j].powi(2)).sum();
                    if col > best {
                        best = col;
                        heaviest = j;
                    }
                }
                let mut v = vec![0.0; n];
                v[heaviest] = 1.0;
                v
            }),
        ];

        for start in &starts {
            let mut v = start();
            let mut sigma_prev = -1.0f64;
            let mut sigma = 0.0f64;
            for _ in 0..500 {
                let u = w_v(&v);
                sigma = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                if sigma == 0.0 {
                    break; // start vector lies in the null space; restart
                }
                let mut v_next = wt_u(&u);
                let back = normalize(&mut v_next);
                if back == 0.0 {
                    break;
                }
                v = v_next;
                if (sigma - sigma_prev).abs() <= 1e-8 * sigma.max(f64::MIN_POSITIVE) {
                    break;
                }
                sigma_prev = sigma;
            }
            if sigma > 0.0 {
                if !sigma.is_finite() {
                    return Err(Error::NonFinite("operator_norm"));
                }
                return Ok(sigma);
            }
        }
        // All starting directions were annihilated; treat as numerically zero.
        Ok(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn new_rejects_mismatched_shape() {
        let err = Tensor::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }), "{err}");
    }

    #[test]
    fn new_rejects_non_finite() {
        let err = Tensor::new(vec![2], vec![1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)), "{err}");
    }

    #[test]
    fn new_rejects_zero_dimension() {
        let err = Tensor::new(vec![0, 3], vec![]).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)), "{err}");
    }

    #[test]
    fn matmul_identity() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let id = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(a.matmul(&id).unwrap(), a);
        assert_eq!(id.matmul(&a).unwrap(), a);
    }

    #[test]
    fn matmul_known_product() {
        // 2x3 times 3x2, checked by hand.
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t(&[3, 2], &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c, t(&[2, 2], &[58.0, 64.0, 139.0, 154.0]));
    }

    #[test]
    fn matmul_annihilating_product() {
        let a = t(&[2, 2], &[1.0, 0.0, 0.0, 0.0]);
        let b = t(&[2, 2], &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(a.matmul(&b).unwrap(), Tensor::zeros(vec![2, 2]));
    }

    #[test]
    fn frobenius_of_all_ones() {
        let w = t(&[2, 2], &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(w.frobenius_norm().unwrap(), 2.0);
    }

    #[test]
    fn max_column_l1_spec_value() {
        let w = t(&[2, 2], &[1.0, -2.0, 3.0, 0.0]);
        // columns (1,3) and (-2,0): l1 norms 4 and 2
        assert_eq!(w.max_column_l1().unwrap(), 4.0);
    }

    #[test]
    fn operator_norms_of_identity() {
        let id = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert!((id.operator_norm(OpNorm::Spectral).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(id.operator_norm(OpNorm::MaxColumnL1).unwrap(), 1.0);
    }

    #[test]
    fn spectral_norm_of_diag_3_minus5() {
        let w = t(&[2, 2], &[3.0, 0.0, 0.0, -5.0]);
        let s = w.operator_norm(OpNorm::Spectral).unwrap();
        assert!((s - 5.0).abs() < 1e-8, "{s}");
    }

    #[test]
    fn linf_norm_spec_value() {
        let v = t(&[3], &[1.0, -7.0, 2.0]);
        assert_eq!(v.vector_norm(PNorm::LInf), 7.0);
        assert_eq!(v.vector_norm(PNorm::L1), 10.0);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2, 3], &[0.0; 6]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn transpose_round_trip() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let att = a.transpose().unwrap().transpose().unwrap();
        assert_eq!(a, att);
    }

    #[test]
    fn vector_norms_known_values() {
        let v = t(&[3], &[3.0, -4.0, 0.0]);
        assert_eq!(v.vector_norm(PNorm::L1), 7.0);
        assert_eq!(v.vector_norm(PNorm::L2), 5.0);
        assert_eq!(v.vector_norm(PNorm::LInf), 4.0);
    }

    #[test]
    fn norm_p_parsing() {
        assert_eq!(PNorm::try_from_p(1.0).unwrap(), PNorm::L1);
        assert_eq!(PNorm::try_from_p(f64::INFINITY).unwrap(), PNorm::LInf);
        assert!(PNorm::try_from_p(3.0).is_err());
        assert!(OpNorm::try_from_p(1.5).is_err());
    }

    #[test]
    fn max_column_l1_known_value() {
        let w = t(&[2, 3], &[1.0, -2.0, 3.0, -4.0, 5.0, -6.0]);
        // column l1 norms: 5, 7, 9
        assert_eq!(w.max_column_l1().unwrap(), 9.0);
    }

    #[test]
    fn spectral_norm_diagonal() {
        let w = t(&[3, 3], &[3.0, 0.0, 0.0, 0.0, -7.0, 0.0, 0.0, 0.0, 2.0]);
        let s = w.operator_norm(OpNorm::Spectral).unwrap();
        assert!((s - 7.0).abs() < 1e-8, "{s}");
    }

    #[test]
    fn spectral_norm_zero_matrix() {
        let w = Tensor::zeros(vec![4, 5]);
        assert_eq!(w.operator_norm(OpNorm::Spectral).unwrap(), 0.0);
    }

    #[test]
    fn spectral_norm_survives_ones_in_null_space() {
        // W annihilates the all-ones start vector: columns sum to zero.
        let w = t(&[2, 2], &[1.0, -1.0, 1.0, -1.0]);
        let s = w.operator_norm(OpNorm::Spectral).unwrap();
        assert!((s - 2.0).abs() < 1e-7, "{s}");
    }

    #[test]
    fn argmax_first_tie_wins() {
        let v = t(&[4], &[1.0, 5.0, 5.0, 2.0]);
        assert_eq!(v.argmax(), 1);
    }

    #[test]
    fn reshape_preserves_data() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = a.clone().reshape(vec![3, 2]).unwrap();
        assert_eq!(b.data(), a.data());
        assert!(a.reshape(vec![4, 2]).is_err());
    }
}
