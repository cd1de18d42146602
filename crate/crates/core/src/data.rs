//! Dataset ingestion: MNIST in its native IDX format, binary class-pair
//! filtering, and synthetic Gaussian mixtures for bound verification.
//!
//! Labels are carried internally as `1..=class_count`. Binary tasks adopt
//! the convention that class 1 plays the role of +1 and class 2 the role of
//! −1; the signed value only appears at the loss/attack boundary (see
//! [`signed_label`]). MNIST digit `d` maps to internal class `d + 1`
//! ([`digit_class`]).

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Environment variable naming the directory that holds the MNIST IDX files.
pub const DATA_ROOT_ENV: &str = "SPARSE_ROB_DATA";

/// Internal class label for an MNIST digit.
pub fn digit_class(digit: u8) -> usize {
    digit as usize + 1
}

/// Signed value of a binary class label: class 1 ↦ +1, class 2 ↦ −1.
pub fn signed_label(label: usize) -> f64 {
    if label == 1 {
        1.0
    } else {
        -1.0
    }
}

/// An immutable labeled dataset.
///
/// `inputs` is `[N, features]` for flat data or `[N, C, H, W]` for images;
/// image data lies in `[0, 1]`. Synthetic diagnostic data (Gaussian
/// mixtures) is not range-constrained.
#[derive(Debug, Clone)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    /// Builds a dataset after validating the label range and input/label
    /// count agreement.
    pub fn new(inputs: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let n = inputs.shape()[0];
        if n == 0 || labels.is_empty() {
            return Err(Error::DataConsistency("dataset must be nonempty".into()));
        }
        if labels.len() != n {
            return Err(Error::DataConsistency(format!(
                "{} inputs but {} labels",
                n,
                labels.len()
            )));
        }
        if class_count < 2 {
            return Err(Error::InvalidParameter(format!(
                "class_count must be at least 2, got {class_count}"
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l == 0 || l > class_count) {
            return Err(Error::DataConsistency(format!(
                "label {bad} outside 1..={class_count}"
            )));
        }
        Ok(Dataset {
            inputs,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Number of scalar features per example.
    pub fn feature_len(&self) -> usize {
        self.inputs.len() / self.len()
    }

    /// Shape of one example (the input shape without the leading N).
    pub fn example_shape(&self) -> Vec<usize> {
        self.inputs.shape()[1..].to_vec()
    }

    /// Copy of example `i`, shaped like a single input.
    pub fn example(&self, i: usize) -> Tensor {
        let f = self.feature_len();
        let data = self.inputs.data()[i * f..(i + 1) * f].to_vec();
        Tensor::from_parts(self.example_shape(), data)
    }

    /// Same data viewed as `[N, c, h, w]` images (for convolutional models).
    pub fn with_image_shape(self, c: usize, h: usize, w: usize) -> Result<Self> {
        let n = self.len();
        let inputs = self.inputs.reshape(vec![n, c, h, w])?;
        Ok(Dataset { inputs, ..self })
    }

    /// Fraction of examples carrying each label, indexed by `label - 1`.
    pub fn class_priors(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.class_count];
        for &l in &self.labels {
            counts[l - 1] += 1;
        }
        counts
            .iter()
            .map(|&c| c as f64 / self.len() as f64)
            .collect()
    }

    /// Dataset containing only the examples at `indices`, order preserved.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::DataConsistency("subset selection is empty".into()));
        }
        let f = self.feature_len();
        let mut data = Vec::with_capacity(indices.len() * f);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.inputs.data()[i * f..(i + 1) * f]);
            labels.push(self.labels[i]);
        }
        let mut shape = self.inputs.shape().to_vec();
        shape[0] = indices.len();
        Ok(Dataset {
            inputs: Tensor::from_parts(shape, data),
            labels,
            class_count: self.class_count,
        })
    }

    /// Writes the dataset as CSV for debugging: `index,label,pixels...`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(File::create(path)?);
        let f = self.feature_len();
        let pixel_headers: Vec<String> = (0..f).map(|i| format!("p{i}")).collect();
        writeln!(out, "index,label,{}", pixel_headers.join(","))?;
        for i in 0..self.len() {
            let row: Vec<String> = self.inputs.data()[i * f..(i + 1) * f]
                .iter()
                .map(|v| format!("{v}"))
                .collect();
            writeln!(out, "{},{},{}", i, self.labels[i], row.join(","))?;
        }
        Ok(())
    }
}

fn read_u32_be(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_be_bytes(buf))
}

/// Loads an MNIST image/label file pair in the big-endian IDX format.
///
/// Pixels are scaled by 1/255 into `[0, 1]` with no mean-centering; digits
/// 0–9 become internal classes 1–10.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut images = BufReader::new(File::open(images_path)?);
    let magic = read_u32_be(&mut images)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::BadMagic {
            what: "IDX image file",
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let count = read_u32_be(&mut images)? as usize;
    let rows = read_u32_be(&mut images)? as usize;
    let cols = read_u32_be(&mut images)? as usize;
    if count == 0 || rows == 0 || cols == 0 {
        return Err(Error::DataConsistency(format!(
            "IDX image header claims {count} x {rows} x {cols}"
        )));
    }
    let mut pixels = vec![0u8; count * rows * cols];
    images.read_exact(&mut pixels)?;

    let mut labels_file = BufReader::new(File::open(labels_path)?);
    let magic = read_u32_be(&mut labels_file)?;
    if magic != LABEL_MAGIC {
        return Err(Error::BadMagic {
            what: "IDX label file",
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let label_count = read_u32_be(&mut labels_file)? as usize;
    if label_count != count {
        return Err(Error::DataConsistency(format!(
            "{count} images but {label_count} labels"
        )));
    }
    let mut raw_labels = vec![0u8; label_count];
    labels_file.read_exact(&mut raw_labels)?;
    if let Some(&bad) = raw_labels.iter().find(|&&l| l > 9) {
        return Err(Error::DataConsistency(format!(
            "MNIST label byte {bad} outside 0..=9"
        )));
    }

    let data: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&l| digit_class(l)).collect();
    Dataset::new(
        Tensor::from_parts(vec![count, rows * cols], data),
        labels,
        10,
    )
}

/// Which half of MNIST to load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnistSplit {
    Train,
    Test,
}

impl MnistSplit {
    pub fn file_names(self) -> (&'static str, &'static str) {
        match self {
            MnistSplit::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            MnistSplit::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        }
    }
}

/// Loads one MNIST split from a data directory laid out by
/// `scripts/fetch_mnist.sh`.
pub fn load_mnist_split(root: &Path, split: MnistSplit) -> Result<Dataset> {
    let (images, labels) = split.file_names();
    load_mnist_idx(&root.join(images), &root.join(labels))
}

/// Resolves the MNIST data root: an explicit path wins, otherwise the
/// `SPARSE_ROB_DATA` environment variable is consulted.
pub fn resolve_data_root(explicit: Option<&Path>) -> Option<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
}

/// Keeps only the examples labeled `a` or `b` and relabels them as a binary
/// task: `a` becomes class 1 (the +1 class), `b` becomes class 2 (the −1
/// class). Example order is preserved.
pub fn filter_pair(ds: &Dataset, a: usize, b: usize) -> Result<Dataset> {
    if a == b {
        return Err(Error::InvalidParameter(format!(
            "class pair must be distinct, got ({a}, {a})"
        )));
    }
    for &cls in &[a, b] {
        if cls == 0 || cls > ds.class_count() {
            return Err(Error::InvalidParameter(format!(
                "class {cls} outside 1..={}",
                ds.class_count()
            )));
        }
    }
    let f = ds.feature_len();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..ds.len() {
        let l = ds.label(i);
        if l == a || l == b {
            data.extend_from_slice(&ds.inputs.data()[i * f..(i + 1) * f]);
            labels.push(if l == a { 1 } else { 2 });
        }
    }
    if labels.is_empty() {
        return Err(Error::DataConsistency(format!(
            "no examples labeled {a} or {b}"
        )));
    }
    let mut shape = ds.inputs.shape().to_vec();
    shape[0] = labels.len();
    Dataset::new(Tensor::from_parts(shape, data), labels, 2)
}

/// Draws a balanced two-class Gaussian mixture: `n_per_class` samples from
/// N(μ₊, σ²I) labeled class 1 (+1) followed by `n_per_class` from
/// N(μ₋, σ²I) labeled class 2 (−1).
///
/// Sampling is keyed per `(seed, class, sample)`, so the dataset is
/// identical no matter how or where it is generated.
pub fn synth_gaussians(
    mu_plus: &Tensor,
    mu_minus: &Tensor,
    sigma: f64,
    n_per_class: usize,
    seed: u64,
) -> Result<Dataset> {
    if mu_plus.rank() != 1 || mu_minus.rank() != 1 || mu_plus.len() != mu_minus.len() {
        return Err(Error::ShapeMismatch {
            op: "synth_gaussians",
            left: mu_plus.shape().to_vec(),
            right: mu_minus.shape().to_vec(),
        });
    }
    if sigma <= 0.0 || sigma.is_nan() || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sigma must be a positive real, got {sigma}"
        )));
    }
    if n_per_class == 0 {
        return Err(Error::InvalidParameter(
            "n_per_class must be positive".into(),
        ));
    }
    let dim = mu_plus.len();
    let mut data = Vec::with_capacity(2 * n_per_class * dim);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for (class_idx, (mu, label)) in [(mu_plus, 1usize), (mu_minus, 2usize)].iter().enumerate() {
        for sample in 0..n_per_class {
            let mut stream = Stream::keyed(seed, &[class_idx as u64, sample as u64]);
            for &m in mu.data() {
                data.push(m + sigma * stream.next_gaussian());
            }
            labels.push(*label);
        }
    }
    Dataset::new(Tensor::from_parts(vec![2 * n_per_class, dim], data), labels, 2)
}
