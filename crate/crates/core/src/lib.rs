//! Laboratory for measuring how weight and activation sparsity affect the
//! adversarial robustness of linear classifiers and small ReLU networks.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] — dense row-major `f64` tensors with the handful of
//!   deterministic kernels everything else is built from;
//! * [`rng`] — a counter-based PRNG so every experiment is reproducible
//!   from a single seed;
//! * [`data`] — MNIST IDX loading, class-pair filtering, synthetic Gaussian
//!   mixtures;
//! * [`nn`] — feed-forward networks (dense / conv / pool / ReLU) with
//!   masked-weight SGD training and bit-exact checkpoints;
//! * [`attacks`] — FGS, randomised FGS, DeepFool and Carlini–Wagner l2,
//!   plus the closed forms available for linear models;
//! * [`robustness`] — the r-infinity / r-2 robustness metrics and the
//!   Gaussian-mixture bound calculators that predict them;
//! * [`lipschitz`] — layerwise Lipschitz bounds, guaranteed-radius
//!   certificates, and the Monte-Carlo study of random weight masking;
//! * [`sparsity`] — magnitude pruning and the iterative prune/retrain
//!   pipeline.

pub mod attacks;
pub mod data;
pub mod error;
pub mod lipschitz;
pub mod nn;
pub mod rng;
pub mod robustness;
pub mod sparsity;
pub mod tensor;

pub use error::{Error, Result};
