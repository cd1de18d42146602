//! Deterministic random numbers for experiments.
//!
//! Everything random in this crate (weight init, batch shuffling, Gaussian
//! data synthesis, randomised attacks, Bernoulli masks) flows through
//! [`Stream`], a SplitMix64 generator. SplitMix64 is counter-based: the
//! state advances by a fixed odd constant and each output is a strong
//! 64-bit mix of the state, so streams can be derived for arbitrary
//! `(seed, key...)` tuples and two derived streams never depend on how many
//! draws were taken from any other stream. That keeps results bit-identical
//! no matter how work is ordered or batched.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer: a bijective avalanche mix of one 64-bit word.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a well-separated substream seed from a base seed and a key path.
///
/// Used to give every (seed, purpose, index) tuple its own independent
/// stream, e.g. one stream per training run, per synthetic sample, or per
/// Monte-Carlo mask draw.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    let mut s = mix(seed ^ GOLDEN_GAMMA);
    for (i, k) in keys.iter().enumerate() {
        let salt = GOLDEN_GAMMA.wrapping_mul(i as u64 + 1);
        s = mix(s.wrapping_add(salt) ^ mix(*k));
    }
    s
}

/// A deterministic stream of pseudo-random values.
#[derive(Debug, Clone)]
pub struct Stream {
    state: u64,
    /// Box–Muller produces Gaussians in pairs; the spare is kept here.
    cached_gaussian: Option<f64>,
}

impl Stream {
    /// Stream rooted directly at `seed`.
    pub fn new(seed: u64) -> Self {
        Stream {
            state: mix(seed ^ GOLDEN_GAMMA),
            cached_gaussian: None,
        }
    }

    /// Stream for the substream identified by `keys` under `seed`.
    pub fn keyed(seed: u64, keys: &[u64]) -> Self {
        Stream {
            state: derive_seed(seed, keys),
            cached_gaussian: None,
        }
    }

    /// Next raw 64-bit value.
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    /// Uniform draw from `[0, 1)` with 53-bit resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw from `{0, 1, ..., n-1}`.
    ///
    /// Uses the multiply-shift reduction; the bias is at most `n / 2^64`,
    /// irrelevant for shuffling and sampling at this scale.
    #[inline]
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard Gaussian draw via the Box–Muller transform.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.cached_gaussian.take() {
            return z;
        }
        // u1 in (0, 1] so the log is finite; u2 in [0, 1).
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.cached_gaussian = Some(r * theta.sin());
        r * theta.cos()
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.next_index(i + 1);
            xs.swap(i, j);
        }
    }
}
