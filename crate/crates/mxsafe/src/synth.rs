//! Deterministic synthetic tensors for reproducible experiments.
//!
//! The generator is fixed and fully specified so that any
//! implementation can reproduce the exact same streams from a seed:
//! a 64-bit counter generator where each draw advances the state by
//! `0x9E3779B97F4A7C15` and finalizes it with two xor-multiply rounds,
//! `z = (z ^ (z >> 30)) · 0xBF58476D1CE4E5B9`,
//! `z = (z ^ (z >> 27)) · 0x94D049BB133111EB`, then `z ^ (z >> 31)`.
//! Uniform doubles take the top 53 bits; normal deviates come from the
//! Box-Muller transform applied to consecutive uniform pairs.

use crate::matrix::Matrix;

/// The fixed stream generator. Identical seeds yield identical
/// streams on every platform and build.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform in the open interval (0, 1): the top 53 bits plus a
    /// half step, so neither endpoint can occur.
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * 2f64.powi(-53)
    }

    /// Standard normal deviate via Box-Muller on two uniform draws.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = self.next_open01();
        let u2 = self.next_open01();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Matrix of independent normal deviates with mean 0.
pub fn gaussian_matrix(rows: usize, cols: usize, sigma: f64, seed: u64) -> Matrix {
    let mut rng = SplitMix64::new(seed);
    let data = (0..rows * cols).map(|_| sigma * rng.next_gaussian()).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Matrix of positive deviates whose base-2 logarithm is normal with
/// mean 0 and the given standard deviation: `x = 2^(sigma·z)`. Large
/// `sigma` makes the magnitudes span many binades, which is what
/// stresses the underflow behavior of narrow formats.
pub fn log2_normal_matrix(rows: usize, cols: usize, sigma: f64, seed: u64) -> Matrix {
    let mut rng = SplitMix64::new(seed);
    let data = (0..rows * cols)
        .map(|_| (sigma * rng.next_gaussian()).exp2())
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// Matrix of uniform deviates in `[lo, hi)`.
pub fn uniform_matrix(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Matrix {
    assert!(lo < hi, "empty uniform range");
    let mut rng = SplitMix64::new(seed);
    let data = (0..rows * cols)
        .map(|_| lo + (hi - lo) * rng.next_open01())
        .collect();
    Matrix::from_vec(rows, cols, data)
}
