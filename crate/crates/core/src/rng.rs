//! Seeded randomness.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha::ChaCha8Rng`)
//! seeded with `seed_from_u64`; standard normals use `rand_distr::StandardNormal`
//! (ziggurat). Independent streams of the same seed are selected with
//! `set_stream`, so a reimplementation only needs ChaCha8 and the ziggurat
//! tables to replay a run.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SaltRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SaltRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Same seed, different stream.
pub fn seeded_stream(seed: u64, stream: u64) -> SaltRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal(rng: &mut SaltRng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn standard_normal_vector(rng: &mut SaltRng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| standard_normal(rng))
}

/// Entries drawn row by row.
pub fn standard_normal_matrix(rng: &mut SaltRng, rows: usize, cols: usize) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| standard_normal(rng)).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

/// Draw from `N(mean, L L^T)` given the lower Cholesky factor `L`.
pub fn gaussian_with_factor(rng: &mut SaltRng, mean: &DVector<f64>, chol_lower: &DMatrix<f64>) -> DVector<f64> {
    let z = standard_normal_vector(rng, mean.len());
    mean + chol_lower * z
}

/// Index drawn with probabilities proportional to `weights`.
pub fn categorical(rng: &mut SaltRng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}
