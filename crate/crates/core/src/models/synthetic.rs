//! Deterministic synthetic data sources for experiments and tests.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::DataMatrix;
use crate::error::Result;

/// `n` draws from the standard normal in `dim` dimensions.
pub fn sample_standard_normal(dim: usize, n: usize, seed: u64) -> Result<DataMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
    DataMatrix::new(values, n, dim)
}

/// `n` draws with each coordinate `|z|`, `z` standard normal: the positive
/// half-normal with mean sqrt(2/pi) per coordinate.
pub fn sample_truncated_normal(dim: usize, n: usize, seed: u64) -> Result<DataMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..n * dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal).abs())
        .collect();
    DataMatrix::new(values, n, dim)
}

/// `n` copies of the origin.
pub fn sample_dirac_zero(dim: usize, n: usize) -> Result<DataMatrix> {
    DataMatrix::new(vec![0.0; n * dim], n, dim)
}
