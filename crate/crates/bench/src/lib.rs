//! Deterministic fixtures shared by the benchmarks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use oodkit_core::data::DataMatrix;
use oodkit_core::fim::{finalize_fim, DEFAULT_EPSILON, DEFAULT_XI};
use oodkit_core::models::{fit_gaussian, AnyModel};
use oodkit_core::stats::{moments_from_model, records_from_model, GradientRecord, TrainingSummary};

/// Standard normal rows.
pub fn normal_matrix(n: usize, dim: usize, seed: u64) -> DataMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
    DataMatrix::new(values, n, dim).unwrap()
}

/// A fitted Gaussian, its training summary, and gradient records of a fresh
/// evaluation set, sized for statistic and calibration benchmarks.
pub fn gaussian_fixture(
    n_train: usize,
    n_eval: usize,
    dim: usize,
) -> (AnyModel, TrainingSummary, Vec<GradientRecord>) {
    let train = normal_matrix(n_train, dim, 61);
    let eval = normal_matrix(n_eval, dim, 62);
    let model = AnyModel::Gaussian(fit_gaussian(&train).unwrap());
    let moments = moments_from_model(&model, &train).unwrap();
    let fim = finalize_fim(&moments, DEFAULT_EPSILON, DEFAULT_XI).unwrap();
    let summary = TrainingSummary::from_moments(&moments, fim).unwrap();
    let records = records_from_model(&model, &eval, true).unwrap();
    (model, summary, records)
}

/// Uniform p-values with a planted anomalous fraction, for decision benches.
pub fn mixed_p_values(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let u: f64 = 1.0 - rng.gen::<f64>();
            if i % 10 == 0 {
                u * 1e-4
            } else {
                u
            }
        })
        .collect()
}
