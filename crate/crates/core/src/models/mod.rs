//! Generative model families.
//!
//! Three closed-form-or-EM families are provided: diagonal-covariance
//! Gaussians, diagonal-covariance Gaussian mixtures, and probabilistic PCA.
//! Each exposes per-example log-densities and gradients of the log-density
//! with respect to a flattened parameter vector, which is all the rest of the
//! pipeline needs. Parameters with positivity constraints are stored in
//! unconstrained form (log-variances, weight logits) so that gradients and
//! serialization use one consistent coordinate system.

mod gaussian;
mod gmm;
mod ppca;
pub mod synthetic;

pub use gaussian::{fit_gaussian, fit_gaussian_mean_only, DiagonalGaussian};
pub use gmm::{fit_gmm, fit_gmm_traced, GaussianMixture};
pub use ppca::{fit_ppca, ProbabilisticPca};

pub(crate) use gmm::log_sum_exp;

use crate::error::{ensure_len, Result};
use crate::layout::{ParameterLayout, ParameterVector};

/// ln(2π), shared by every Gaussian-family density.
pub(crate) const LN_2PI: f64 = 1.8378770664093453;

/// A fitted generative model with differentiable log-density.
pub trait GenerativeModel {
    /// Dimensionality of one observation.
    fn data_dim(&self) -> usize;

    /// Layout of the flattened parameter vector.
    fn layout(&self) -> &ParameterLayout;

    /// The flattened parameters in layout order.
    fn parameters(&self) -> ParameterVector;

    /// Log-density of one observation.
    fn log_density(&self, x: &[f64]) -> Result<f64>;

    /// Gradient of the log-density with respect to the flattened parameters.
    fn grad_log_density(&self, x: &[f64]) -> Result<Vec<f64>>;
}

/// Any of the built-in model families; the unit of model serialization.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Gaussian(DiagonalGaussian),
    Mixture(GaussianMixture),
    Pca(ProbabilisticPca),
}

impl AnyModel {
    fn inner(&self) -> &dyn GenerativeModel {
        match self {
            AnyModel::Gaussian(m) => m,
            AnyModel::Mixture(m) => m,
            AnyModel::Pca(m) => m,
        }
    }

    /// Short family tag used in logs and file headers.
    pub fn family(&self) -> &'static str {
        match self {
            AnyModel::Gaussian(_) => "gaussian",
            AnyModel::Mixture(_) => "gmm",
            AnyModel::Pca(_) => "ppca",
        }
    }
}

impl GenerativeModel for AnyModel {
    fn data_dim(&self) -> usize {
        self.inner().data_dim()
    }

    fn layout(&self) -> &ParameterLayout {
        self.inner().layout()
    }

    fn parameters(&self) -> ParameterVector {
        self.inner().parameters()
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.inner().log_density(x)
    }

    fn grad_log_density(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.inner().grad_log_density(x)
    }
}

/// Log-density of a diagonal Gaussian, shared by the single-Gaussian and
/// mixture families so that a one-component mixture reproduces the Gaussian
/// value exactly.
pub(crate) fn diag_normal_log_density(
    x: &[f64],
    mean: &[f64],
    log_var: &[f64],
    var: &[f64],
) -> f64 {
    debug_assert_eq!(x.len(), mean.len());
    let mut acc = 0.0;
    for d in 0..x.len() {
        let diff = x[d] - mean[d];
        acc += log_var[d] + diff * diff / var[d];
    }
    -0.5 * (x.len() as f64 * LN_2PI + acc)
}

/// Validates an observation against the model dimension.
pub(crate) fn check_dim(model_dim: usize, x: &[f64]) -> Result<()> {
    ensure_len(model_dim, x.len())
}
