//! Diagonal-covariance Gaussian, fitted in closed form.

use crate::data::DataMatrix;
use crate::error::{ensure_all_finite, ensure_len, Error, Result};
use crate::layout::{ParameterLayout, ParameterVector};

use super::{check_dim, diag_normal_log_density, GenerativeModel};

/// Variance floor applied by the closed-form fit.
const VAR_FLOOR: f64 = 1e-8;

/// A Gaussian with diagonal covariance.
///
/// Two parameterizations exist. The full form stores `[mean | log_variance]`
/// and its gradients span both blocks. The mean-only form fixes every
/// variance at 1 and stores `[mean]` alone, so the gradient of the
/// log-density is simply `x - mean`; it models data assumed isotropic.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    mean: Vec<f64>,
    log_var: Vec<f64>,
    // var = exp(log_var), cached at construction.
    var: Vec<f64>,
    mean_only: bool,
    layout: ParameterLayout,
}

impl DiagonalGaussian {
    /// Builds a full Gaussian from explicit parameters.
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::Empty("gaussian mean"));
        }
        ensure_len(mean.len(), log_var.len())?;
        ensure_all_finite(&mean, "gaussian mean")?;
        ensure_all_finite(&log_var, "gaussian log-variance")?;
        let var: Vec<f64> = log_var.iter().map(|lv| lv.exp()).collect();
        let layout = ParameterLayout::new([("mean", mean.len()), ("log_variance", mean.len())]);
        Ok(DiagonalGaussian {
            mean,
            log_var,
            var,
            mean_only: false,
            layout,
        })
    }

    /// Builds a mean-only Gaussian; every variance is fixed at 1.
    pub fn new_mean_only(mean: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::Empty("gaussian mean"));
        }
        ensure_all_finite(&mean, "gaussian mean")?;
        let dim = mean.len();
        let layout = ParameterLayout::new([("mean", dim)]);
        Ok(DiagonalGaussian {
            mean,
            log_var: vec![0.0; dim],
            var: vec![1.0; dim],
            mean_only: true,
            layout,
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_var(&self) -> &[f64] {
        &self.log_var
    }

    pub fn is_mean_only(&self) -> bool {
        self.mean_only
    }
}

impl GenerativeModel for DiagonalGaussian {
    fn data_dim(&self) -> usize {
        self.mean.len()
    }

    fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    fn parameters(&self) -> ParameterVector {
        let mut values = self.mean.clone();
        if !self.mean_only {
            values.extend_from_slice(&self.log_var);
        }
        ParameterVector::new(self.layout.clone(), values).expect("stored parameters are valid")
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.data_dim(), x)?;
        ensure_all_finite(x, "observation")?;
        Ok(diag_normal_log_density(x, &self.mean, &self.log_var, &self.var))
    }

    fn grad_log_density(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.data_dim(), x)?;
        ensure_all_finite(x, "observation")?;
        let d = self.data_dim();
        let mut grad = Vec::with_capacity(self.layout.total_len());
        for i in 0..d {
            grad.push((x[i] - self.mean[i]) / self.var[i]);
        }
        if !self.mean_only {
            for i in 0..d {
                let diff = x[i] - self.mean[i];
                grad.push(-0.5 + diff * diff / (2.0 * self.var[i]));
            }
        }
        Ok(grad)
    }
}

/// Maximum-likelihood fit of a full diagonal Gaussian.
///
/// Variances use the 1/N estimator and are floored at 1e-8.
pub fn fit_gaussian(data: &DataMatrix) -> Result<DiagonalGaussian> {
    let mean = data.column_means();
    let d = data.cols();
    let n = data.rows() as f64;
    let mut var = vec![0.0; d];
    for row in data.iter_rows() {
        for (v, (x, m)) in var.iter_mut().zip(row.iter().zip(&mean)) {
            let diff = x - m;
            *v += diff * diff;
        }
    }
    let log_var: Vec<f64> = var.iter().map(|v| (v / n).max(VAR_FLOOR).ln()).collect();
    DiagonalGaussian::new(mean, log_var)
}

/// Maximum-likelihood fit of the mean-only isotropic Gaussian.
pub fn fit_gaussian_mean_only(data: &DataMatrix) -> Result<DiagonalGaussian> {
    DiagonalGaussian::new_mean_only(data.column_means())
}
