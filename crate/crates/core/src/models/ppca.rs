//! Probabilistic PCA with isotropic residual noise, fitted in closed form.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::data::DataMatrix;
use crate::error::{ensure_all_finite, ensure_len, Error, Result};
use crate::layout::{ParameterLayout, ParameterVector};

use super::{check_dim, GenerativeModel, LN_2PI};

/// Floor for the fitted residual noise variance.
const NOISE_FLOOR: f64 = 1e-8;
/// Rows per block when accumulating the sample covariance.
const COV_CHUNK: usize = 512;

/// Probabilistic PCA: `x = mean + W z + noise`, `z ~ N(0, I_q)`,
/// `noise ~ N(0, sigma^2 I)`.
///
/// The observation covariance is `C = W Wᵀ + sigma^2 I`; densities and
/// gradients use the Woodbury identity so every evaluation costs
/// `O(D q + q^2)` after construction. The flattened parameters are
/// `[mean | loading (row-major D x q) | log_noise_variance]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilisticPca {
    mean: Vec<f64>,
    loading: DMatrix<f64>,
    log_sigma2: f64,
    sigma2: f64,
    // Caches derived from (loading, sigma2): M = sigma^2 I + WᵀW.
    m_inv: DMatrix<f64>,
    w_minv: DMatrix<f64>,
    log_det_c: f64,
    tr_precision: f64,
    degenerate: bool,
    layout: ParameterLayout,
}

impl ProbabilisticPca {
    /// Builds a model from explicit parameters; `loading` is row-major `d x q`.
    pub fn new(mean: Vec<f64>, loading: Vec<f64>, q: usize, log_sigma2: f64) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::Empty("ppca mean"));
        }
        if q == 0 || q >= d {
            return Err(Error::Infeasible(format!(
                "latent dimension must satisfy 0 < q < {d}, got {q}"
            )));
        }
        ensure_len(d * q, loading.len())?;
        ensure_all_finite(&mean, "ppca mean")?;
        ensure_all_finite(&loading, "ppca loading")?;
        if !log_sigma2.is_finite() {
            return Err(Error::Domain(format!(
                "log noise variance must be finite, got {log_sigma2}"
            )));
        }

        let w = DMatrix::from_row_slice(d, q, &loading);
        let sigma2 = log_sigma2.exp();
        let m = DMatrix::identity(q, q) * sigma2 + w.transpose() * &w;
        let chol = Cholesky::new(m).ok_or_else(|| {
            Error::Degenerate("ppca latent covariance is not positive definite".into())
        })?;
        let log_det_m: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let m_inv = chol.inverse();
        let w_minv = &w * &m_inv;
        let log_det_c = (d - q) as f64 * log_sigma2 + log_det_m;
        // tr(C^-1) with C = sigma^2 I + W Wᵀ reduces to a q x q trace.
        let tr_precision = (d - q) as f64 / sigma2 + m_inv.trace();

        let layout = ParameterLayout::new([
            ("mean", d),
            ("loading", d * q),
            ("log_noise_variance", 1),
        ]);
        Ok(ProbabilisticPca {
            mean,
            loading: w,
            log_sigma2,
            sigma2,
            m_inv,
            w_minv,
            log_det_c,
            tr_precision,
            degenerate: false,
            layout,
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Loading matrix in row-major order.
    pub fn loading_row_major(&self) -> Vec<f64> {
        let (d, q) = self.loading.shape();
        let mut out = Vec::with_capacity(d * q);
        for i in 0..d {
            for j in 0..q {
                out.push(self.loading[(i, j)]);
            }
        }
        out
    }

    pub fn latent_dim(&self) -> usize {
        self.loading.ncols()
    }

    pub fn log_noise_variance(&self) -> f64 {
        self.log_sigma2
    }

    /// True when the fit clamped a retained eigenvalue at the noise level.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub(crate) fn set_degenerate(&mut self, flag: bool) {
        self.degenerate = flag;
    }

    /// `C^-1 (x - mean)` via Woodbury.
    fn precision_residual(&self, x: &[f64]) -> DVector<f64> {
        let delta = DVector::from_fn(self.mean.len(), |i, _| x[i] - self.mean[i]);
        let t = self.loading.transpose() * &delta;
        let s = &self.m_inv * t;
        (&delta - &self.loading * s) / self.sigma2
    }
}

impl GenerativeModel for ProbabilisticPca {
    fn data_dim(&self) -> usize {
        self.mean.len()
    }

    fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    fn parameters(&self) -> ParameterVector {
        let mut values = self.mean.clone();
        values.extend(self.loading_row_major());
        values.push(self.log_sigma2);
        ParameterVector::new(self.layout.clone(), values).expect("stored parameters are valid")
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.data_dim(), x)?;
        ensure_all_finite(x, "observation")?;
        let d = self.data_dim() as f64;
        let p_delta = self.precision_residual(x);
        let mut quad = 0.0;
        for (i, pd) in p_delta.iter().enumerate() {
            quad += (x[i] - self.mean[i]) * pd;
        }
        Ok(-0.5 * (d * LN_2PI + self.log_det_c + quad))
    }

    fn grad_log_density(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.data_dim(), x)?;
        ensure_all_finite(x, "observation")?;
        let (d, q) = self.loading.shape();
        let p_delta = self.precision_residual(x);
        // d/dW: (C^-1 d)(C^-1 d)ᵀ W - C^-1 W, with C^-1 W = W M^-1.
        let wt_pd = self.loading.transpose() * &p_delta;

        let mut grad = Vec::with_capacity(self.layout.total_len());
        grad.extend(p_delta.iter());
        for i in 0..d {
            for j in 0..q {
                grad.push(p_delta[i] * wt_pd[j] - self.w_minv[(i, j)]);
            }
        }
        let pd_norm2: f64 = p_delta.iter().map(|v| v * v).sum();
        grad.push(self.sigma2 * (-0.5 * self.tr_precision + 0.5 * pd_norm2));
        Ok(grad)
    }
}

/// Closed-form maximum-likelihood PPCA fit with `q` latent dimensions.
///
/// The noise variance is the mean of the `d - q` smallest covariance
/// eigenvalues, floored at 1e-8. Retained eigenvalues below the noise level
/// clamp their loading to zero and mark the model degenerate.
pub fn fit_ppca(data: &DataMatrix, q: usize) -> Result<ProbabilisticPca> {
    let (n, d) = (data.rows(), data.cols());
    if q == 0 || q >= d {
        return Err(Error::Infeasible(format!(
            "latent dimension must satisfy 0 < q < {d}, got {q}"
        )));
    }
    if n < 2 {
        return Err(Error::Insufficient(
            "ppca needs at least two data points".into(),
        ));
    }
    let mean = data.column_means();

    // Sample covariance accumulated in row blocks to bound the working set.
    let mut cov = DMatrix::zeros(d, d);
    let mut start = 0;
    while start < n {
        let rows = COV_CHUNK.min(n - start);
        let block = DMatrix::from_fn(rows, d, |r, c| data.row(start + r)[c] - mean[c]);
        cov.gemm_tr(1.0, &block, &block, 1.0);
        start += rows;
    }
    cov /= n as f64;

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let tail: f64 = order[q..]
        .iter()
        .map(|&i| eig.eigenvalues[i].max(0.0))
        .sum();
    let sigma2 = (tail / (d - q) as f64).max(NOISE_FLOOR);

    let mut degenerate = tail / (d - q) as f64 <= NOISE_FLOOR;
    let mut loading = vec![0.0; d * q];
    for (j, &idx) in order[..q].iter().enumerate() {
        let gap = eig.eigenvalues[idx] - sigma2;
        degenerate |= gap < 0.0;
        let scale = gap.max(0.0).sqrt();
        let col = eig.eigenvectors.column(idx);
        // Fix the eigenvector sign so fits are reproducible.
        let lead = col
            .iter()
            .cloned()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(1.0);
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            loading[i * q + j] = sign * scale * col[i];
        }
    }

    let mut model = ProbabilisticPca::new(mean, loading, q, sigma2.ln())?;
    model.set_degenerate(degenerate);
    Ok(model)
}
