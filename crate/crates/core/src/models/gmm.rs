//! Diagonal-covariance Gaussian mixture fitted by EM.

use log::warn;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::DataMatrix;
use crate::error::{ensure_all_finite, ensure_len, Error, Result};
use crate::layout::{ParameterLayout, ParameterVector};

use super::{check_dim, diag_normal_log_density, GenerativeModel};

/// Variance floor applied after every M-step.
const VAR_FLOOR: f64 = 1e-6;
/// Relative log-likelihood improvement below which EM stops.
const REL_TOL: f64 = 1e-6;
/// Hard cap on EM iterations.
const MAX_ITERS: usize = 500;

/// A mixture of diagonal Gaussians.
///
/// Weights are stored as unconstrained logits; the normalized log-weights and
/// variances are cached at construction. The flattened parameter vector is
/// `[logit_weight (k) | mean (k*d) | log_variance (k*d)]` with components in
/// row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    logits: Vec<f64>,
    means: Vec<f64>,
    log_var: Vec<f64>,
    // Normalized log-weights and plain variances, derived once.
    log_w: Vec<f64>,
    var: Vec<f64>,
    k: usize,
    d: usize,
    layout: ParameterLayout,
}

impl GaussianMixture {
    /// Builds a mixture from explicit flat parameters.
    ///
    /// `means` and `log_vars` are `k * d` row-major; `logits` need not be
    /// normalized, component weights are their softmax.
    pub fn new(logits: Vec<f64>, means: Vec<f64>, log_vars: Vec<f64>, d: usize) -> Result<Self> {
        let k = logits.len();
        if k == 0 || d == 0 {
            return Err(Error::Empty("mixture parameters"));
        }
        ensure_len(k * d, means.len())?;
        ensure_len(k * d, log_vars.len())?;
        ensure_all_finite(&logits, "mixture logits")?;
        ensure_all_finite(&means, "mixture means")?;
        ensure_all_finite(&log_vars, "mixture log-variances")?;
        let lse = log_sum_exp(&logits);
        let log_w: Vec<f64> = logits.iter().map(|l| l - lse).collect();
        let var: Vec<f64> = log_vars.iter().map(|lv| lv.exp()).collect();
        let layout = ParameterLayout::new([
            ("logit_weight", k),
            ("mean", k * d),
            ("log_variance", k * d),
        ]);
        Ok(GaussianMixture {
            logits,
            means,
            log_var: log_vars,
            log_w,
            var,
            k,
            d,
            layout,
        })
    }

    pub fn n_components(&self) -> usize {
        self.k
    }

    /// Normalized component weights.
    pub fn weights(&self) -> Vec<f64> {
        self.log_w.iter().map(|lw| lw.exp()).collect()
    }

    pub fn component_mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.d..(k + 1) * self.d]
    }

    pub fn component_log_var(&self, k: usize) -> &[f64] {
        &self.log_var[k * self.d..(k + 1) * self.d]
    }

    fn component_var(&self, k: usize) -> &[f64] {
        &self.var[k * self.d..(k + 1) * self.d]
    }

    /// Per-component joint log-densities `log w_k + log N_k(x)`.
    fn component_log_joint(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for k in 0..self.k {
            out.push(
                self.log_w[k]
                    + diag_normal_log_density(
                        x,
                        self.component_mean(k),
                        self.component_log_var(k),
                        self.component_var(k),
                    ),
            );
        }
    }

    /// Squared Mahalanobis distance of `x` to its closest component.
    ///
    /// Smaller is more typical; the evaluation pipeline negates or ranks as
    /// needed. Uses component covariances only, ignoring weights.
    pub fn mahalanobis_min(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.d, x)?;
        ensure_all_finite(x, "observation")?;
        let mut best = f64::INFINITY;
        for k in 0..self.k {
            let mean = self.component_mean(k);
            let var = self.component_var(k);
            let mut q = 0.0;
            for i in 0..self.d {
                let diff = x[i] - mean[i];
                q += diff * diff / var[i];
            }
            best = best.min(q);
        }
        Ok(best)
    }
}

impl GenerativeModel for GaussianMixture {
    fn data_dim(&self) -> usize {
        self.d
    }

    fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    fn parameters(&self) -> ParameterVector {
        let mut values = Vec::with_capacity(self.layout.total_len());
        values.extend_from_slice(&self.logits);
        values.extend_from_slice(&self.means);
        values.extend_from_slice(&self.log_var);
        ParameterVector::new(self.layout.clone(), values).expect("stored parameters are valid")
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.d, x)?;
        ensure_all_finite(x, "observation")?;
        let mut joint = Vec::with_capacity(self.k);
        self.component_log_joint(x, &mut joint);
        Ok(log_sum_exp(&joint))
    }

    fn grad_log_density(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.d, x)?;
        ensure_all_finite(x, "observation")?;
        let mut joint = Vec::with_capacity(self.k);
        self.component_log_joint(x, &mut joint);
        let lse = log_sum_exp(&joint);

        let mut grad = vec![0.0; self.layout.total_len()];
        let (k, d) = (self.k, self.d);
        for c in 0..k {
            // Posterior responsibility of component c for x.
            let r = (joint[c] - lse).exp();
            let w = self.log_w[c].exp();
            grad[c] = r - w;
            let mean = self.component_mean(c);
            let var = self.component_var(c);
            for i in 0..d {
                let diff = x[i] - mean[i];
                grad[k + c * d + i] = r * diff / var[i];
                grad[k + k * d + c * d + i] = r * (-0.5 + diff * diff / (2.0 * var[i]));
            }
        }
        Ok(grad)
    }
}

/// Numerically stable log(Σ exp(v)).
pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// EM starting point.
struct EmInit {
    weights: Vec<f64>,
    means: Vec<f64>,
    vars: Vec<f64>,
}

/// Fits a `k`-component mixture by EM; convergence trace discarded.
pub fn fit_gmm(data: &DataMatrix, k: usize, seed: u64) -> Result<GaussianMixture> {
    fit_gmm_traced(data, k, seed).map(|(model, _)| model)
}

/// Fits a `k`-component mixture by EM.
///
/// Initialization draws centers by distance-squared-weighted sampling from
/// the data; variances start at the global per-column variance and weights
/// uniform. Returns the fitted model together with the mean log-likelihood
/// after each E-step, which is non-decreasing up to floating-point noise.
pub fn fit_gmm_traced(data: &DataMatrix, k: usize, seed: u64) -> Result<(GaussianMixture, Vec<f64>)> {
    if k == 0 {
        return Err(Error::Domain("mixture needs at least one component".into()));
    }
    if data.rows() < k {
        return Err(Error::Insufficient(format!(
            "{} components need at least {} points, got {}",
            k,
            k,
            data.rows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = init_centers(data, k, &mut rng);
    em_fit(data, init)
}

/// Distance-squared-weighted center seeding plus global-variance spreads.
fn init_centers(data: &DataMatrix, k: usize, rng: &mut ChaCha8Rng) -> EmInit {
    let (n, d) = (data.rows(), data.cols());
    let mut means = Vec::with_capacity(k * d);
    let first = rng.gen_range(0..n);
    means.extend_from_slice(data.row(first));

    // Squared distance from each point to its nearest chosen center.
    let mut dist2 = vec![0.0f64; n];
    for (i, row) in data.iter_rows().enumerate() {
        dist2[i] = sq_dist(row, &means[..d]);
    }
    for c in 1..k {
        let total: f64 = dist2.iter().sum();
        let pick = if total > 0.0 {
            WeightedIndex::new(&dist2)
                .map(|w| w.sample(rng))
                .unwrap_or_else(|_| rng.gen_range(0..n))
        } else {
            rng.gen_range(0..n)
        };
        let start = c * d;
        means.extend_from_slice(data.row(pick));
        for (i, row) in data.iter_rows().enumerate() {
            dist2[i] = dist2[i].min(sq_dist(row, &means[start..start + d]));
        }
    }

    // Each component starts with the global spread of the data.
    let global_mean = data.column_means();
    let mut global_var = vec![0.0; d];
    for row in data.iter_rows() {
        for (v, (x, m)) in global_var.iter_mut().zip(row.iter().zip(&global_mean)) {
            let diff = x - m;
            *v += diff * diff;
        }
    }
    for v in &mut global_var {
        *v = (*v / n as f64).max(VAR_FLOOR);
    }
    let mut vars = Vec::with_capacity(k * d);
    for _ in 0..k {
        vars.extend_from_slice(&global_var);
    }
    EmInit {
        weights: vec![1.0 / k as f64; k],
        means,
        vars,
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// EM main loop; factored out so tests can inject pathological starts.
fn em_fit(data: &DataMatrix, init: EmInit) -> Result<(GaussianMixture, Vec<f64>)> {
    let (n, d) = (data.rows(), data.cols());
    let k = init.weights.len();
    let nf = n as f64;

    let mut weights = init.weights;
    let mut means = init.means;
    let mut vars = init.vars;
    // Global spread, reused when a component empties out.
    let reinit_var = vars[..d].to_vec();

    let mut trace = Vec::new();
    let mut joint = vec![0.0f64; k];
    let mut resp = vec![0.0f64; k];

    for iter in 0..MAX_ITERS {
        let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
        let log_var: Vec<f64> = vars.iter().map(|v| v.ln()).collect();

        // E-step fused with the weight and mean accumulators.
        let mut ll = 0.0;
        let mut nk = vec![0.0f64; k];
        let mut mean_acc = vec![0.0f64; k * d];
        // Least-likely point, used to revive empty components.
        let mut worst = (f64::INFINITY, 0usize);
        for (i, row) in data.iter_rows().enumerate() {
            let lse = e_step_point(row, &log_w, &means, &log_var, &vars, d, &mut joint, &mut resp);
            ll += lse;
            if lse < worst.0 {
                worst = (lse, i);
            }
            for c in 0..k {
                let r = resp[c];
                nk[c] += r;
                let acc = &mut mean_acc[c * d..(c + 1) * d];
                for (a, x) in acc.iter_mut().zip(row) {
                    *a += r * x;
                }
            }
        }
        trace.push(ll / nf);

        let mut new_means = vec![0.0f64; k * d];
        let mut empty = Vec::new();
        for c in 0..k {
            if nk[c] > 0.0 {
                for i in 0..d {
                    new_means[c * d + i] = mean_acc[c * d + i] / nk[c];
                }
            } else {
                empty.push(c);
            }
        }

        // Variance pass: responsibilities from the current parameters,
        // centered on the updated means.
        let mut var_acc = vec![0.0f64; k * d];
        for row in data.iter_rows() {
            e_step_point(row, &log_w, &means, &log_var, &vars, d, &mut joint, &mut resp);
            for c in 0..k {
                let r = resp[c];
                let mean_c = &new_means[c * d..(c + 1) * d];
                let acc = &mut var_acc[c * d..(c + 1) * d];
                for i in 0..d {
                    let diff = row[i] - mean_c[i];
                    acc[i] += r * diff * diff;
                }
            }
        }

        let mut new_weights = vec![0.0f64; k];
        let mut new_vars = vec![0.0f64; k * d];
        for c in 0..k {
            if nk[c] > 0.0 {
                new_weights[c] = nk[c] / nf;
                for i in 0..d {
                    new_vars[c * d + i] = (var_acc[c * d + i] / nk[c]).max(VAR_FLOOR);
                }
            }
        }
        for &c in &empty {
            warn!("component {c} received no responsibility; re-seeding from the least likely point");
            new_weights[c] = 1.0 / nf;
            new_means[c * d..(c + 1) * d].copy_from_slice(data.row(worst.1));
            new_vars[c * d..(c + 1) * d].copy_from_slice(&reinit_var);
        }
        if !empty.is_empty() {
            let total: f64 = new_weights.iter().sum();
            for w in &mut new_weights {
                *w /= total;
            }
        }

        weights = new_weights;
        means = new_means;
        vars = new_vars;

        if iter > 0 {
            let prev = trace[iter - 1];
            let cur = trace[iter];
            if (cur - prev).abs() <= REL_TOL * prev.abs().max(f64::MIN_POSITIVE) {
                break;
            }
            if iter == MAX_ITERS - 1 {
                warn!("EM stopped at the iteration cap without meeting the tolerance");
            }
        }
    }

    let logits: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let log_vars: Vec<f64> = vars.iter().map(|v| v.ln()).collect();
    let model = GaussianMixture::new(logits, means, log_vars, d)?;
    Ok((model, trace))
}

/// Joint log-densities and responsibilities for one point; returns log p(x).
#[allow(clippy::too_many_arguments)]
fn e_step_point(
    row: &[f64],
    log_w: &[f64],
    means: &[f64],
    log_var: &[f64],
    vars: &[f64],
    d: usize,
    joint: &mut [f64],
    resp: &mut [f64],
) -> f64 {
    let k = log_w.len();
    for c in 0..k {
        joint[c] = log_w[c]
            + diag_normal_log_density(
                row,
                &means[c * d..(c + 1) * d],
                &log_var[c * d..(c + 1) * d],
                &vars[c * d..(c + 1) * d],
            );
    }
    let lse = log_sum_exp(joint);
    for c in 0..k {
        resp[c] = (joint[c] - lse).exp();
    }
    lse
}
