//! Diagonal Fisher information estimation and score whitening.
//!
//! The Fisher information is estimated from training-set gradients as the
//! mean of their elementwise squares. Only the diagonal is kept; whitening a
//! gradient therefore multiplies each coordinate by
//! `(diag + epsilon)^(-xi / 2)`. The exponent `xi` tempers the whitening
//! (1 is the plain inverse square root) and `epsilon` guards near-zero
//! entries.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_all_finite, ensure_len, Error, Result};

/// Default additive guard on Fisher diagonal entries.
pub const DEFAULT_EPSILON: f64 = 1e-8;
/// Default whitening exponent.
pub const DEFAULT_XI: f64 = 1.0;

/// Streaming first and second moments of gradient vectors.
///
/// Accumulators are mergeable, so moments can be computed over shards and
/// combined; the merged result matches the single-pass result up to
/// floating-point rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningMoments {
    dim: usize,
    count: u64,
    mean: Vec<f64>,
    mean_sq: Vec<f64>,
    mean_log_density: f64,
}

impl RunningMoments {
    /// Empty accumulator for gradients of length `dim`.
    pub fn new(dim: usize) -> Self {
        RunningMoments {
            dim,
            count: 0,
            mean: vec![0.0; dim],
            mean_sq: vec![0.0; dim],
            mean_log_density: 0.0,
        }
    }

    /// Folds in one example's log-density and gradient.
    pub fn update(&mut self, log_density: f64, gradient: &[f64]) -> Result<()> {
        ensure_len(self.dim, gradient.len())?;
        if !log_density.is_finite() {
            return Err(Error::Domain(format!(
                "log-density must be finite, got {log_density}"
            )));
        }
        ensure_all_finite(gradient, "gradient")?;
        self.count += 1;
        let w = 1.0 / self.count as f64;
        self.mean_log_density += w * (log_density - self.mean_log_density);
        for (i, g) in gradient.iter().enumerate() {
            self.mean[i] += w * (g - self.mean[i]);
            self.mean_sq[i] += w * (g * g - self.mean_sq[i]);
        }
        Ok(())
    }

    /// Merges another accumulator over the same gradient space.
    pub fn merge(&mut self, other: &RunningMoments) -> Result<()> {
        ensure_len(self.dim, other.dim)?;
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        let total = self.count + other.count;
        let w = other.count as f64 / total as f64;
        self.mean_log_density += w * (other.mean_log_density - self.mean_log_density);
        for i in 0..self.dim {
            self.mean[i] += w * (other.mean[i] - self.mean[i]);
            self.mean_sq[i] += w * (other.mean_sq[i] - self.mean_sq[i]);
        }
        self.count = total;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Mean gradient seen so far.
    pub fn mean_gradient(&self) -> &[f64] {
        &self.mean
    }

    /// Mean of elementwise squared gradients, the raw Fisher diagonal.
    pub fn mean_squared_gradient(&self) -> &[f64] {
        &self.mean_sq
    }

    /// Mean log-density seen so far.
    pub fn mean_log_density(&self) -> f64 {
        self.mean_log_density
    }
}

/// Whitening mode: an estimated diagonal or the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FimMode {
    Diagonal,
    Identity,
}

impl Default for FimMode {
    fn default() -> Self {
        FimMode::Diagonal
    }
}

/// A finalized diagonal Fisher information with its whitening transform.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalFim {
    mode: FimMode,
    epsilon: f64,
    xi: f64,
    diag: Vec<f64>,
    // (diag + epsilon)^(-xi/2), applied elementwise when whitening.
    scale: Vec<f64>,
}

impl DiagonalFim {
    /// Builds the whitening transform from a raw diagonal estimate.
    pub fn new(diag: Vec<f64>, epsilon: f64, xi: f64) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::Empty("fisher diagonal"));
        }
        ensure_all_finite(&diag, "fisher diagonal")?;
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::Domain(format!(
                "epsilon must be finite and non-negative, got {epsilon}"
            )));
        }
        if !(xi.is_finite() && xi > 0.0) {
            return Err(Error::Domain(format!(
                "whitening exponent must be positive, got {xi}"
            )));
        }
        if let Some(bad) = diag.iter().find(|v| **v < 0.0) {
            return Err(Error::Domain(format!(
                "fisher diagonal entries must be non-negative, got {bad}"
            )));
        }
        if diag.iter().any(|v| v + epsilon <= 0.0) {
            return Err(Error::Degenerate(
                "fisher diagonal has zero entries and epsilon is zero".into(),
            ));
        }
        let scale = diag.iter().map(|v| (v + epsilon).powf(-xi / 2.0)).collect();
        Ok(DiagonalFim {
            mode: FimMode::Diagonal,
            epsilon,
            xi,
            diag,
            scale,
        })
    }

    /// Identity information: whitening leaves gradients unchanged.
    pub fn identity(dim: usize) -> Self {
        DiagonalFim {
            mode: FimMode::Identity,
            epsilon: 0.0,
            xi: DEFAULT_XI,
            diag: vec![1.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn mode(&self) -> FimMode {
        self.mode
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Applies `(diag + epsilon)^(-xi/2)` elementwise.
    pub fn whiten(&self, gradient: &[f64]) -> Result<Vec<f64>> {
        ensure_len(self.diag.len(), gradient.len())?;
        if self.mode == FimMode::Identity {
            return Ok(gradient.to_vec());
        }
        Ok(gradient
            .iter()
            .zip(&self.scale)
            .map(|(g, s)| g * s)
            .collect())
    }
}

/// Finalizes the Fisher diagonal from accumulated moments.
pub fn finalize_fim(moments: &RunningMoments, epsilon: f64, xi: f64) -> Result<DiagonalFim> {
    if moments.count() == 0 {
        return Err(Error::Empty("gradient moments"));
    }
    DiagonalFim::new(moments.mean_squared_gradient().to_vec(), epsilon, xi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn moments_match_batch_computation() {
        let grads = [
            (0.1, vec![1.0, -2.0]),
            (-0.4, vec![3.0, 0.5]),
            (0.9, vec![-1.0, 1.5]),
        ];
        let mut m = RunningMoments::new(2);
        for (ld, g) in &grads {
            m.update(*ld, g).unwrap();
        }
        let n = grads.len() as f64;
        for i in 0..2 {
            let mean: f64 = grads.iter().map(|(_, g)| g[i]).sum::<f64>() / n;
            let mean_sq: f64 = grads.iter().map(|(_, g)| g[i] * g[i]).sum::<f64>() / n;
            assert!((m.mean_gradient()[i] - mean).abs() < 1e-12);
            assert!((m.mean_squared_gradient()[i] - mean_sq).abs() < 1e-12);
        }
        let mean_ld: f64 = grads.iter().map(|(ld, _)| ld).sum::<f64>() / n;
        assert!((m.mean_log_density() - mean_ld).abs() < 1e-12);
    }

    #[test]
    fn whiten_divides_by_root_information() {
        let fim = DiagonalFim::new(vec![4.0, 0.25], 0.0, 1.0).unwrap();
        let w = fim.whiten(&[2.0, 2.0]).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-12);
        assert!((w[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn tempered_exponent_changes_the_scale() {
        let fim = DiagonalFim::new(vec![16.0], 0.0, 0.5).unwrap();
        // (16)^(-0.25) = 0.5
        assert!((fim.whiten(&[1.0]).unwrap()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identity_mode_is_a_no_op() {
        let fim = DiagonalFim::identity(3);
        assert!(fim.diagonal().iter().all(|v| *v == 1.0));
        assert_eq!(fim.whiten(&[1.0, -2.0, 3.0]).unwrap(), vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn zero_diagonal_needs_epsilon() {
        assert!(matches!(
            DiagonalFim::new(vec![0.0], 0.0, 1.0),
            Err(Error::Degenerate(_))
        ));
        assert!(DiagonalFim::new(vec![0.0], 1e-8, 1.0).is_ok());
    }

    #[test]
    fn estimated_information_approaches_identity_for_unit_gaussian_scores() {
        // Gradients of a standard normal's log-density with respect to the
        // mean are x - mean = x, whose second moment is the identity.
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let dim = 4;
        let mut m = RunningMoments::new(dim);
        for _ in 0..10000 {
            let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            m.update(0.0, &g).unwrap();
        }
        let fim = finalize_fim(&m, DEFAULT_EPSILON, DEFAULT_XI).unwrap();
        for v in fim.diagonal() {
            assert!((v - 1.0).abs() < 0.1, "diagonal entry {v}");
        }
    }

    proptest! {
        // Sharded accumulation must agree with single-pass accumulation.
        #[test]
        fn merge_matches_single_pass(seed in 0u64..1000, split in 1usize..19) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dim = 3;
            let rows: Vec<(f64, Vec<f64>)> = (0..20)
                .map(|_| {
                    let ld: f64 = rng.sample(StandardNormal);
                    let g: Vec<f64> = (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
                    (ld, g)
                })
                .collect();

            let mut single = RunningMoments::new(dim);
            for (ld, g) in &rows {
                single.update(*ld, g).unwrap();
            }
            let mut a = RunningMoments::new(dim);
            let mut b = RunningMoments::new(dim);
            for (ld, g) in &rows[..split] {
                a.update(*ld, g).unwrap();
            }
            for (ld, g) in &rows[split..] {
                b.update(*ld, g).unwrap();
            }
            a.merge(&b).unwrap();

            prop_assert_eq!(a.count(), single.count());
            prop_assert!((a.mean_log_density() - single.mean_log_density()).abs() < 1e-9);
            for i in 0..dim {
                prop_assert!((a.mean_gradient()[i] - single.mean_gradient()[i]).abs() < 1e-9);
                prop_assert!(
                    (a.mean_squared_gradient()[i] - single.mean_squared_gradient()[i]).abs() < 1e-9
                );
            }
        }

        // Whitening never produces non-finite values from finite input.
        #[test]
        fn whiten_preserves_finiteness(
            diag in proptest::collection::vec(0.0f64..1e6, 1..8),
            xi in 0.1f64..2.0,
        ) {
            let g: Vec<f64> = diag.iter().map(|v| v - 1.0).collect();
            let fim = DiagonalFim::new(diag, DEFAULT_EPSILON, xi).unwrap();
            let w = fim.whiten(&g).unwrap();
            prop_assert!(w.iter().all(|v| v.is_finite()));
        }
    }
}
