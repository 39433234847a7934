//! False discovery rate control over batches of hypotheses.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

/// Ground-truth label of one tested batch, when known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Inlier,
    Outlier,
}

/// A set of hypotheses to decide jointly: ids, p-values, optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisBatch {
    ids: Vec<u64>,
    p_values: Vec<f64>,
    labels: Option<Vec<Label>>,
}

impl HypothesisBatch {
    /// Validates equal lengths and p-values in (0, 1].
    pub fn new(ids: Vec<u64>, p_values: Vec<f64>, labels: Option<Vec<Label>>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Empty("hypothesis batch"));
        }
        ensure_len(ids.len(), p_values.len())?;
        if let Some(l) = &labels {
            ensure_len(ids.len(), l.len())?;
        }
        for p in &p_values {
            if !(p.is_finite() && *p > 0.0 && *p <= 1.0) {
                return Err(Error::Domain(format!(
                    "p-values must lie in (0, 1], got {p}"
                )));
            }
        }
        Ok(HypothesisBatch {
            ids,
            p_values,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn p_values(&self) -> &[f64] {
        &self.p_values
    }

    pub fn labels(&self) -> Option<&[Label]> {
        self.labels.as_deref()
    }
}

/// The outcome of one multiple-testing decision.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionReport {
    pub alpha: f64,
    /// Largest p-value rejected; 0 when nothing is rejected.
    pub threshold: f64,
    /// Ids whose p-value is at most the threshold.
    pub rejected_ids: Vec<u64>,
}

impl DecisionReport {
    pub fn n_rejected(&self) -> usize {
        self.rejected_ids.len()
    }
}

/// Benjamini-Hochberg step-up at level `alpha`.
///
/// Finds the largest k with `p_(k) <= k * alpha / m` and rejects every
/// hypothesis with `p <= p_(k)`, so tied p-values share one fate. The
/// rejection set grows monotonically with `alpha`.
pub fn benjamini_hochberg(batch: &HypothesisBatch, alpha: f64) -> Result<DecisionReport> {
    if !(alpha.is_finite() && (0.0..=1.0).contains(&alpha)) {
        return Err(Error::Domain(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let m = batch.len();
    let mut sorted: Vec<f64> = batch.p_values().to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut threshold = 0.0;
    for (i, p) in sorted.iter().enumerate().rev() {
        if *p <= (i + 1) as f64 * alpha / m as f64 {
            threshold = *p;
            break;
        }
    }
    let rejected_ids: Vec<u64> = batch
        .ids()
        .iter()
        .zip(batch.p_values())
        .filter(|(_, p)| threshold > 0.0 && **p <= threshold)
        .map(|(id, _)| *id)
        .collect();
    Ok(DecisionReport {
        alpha,
        threshold,
        rejected_ids,
    })
}

/// Empirical error rates of one decision at one level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurvePoint {
    pub alpha: f64,
    /// Rejected inliers over all inliers.
    pub type_i: f64,
    /// Accepted outliers over all outliers.
    pub type_ii: f64,
    /// Rejected inliers over all rejections.
    pub fdr: f64,
    pub n_rejected: usize,
}

/// Sweeps Benjamini-Hochberg over `alphas` and scores against labels.
///
/// Rates with an empty denominator (no inliers, no outliers, or no
/// rejections) are reported as 0.
pub fn error_curves(batch: &HypothesisBatch, alphas: &[f64]) -> Result<Vec<ErrorCurvePoint>> {
    let labels = batch.labels().ok_or_else(|| {
        Error::Capability("error curves need ground-truth labels".into())
    })?;
    if alphas.is_empty() {
        return Err(Error::Empty("alpha grid"));
    }
    let n_inlier = labels.iter().filter(|l| **l == Label::Inlier).count();
    let n_outlier = labels.len() - n_inlier;
    let mut out = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let report = benjamini_hochberg(batch, alpha)?;
        let mut false_rejects = 0usize;
        let mut true_rejects = 0usize;
        for (p, label) in batch.p_values().iter().zip(labels) {
            let rejected = report.threshold > 0.0 && *p <= report.threshold;
            if rejected {
                match label {
                    Label::Inlier => false_rejects += 1,
                    Label::Outlier => true_rejects += 1,
                }
            }
        }
        let n_rejected = false_rejects + true_rejects;
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        out.push(ErrorCurvePoint {
            alpha,
            type_i: ratio(false_rejects, n_inlier),
            type_ii: ratio(n_outlier - true_rejects, n_outlier),
            fdr: ratio(false_rejects, n_rejected),
            n_rejected,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn batch(ps: &[f64]) -> HypothesisBatch {
        let ids: Vec<u64> = (0..ps.len() as u64).collect();
        HypothesisBatch::new(ids, ps.to_vec(), None).unwrap()
    }

    #[test]
    fn textbook_example_rejects_exactly_three() {
        // At alpha = 0.1 with m = 5: thresholds 0.02, 0.04, 0.06, 0.08, 0.1;
        // the largest k with p_(k) <= k alpha / m is k = 3.
        let b = batch(&[0.01, 0.02, 0.05, 0.2, 0.9]);
        let report = benjamini_hochberg(&b, 0.1).unwrap();
        assert_eq!(report.rejected_ids, vec![0, 1, 2]);
        assert!((report.threshold - 0.05).abs() < 1e-15);
    }

    #[test]
    fn threshold_is_zero_when_nothing_rejects() {
        let b = batch(&[0.5, 0.8, 0.9]);
        let report = benjamini_hochberg(&b, 0.05).unwrap();
        assert_eq!(report.threshold, 0.0);
        assert!(report.rejected_ids.is_empty());
    }

    #[test]
    fn tied_p_values_share_one_fate() {
        // Both copies of 0.02 pass at k = 2: 0.02 <= 2 * 0.05 / 4 = 0.025.
        let b = batch(&[0.02, 0.02, 0.5, 0.9]);
        let report = benjamini_hochberg(&b, 0.05).unwrap();
        assert_eq!(report.rejected_ids, vec![0, 1]);
    }

    #[test]
    fn alpha_edge_cases() {
        let b = batch(&[0.2, 0.4]);
        assert!(benjamini_hochberg(&b, 0.0).unwrap().rejected_ids.is_empty());
        assert_eq!(benjamini_hochberg(&b, 1.0).unwrap().n_rejected(), 2);
        assert!(benjamini_hochberg(&b, 1.5).is_err());
        assert!(benjamini_hochberg(&b, f64::NAN).is_err());
    }

    #[test]
    fn error_curves_score_against_labels() {
        let ids = vec![0, 1, 2, 3];
        let ps = vec![0.001, 0.002, 0.6, 0.9];
        let labels = vec![Label::Outlier, Label::Inlier, Label::Inlier, Label::Outlier];
        let b = HypothesisBatch::new(ids, ps, Some(labels)).unwrap();
        let curves = error_curves(&b, &[0.05]).unwrap();
        let pt = curves[0];
        // Both small p-values reject: one outlier, one inlier.
        assert_eq!(pt.n_rejected, 2);
        assert!((pt.type_i - 0.5).abs() < 1e-15);
        assert!((pt.type_ii - 0.5).abs() < 1e-15);
        assert!((pt.fdr - 0.5).abs() < 1e-15);
    }

    #[test]
    fn error_curves_require_labels() {
        let b = batch(&[0.1, 0.2]);
        assert!(matches!(
            error_curves(&b, &[0.1]),
            Err(Error::Capability(_))
        ));
    }

    proptest! {
        // The threshold is always 0 or one of the observed p-values, and the
        // rejection set is exactly the p-values at or below it.
        #[test]
        fn threshold_comes_from_the_sample(
            ps in proptest::collection::vec(1e-6f64..1.0, 1..40),
            alpha in 0.01f64..0.99,
        ) {
            let b = batch(&ps);
            let report = benjamini_hochberg(&b, alpha).unwrap();
            if report.threshold > 0.0 {
                prop_assert!(ps.iter().any(|p| *p == report.threshold));
            }
            let expected: Vec<u64> = b
                .ids()
                .iter()
                .zip(b.p_values())
                .filter(|(_, p)| report.threshold > 0.0 && **p <= report.threshold)
                .map(|(id, _)| *id)
                .collect();
            prop_assert_eq!(report.rejected_ids, expected);
        }

        // Raising alpha never shrinks the rejection set.
        #[test]
        fn rejections_grow_with_alpha(
            ps in proptest::collection::vec(1e-6f64..1.0, 1..40),
            lo in 0.01f64..0.5,
            bump in 0.0f64..0.49,
        ) {
            let b = batch(&ps);
            let small = benjamini_hochberg(&b, lo).unwrap();
            let large = benjamini_hochberg(&b, lo + bump).unwrap();
            prop_assert!(large.n_rejected() >= small.n_rejected());
            for id in &small.rejected_ids {
                prop_assert!(large.rejected_ids.contains(id));
            }
        }
    }
}
