//! Null distributions and p-values from empirical CDFs.
//!
//! Statistics are calibrated against a null sample bootstrapped from
//! validation records. P-values use add-one smoothing,
//! `p = (1 + #{null >= t}) / (n + 1)`, so they are never zero and ties count
//! toward the anomalous tail. Every statistic rejects in its upper tail.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{ensure_all_finite, Error, Result};
use crate::models::GenerativeModel;
use crate::stats::{
    evaluate_indexed, records_from_model, GradientRecord, StatisticKind, TrainingSummary,
};

/// Default number of bootstrap datasets for replacement-based plans.
pub const DEFAULT_N_DATASETS: usize = 10000;

/// A sorted empirical sample acting as a null distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    /// Sorts and validates a null sample.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("null sample"));
        }
        ensure_all_finite(values, "null sample")?;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(EmpiricalCdf { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// The sorted null sample.
    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    /// Right-continuous empirical CDF, `#{v <= t} / n`.
    pub fn evaluate(&self, t: f64) -> f64 {
        let le = self.sorted.partition_point(|v| *v <= t);
        le as f64 / self.sorted.len() as f64
    }

    /// Upper-tail p-value with add-one smoothing.
    ///
    /// Bounded inside `[1/(n+1), 1]`; ties with null values count as at
    /// least as extreme.
    pub fn p_value(&self, t: f64) -> Result<f64> {
        if !t.is_finite() {
            return Err(Error::Domain(format!(
                "statistic must be finite, got {t}"
            )));
        }
        let n = self.sorted.len();
        let ge = n - self.sorted.partition_point(|v| *v < t);
        Ok((1 + ge) as f64 / (n + 1) as f64)
    }

    /// P-values for a whole series.
    pub fn p_values(&self, ts: &[f64]) -> Result<Vec<f64>> {
        ts.iter().map(|t| self.p_value(*t)).collect()
    }
}

/// How bootstrap datasets are drawn from the validation records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resample {
    /// Each validation record is its own singleton dataset.
    PerExample,
    /// Datasets are distinct-index subsets of the validation records.
    WithoutReplacement,
    /// Datasets are drawn with replacement.
    WithReplacement,
}

/// A reproducible plan for building a null distribution.
///
/// `n_datasets` is ignored by [`Resample::PerExample`], which always yields
/// one dataset per validation record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapPlan {
    pub resample: Resample,
    pub n_datasets: usize,
    pub dataset_size: usize,
    pub seed: u64,
}

impl BootstrapPlan {
    /// One singleton dataset per validation record.
    pub fn per_example() -> Self {
        BootstrapPlan {
            resample: Resample::PerExample,
            n_datasets: 0,
            dataset_size: 1,
            seed: 0,
        }
    }

    /// `n_datasets` subsets of `dataset_size` distinct records.
    pub fn without_replacement(n_datasets: usize, dataset_size: usize, seed: u64) -> Self {
        BootstrapPlan {
            resample: Resample::WithoutReplacement,
            n_datasets,
            dataset_size,
            seed,
        }
    }

    /// `n_datasets` datasets of `dataset_size` records drawn with replacement.
    pub fn with_replacement(n_datasets: usize, dataset_size: usize, seed: u64) -> Self {
        BootstrapPlan {
            resample: Resample::WithReplacement,
            n_datasets,
            dataset_size,
            seed,
        }
    }

    /// The default plan for a given evaluation batch size: singleton batches
    /// calibrate per example, larger batches subsample without replacement.
    pub fn default_for_batch(batch_size: usize, seed: u64) -> Self {
        if batch_size <= 1 {
            BootstrapPlan::per_example()
        } else {
            BootstrapPlan::without_replacement(DEFAULT_N_DATASETS, batch_size, seed)
        }
    }

    /// Checks the plan against the number of validation records.
    pub fn validate(&self, n_validation: usize) -> Result<()> {
        if n_validation == 0 {
            return Err(Error::Empty("validation records"));
        }
        match self.resample {
            Resample::PerExample => {
                if self.dataset_size != 1 {
                    return Err(Error::Config(format!(
                        "per-example calibration uses singleton datasets, got size {}",
                        self.dataset_size
                    )));
                }
            }
            Resample::WithoutReplacement | Resample::WithReplacement => {
                if self.dataset_size == 0 || self.n_datasets == 0 {
                    return Err(Error::Config(
                        "bootstrap plans need a positive dataset size and count".into(),
                    ));
                }
                if self.resample == Resample::WithoutReplacement
                    && self.dataset_size > n_validation
                {
                    return Err(Error::Insufficient(format!(
                        "cannot draw {} distinct records from {n_validation}",
                        self.dataset_size
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Builds the null distribution of `kind` from validation records.
pub fn build_null(
    records: &[GradientRecord],
    plan: &BootstrapPlan,
    kind: StatisticKind,
    summary: &TrainingSummary,
) -> Result<EmpiricalCdf> {
    EmpiricalCdf::from_values(&null_statistic_values(records, plan, kind, summary)?)
}

/// The raw null sample behind [`build_null`], in dataset order.
///
/// The resampling RNG is reseeded from the plan on every call, so calls with
/// different `kind` draw the same datasets; element `i` of each returned
/// series describes the same bootstrap dataset.
pub fn null_statistic_values(
    records: &[GradientRecord],
    plan: &BootstrapPlan,
    kind: StatisticKind,
    summary: &TrainingSummary,
) -> Result<Vec<f64>> {
    plan.validate(records.len())?;
    let n = records.len();
    let mut values;
    match plan.resample {
        Resample::PerExample => {
            values = Vec::with_capacity(n);
            let mut idx = [0usize];
            for i in 0..n {
                idx[0] = i;
                values.push(evaluate_indexed(kind, records, &idx, summary)?);
            }
        }
        Resample::WithoutReplacement => {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            values = Vec::with_capacity(plan.n_datasets);
            // Partial Fisher-Yates over a reusable index pool.
            let mut pool: Vec<usize> = (0..n).collect();
            let m = plan.dataset_size;
            for _ in 0..plan.n_datasets {
                for j in 0..m {
                    let pick = rng.gen_range(j..n);
                    pool.swap(j, pick);
                }
                values.push(evaluate_indexed(kind, records, &pool[..m], summary)?);
            }
        }
        Resample::WithReplacement => {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            values = Vec::with_capacity(plan.n_datasets);
            let mut idx = vec![0usize; plan.dataset_size];
            for _ in 0..plan.n_datasets {
                for slot in idx.iter_mut() {
                    *slot = rng.gen_range(0..n);
                }
                values.push(evaluate_indexed(kind, records, &idx, summary)?);
            }
        }
    }
    Ok(values)
}

/// Kolmogorov-Smirnov distance between a sample and the uniform CDF on [0,1].
pub fn ks_distance_uniform(sample: &[f64]) -> Result<f64> {
    ks_distance(sample, |t| t.clamp(0.0, 1.0))
}

/// Kolmogorov-Smirnov distance between a sample and a reference CDF.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::Empty("ks sample"));
    }
    ensure_all_finite(sample, "ks sample")?;
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut worst = 0.0f64;
    for (i, v) in sorted.iter().enumerate() {
        let f = cdf(*v);
        let hi = (i + 1) as f64 / n - f;
        let lo = f - i as f64 / n;
        worst = worst.max(hi).max(lo);
    }
    Ok(worst)
}

/// End-to-end calibration self-check under the null hypothesis.
///
/// Builds a per-example null for `kind` from `validation`, evaluates fresh
/// `test` points drawn from the same distribution, and returns the KS
/// distance of their p-values from uniform. Small distances mean the
/// calibration is honest.
pub fn null_p_value_uniformity_check(
    model: &dyn GenerativeModel,
    summary: &TrainingSummary,
    kind: StatisticKind,
    validation: &DataMatrix,
    test: &DataMatrix,
) -> Result<f64> {
    let with_grad = kind.needs_gradient();
    let val_records = records_from_model(model, validation, with_grad)?;
    let null = build_null(&val_records, &BootstrapPlan::per_example(), kind, summary)?;
    let test_records = records_from_model(model, test, with_grad)?;
    let mut p = Vec::with_capacity(test_records.len());
    for i in 0..test_records.len() {
        let t = evaluate_indexed(kind, &test_records, &[i], summary)?;
        p.push(null.p_value(t)?);
    }
    ks_distance_uniform(&p)
}
