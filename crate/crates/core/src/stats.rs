//! Batch test statistics over gradient records.
//!
//! A gradient record is one example's log-density plus, optionally, the
//! gradient of that log-density with respect to the model parameters. Test
//! statistics map a batch of records to one number, always oriented so that
//! larger values are more anomalous (the typicality family) or so that the
//! statistic is a non-negative deviation (the score family); calibration
//! treats the upper tail as the rejection direction for all of them.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{ensure_all_finite, ensure_len, Error, Result};
use crate::fim::{DiagonalFim, RunningMoments};
use crate::models::{GaussianMixture, GenerativeModel};

/// One example's log-density and optional parameter gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientRecord {
    pub id: u64,
    pub log_density: f64,
    pub gradient: Option<Vec<f64>>,
}

impl GradientRecord {
    /// Validates finiteness of the log-density and gradient.
    pub fn new(id: u64, log_density: f64, gradient: Option<Vec<f64>>) -> Result<Self> {
        if !log_density.is_finite() {
            return Err(Error::Domain(format!(
                "log-density must be finite, got {log_density} for record {id}"
            )));
        }
        if let Some(g) = &gradient {
            ensure_all_finite(g, "gradient")?;
        }
        Ok(GradientRecord {
            id,
            log_density,
            gradient,
        })
    }
}

/// Training-set aggregates every statistic is measured against.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSummary {
    pub n_train: u64,
    pub mean_log_density: f64,
    pub mean_gradient: Vec<f64>,
    pub fim: DiagonalFim,
}

impl TrainingSummary {
    /// Validates that the mean gradient and the information diagonal agree.
    pub fn new(
        n_train: u64,
        mean_log_density: f64,
        mean_gradient: Vec<f64>,
        fim: DiagonalFim,
    ) -> Result<Self> {
        if !mean_log_density.is_finite() {
            return Err(Error::Domain(format!(
                "mean log-density must be finite, got {mean_log_density}"
            )));
        }
        ensure_all_finite(&mean_gradient, "mean gradient")?;
        ensure_len(fim.dim(), mean_gradient.len())?;
        Ok(TrainingSummary {
            n_train,
            mean_log_density,
            mean_gradient,
            fim,
        })
    }

    /// Combines streamed moments with a finalized information diagonal.
    pub fn from_moments(moments: &RunningMoments, fim: DiagonalFim) -> Result<Self> {
        TrainingSummary::new(
            moments.count(),
            moments.mean_log_density(),
            moments.mean_gradient().to_vec(),
            fim,
        )
    }

    /// Length of the flattened parameter vector.
    pub fn param_len(&self) -> usize {
        self.mean_gradient.len()
    }
}

/// The available batch test statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    /// Norm of the information-whitened mean gradient.
    Score,
    /// Absolute deviation of the batch mean log-density from training.
    Typicality,
    /// Norm of the raw mean gradient (identity whitening).
    GradNorm,
    /// Whitened distance between training and batch mean gradients.
    MmdFisher,
    /// Negated batch mean log-density.
    NegLogDensity,
    /// Kernelized form of the typicality deviation; same value by identity.
    MmdTypicality,
    /// Squared distance to the nearest mixture component.
    Mahalanobis,
}

impl StatisticKind {
    /// Every kind, in canonical report order.
    pub const ALL: [StatisticKind; 7] = [
        StatisticKind::Score,
        StatisticKind::Typicality,
        StatisticKind::GradNorm,
        StatisticKind::MmdFisher,
        StatisticKind::NegLogDensity,
        StatisticKind::MmdTypicality,
        StatisticKind::Mahalanobis,
    ];

    /// Stable lowercase tag used in files and CLI flags.
    pub fn as_str(&self) -> &'static str {
        match self {
            StatisticKind::Score => "score",
            StatisticKind::Typicality => "typicality",
            StatisticKind::GradNorm => "grad_norm",
            StatisticKind::MmdFisher => "mmd_fisher",
            StatisticKind::NegLogDensity => "neg_log_density",
            StatisticKind::MmdTypicality => "mmd_typicality",
            StatisticKind::Mahalanobis => "mahalanobis",
        }
    }

    /// Whether evaluating this kind requires per-example gradients.
    pub fn needs_gradient(&self) -> bool {
        matches!(
            self,
            StatisticKind::Score | StatisticKind::GradNorm | StatisticKind::MmdFisher
        )
    }
}

impl std::fmt::Display for StatisticKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StatisticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StatisticKind::ALL
            .iter()
            .find(|k| k.as_str() == s)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown statistic kind {s:?}")))
    }
}

/// A named series of statistic values, one per batch.
#[derive(Debug, Clone, PartialEq)]
pub struct StatisticSeries {
    pub kind: StatisticKind,
    pub values: Vec<f64>,
}

/// Mean log-density and mean gradient of the records selected by `idx`.
fn batch_means(
    kind: StatisticKind,
    records: &[GradientRecord],
    idx: &[usize],
    param_len: usize,
) -> Result<(f64, Option<Vec<f64>>)> {
    if idx.is_empty() {
        return Err(Error::Empty("statistic batch"));
    }
    let inv = 1.0 / idx.len() as f64;
    let mut mean_ld = 0.0;
    let mut mean_grad = if kind.needs_gradient() {
        Some(vec![0.0; param_len])
    } else {
        None
    };
    for &i in idx {
        let rec = &records[i];
        mean_ld += rec.log_density;
        if let Some(acc) = &mut mean_grad {
            let g = rec.gradient.as_ref().ok_or_else(|| {
                Error::Capability(format!(
                    "{kind} statistic needs gradients, record {} has none",
                    rec.id
                ))
            })?;
            ensure_len(param_len, g.len())?;
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
    }
    mean_ld *= inv;
    if let Some(acc) = &mut mean_grad {
        for a in acc.iter_mut() {
            *a *= inv;
        }
    }
    Ok((mean_ld, mean_grad))
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Evaluates `kind` on the records selected by `idx`; shared by the public
/// batch entry point and the bootstrap resampler.
pub(crate) fn evaluate_indexed(
    kind: StatisticKind,
    records: &[GradientRecord],
    idx: &[usize],
    summary: &TrainingSummary,
) -> Result<f64> {
    if kind == StatisticKind::Mahalanobis {
        return Err(Error::Capability(
            "mahalanobis is computed from a mixture model and raw observations, not records"
                .into(),
        ));
    }
    let (mean_ld, mean_grad) = batch_means(kind, records, idx, summary.param_len())?;
    Ok(match kind {
        StatisticKind::Score => l2_norm(&summary.fim.whiten(&mean_grad.unwrap())?),
        StatisticKind::GradNorm => l2_norm(&mean_grad.unwrap()),
        StatisticKind::MmdFisher => {
            let g = mean_grad.unwrap();
            let diff: Vec<f64> = summary
                .mean_gradient
                .iter()
                .zip(&g)
                .map(|(t, b)| t - b)
                .collect();
            l2_norm(&summary.fim.whiten(&diff)?)
        }
        StatisticKind::Typicality | StatisticKind::MmdTypicality => {
            (mean_ld - summary.mean_log_density).abs()
        }
        StatisticKind::NegLogDensity => -mean_ld,
        StatisticKind::Mahalanobis => unreachable!("rejected above"),
    })
}

/// Evaluates one statistic on a batch of records.
pub fn evaluate_statistic(
    kind: StatisticKind,
    batch: &[GradientRecord],
    summary: &TrainingSummary,
) -> Result<f64> {
    let idx: Vec<usize> = (0..batch.len()).collect();
    evaluate_indexed(kind, batch, &idx, summary)
}

/// Norm of the information-whitened batch mean gradient.
pub fn score_statistic(batch: &[GradientRecord], summary: &TrainingSummary) -> Result<f64> {
    evaluate_statistic(StatisticKind::Score, batch, summary)
}

/// Absolute deviation of the batch mean log-density from the training mean.
pub fn typicality_statistic(batch: &[GradientRecord], summary: &TrainingSummary) -> Result<f64> {
    evaluate_statistic(StatisticKind::Typicality, batch, summary)
}

/// Norm of the raw batch mean gradient.
pub fn grad_norm_statistic(batch: &[GradientRecord], summary: &TrainingSummary) -> Result<f64> {
    evaluate_statistic(StatisticKind::GradNorm, batch, summary)
}

/// Whitened distance between the training and batch mean gradients.
pub fn mmd_fisher_statistic(batch: &[GradientRecord], summary: &TrainingSummary) -> Result<f64> {
    evaluate_statistic(StatisticKind::MmdFisher, batch, summary)
}

/// Negated batch mean log-density.
pub fn neg_log_density_statistic(
    batch: &[GradientRecord],
    summary: &TrainingSummary,
) -> Result<f64> {
    evaluate_statistic(StatisticKind::NegLogDensity, batch, summary)
}

/// Mean-embedding form of the typicality deviation. With the distance kernel
/// on mean log-densities this reduces to exactly the typicality statistic, so
/// the two kinds always agree; the tag exists so reports can name the route.
pub fn mmd_typicality_statistic(
    batch: &[GradientRecord],
    summary: &TrainingSummary,
) -> Result<f64> {
    evaluate_statistic(StatisticKind::MmdTypicality, batch, summary)
}

/// Squared distance from `x` to the nearest mixture component.
pub fn mahalanobis_statistic(model: &GaussianMixture, x: &[f64]) -> Result<f64> {
    model.mahalanobis_min(x)
}

/// Evaluates `kind` over consecutive batches of `batch_size` records.
///
/// A trailing partial batch is dropped with a warning.
pub fn batch_series(
    kind: StatisticKind,
    records: &[GradientRecord],
    batch_size: usize,
    summary: &TrainingSummary,
) -> Result<StatisticSeries> {
    if batch_size == 0 {
        return Err(Error::Domain("batch size must be positive".into()));
    }
    if records.len() < batch_size {
        return Err(Error::Insufficient(format!(
            "need at least {batch_size} records for one batch, got {}",
            records.len()
        )));
    }
    let dropped = records.len() % batch_size;
    if dropped != 0 {
        warn!("dropping {dropped} trailing records that do not fill a batch of {batch_size}");
    }
    let mut values = Vec::with_capacity(records.len() / batch_size);
    let mut idx: Vec<usize> = (0..batch_size).collect();
    let mut start = 0;
    while start + batch_size <= records.len() {
        for (j, slot) in idx.iter_mut().enumerate() {
            *slot = start + j;
        }
        values.push(evaluate_indexed(kind, records, &idx, summary)?);
        start += batch_size;
    }
    Ok(StatisticSeries { kind, values })
}

/// Evaluates `kind` once per record.
pub fn per_example_series(
    kind: StatisticKind,
    records: &[GradientRecord],
    summary: &TrainingSummary,
) -> Result<StatisticSeries> {
    batch_series(kind, records, 1, summary)
}

/// Runs `model` over `data`, producing one record per row.
pub fn records_from_model(
    model: &dyn GenerativeModel,
    data: &DataMatrix,
    with_gradient: bool,
) -> Result<Vec<GradientRecord>> {
    let mut out = Vec::with_capacity(data.rows());
    for i in 0..data.rows() {
        let row = data.row(i);
        let log_density = model.log_density(row)?;
        let gradient = if with_gradient {
            Some(model.grad_log_density(row)?)
        } else {
            None
        };
        out.push(GradientRecord {
            id: data.id(i),
            log_density,
            gradient,
        });
    }
    Ok(out)
}

/// Streams `model` over `data`, folding log-densities and gradients into
/// moment accumulators without materializing the records.
pub fn moments_from_model(model: &dyn GenerativeModel, data: &DataMatrix) -> Result<RunningMoments> {
    let mut moments = RunningMoments::new(model.layout().total_len());
    for i in 0..data.rows() {
        let row = data.row(i);
        let ld = model.log_density(row)?;
        let grad = model.grad_log_density(row)?;
        moments.update(ld, &grad)?;
    }
    Ok(moments)
}
