//! End-to-end experiment pipelines driven by a declarative specification.
//!
//! An [`ExperimentSpec`] names the data, the model, the statistics and how to
//! calibrate and combine them. [`run_pipeline`] executes every stage in a
//! fixed order and, when an output directory is configured, persists the
//! model, the training summary, the null distributions and the CSV reports.
//! Reruns of the same spec produce byte-identical artifacts.
//!
//! Evaluation units are batches of `batch_size` test points. Units are
//! numbered in evaluation order, in-distribution test points first, so unit
//! ids are stable and collision-free even when several input files reuse ids.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{null_statistic_values, BootstrapPlan, EmpiricalCdf};
use crate::combine::{
    fisher_combine_values, harmonic_combine_values, CombineMethod, CombinedScore, DoseKde,
};
use crate::data::DataMatrix;
use crate::decision::{error_curves, ErrorCurvePoint, HypothesisBatch, Label};
use crate::error::{Error, Result};
use crate::evaluation::{auroc, ScoredPopulations};
use crate::fim::{finalize_fim, DiagonalFim, FimMode, RunningMoments, DEFAULT_EPSILON, DEFAULT_XI};
use crate::io::csv_io::{
    write_auroc_csv, write_combined_csv, write_curves_csv, write_labels_csv, write_pvalues_csv,
    write_stats_csv, AurocRow, CombinedRow, LabelRow, PValueRow, StatRow,
};
use crate::io::model_file::{
    model_fingerprint, save_model, save_null, save_summary, NullFile,
};
use crate::io::idx::load_idx;
use crate::io::records::{read_gradient_records, write_gradient_records};
use crate::models::synthetic::{
    sample_dirac_zero, sample_standard_normal, sample_truncated_normal,
};
use crate::models::{
    fit_gaussian, fit_gaussian_mean_only, fit_gmm, fit_ppca, AnyModel, GenerativeModel,
};
use crate::stats::{
    batch_series, mahalanobis_statistic, records_from_model, GradientRecord, StatisticKind,
    StatisticSeries, TrainingSummary,
};

/// Environment variable consulted when a spec omits its seed.
pub const SEED_ENV_VAR: &str = "OODKIT_SEED";

// Disjoint RNG streams are derived per role so that, e.g., synthetic train
// and test draws never overlap even though they share one experiment seed.
const ROLE_TRAIN: u64 = 1;
const ROLE_VALIDATION: u64 = 2;
const ROLE_TEST: u64 = 3;
const ROLE_TEST_OUT: u64 = 4;
const ROLE_BOOTSTRAP: u64 = 5;

fn role_seed(seed: u64, role: u64) -> u64 {
    seed.wrapping_add(role.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Where one dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Independent standard normal coordinates.
    StandardNormal { dim: usize, n: usize },
    /// Coordinate-wise absolute values of standard normals.
    TruncatedNormal { dim: usize, n: usize },
    /// Every observation at the origin.
    DiracZero { dim: usize, n: usize },
    /// An IDX image file, scaled to [0, 1].
    Idx { path: PathBuf },
    /// Precomputed log-densities and gradients.
    Records { path: PathBuf },
}

impl DataSource {
    fn is_records(&self) -> bool {
        matches!(self, DataSource::Records { .. })
    }

    fn resolve(&self, seed: u64, role: u64) -> Result<ResolvedData> {
        let data = match self {
            DataSource::StandardNormal { dim, n } => {
                ResolvedData::Matrix(sample_standard_normal(*dim, *n, role_seed(seed, role))?)
            }
            DataSource::TruncatedNormal { dim, n } => {
                ResolvedData::Matrix(sample_truncated_normal(*dim, *n, role_seed(seed, role))?)
            }
            DataSource::DiracZero { dim, n } => ResolvedData::Matrix(sample_dirac_zero(*dim, *n)?),
            DataSource::Idx { path } => ResolvedData::Matrix(load_idx(path)?),
            DataSource::Records { path } => ResolvedData::Records(read_gradient_records(path)?),
        };
        Ok(data)
    }
}

enum ResolvedData {
    Matrix(DataMatrix),
    Records(Vec<GradientRecord>),
}

/// The four datasets of an experiment. `test_out` is optional; without it
/// the run calibrates and scores but cannot report AUROC or error curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub train: DataSource,
    pub validation: DataSource,
    pub test: DataSource,
    #[serde(default)]
    pub test_out: Option<DataSource>,
}

/// Which model to fit on the training data, or load from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpec {
    Gaussian {
        #[serde(default)]
        mean_only: bool,
    },
    Gmm {
        k: usize,
    },
    Ppca {
        q: usize,
    },
    Load {
        path: PathBuf,
    },
}

/// Fisher information settings for gradient whitening.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FimSpec {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_xi")]
    pub xi: f64,
    #[serde(default)]
    pub mode: FimMode,
}

impl Default for FimSpec {
    fn default() -> Self {
        FimSpec {
            epsilon: DEFAULT_EPSILON,
            xi: DEFAULT_XI,
            mode: FimMode::Diagonal,
        }
    }
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_xi() -> f64 {
    DEFAULT_XI
}

fn default_statistics() -> Vec<StatisticKind> {
    vec![StatisticKind::Typicality, StatisticKind::Score]
}

fn default_combiner() -> CombineMethod {
    CombineMethod::Fisher
}

fn default_batch_size() -> usize {
    1
}

fn default_alphas() -> Vec<f64> {
    (1..=10).map(|i| i as f64 * 0.05).collect()
}

/// A complete, reproducible description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// RNG seed. Falls back to the `OODKIT_SEED` environment variable.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Model to fit or load. `None` requires every data source to be a
    /// records file, since raw observations cannot be scored without one.
    #[serde(default)]
    pub model: Option<ModelSpec>,
    pub data: DataSpec,
    #[serde(default = "default_statistics")]
    pub statistics: Vec<StatisticKind>,
    #[serde(default = "default_combiner")]
    pub combiner: CombineMethod,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Calibration plan. Defaults to per-example nulls for singleton batches
    /// and 10000 without-replacement subsets otherwise.
    #[serde(default)]
    pub bootstrap: Option<BootstrapPlan>,
    #[serde(default)]
    pub fim: FimSpec,
    /// False discovery rates for the error curves.
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    /// Write the computed record sets next to the other artifacts.
    #[serde(default)]
    pub persist_records: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    /// Structural checks that need no data.
    pub fn validate(&self) -> Result<()> {
        if self.statistics.is_empty() {
            return Err(Error::Config("at least one statistic is required".into()));
        }
        let distinct: BTreeSet<&str> = self.statistics.iter().map(|k| k.as_str()).collect();
        if distinct.len() != self.statistics.len() {
            return Err(Error::Config("statistics must be distinct".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let wants_mahalanobis = self.statistics.contains(&StatisticKind::Mahalanobis);
        if wants_mahalanobis && self.batch_size > 1 {
            return Err(Error::Config(
                "mahalanobis distances are per observation; use batch size 1".into(),
            ));
        }
        for a in &self.alphas {
            if !a.is_finite() || *a < 0.0 || *a > 1.0 {
                return Err(Error::Config(format!(
                    "error-curve levels must lie in [0, 1], got {a}"
                )));
            }
        }
        if self.model.is_none() {
            let mut sources = vec![&self.data.train, &self.data.validation, &self.data.test];
            if let Some(out) = &self.data.test_out {
                sources.push(out);
            }
            if !sources.iter().all(|s| s.is_records()) {
                return Err(Error::Config(
                    "without a model every data source must be a records file".into(),
                ));
            }
            if wants_mahalanobis {
                return Err(Error::Config(
                    "mahalanobis distances need a mixture model and raw observations".into(),
                ));
            }
        }
        Ok(())
    }

    /// The seed to run with: the spec field, then `OODKIT_SEED`.
    pub fn resolve_seed(&self) -> Result<u64> {
        resolve_seed_from(self.seed, std::env::var(SEED_ENV_VAR).ok().as_deref())
    }
}

fn resolve_seed_from(field: Option<u64>, env: Option<&str>) -> Result<u64> {
    if let Some(seed) = field {
        return Ok(seed);
    }
    match env {
        Some(raw) => raw.trim().parse::<u64>().map_err(|_| {
            Error::Config(format!("{SEED_ENV_VAR} must be an unsigned integer, got {raw:?}"))
        }),
        None => Err(Error::Config(format!(
            "no seed: set the spec's seed field or {SEED_ENV_VAR}"
        ))),
    }
}

/// Reads a JSON experiment spec.
pub fn load_spec(path: &Path) -> Result<ExperimentSpec> {
    let raw = std::fs::read_to_string(path)?;
    serde_json::from_str(&raw)
        .map_err(|e| Error::Config(format!("invalid experiment spec {}: {e}", path.display())))
}

/// Everything a pipeline run produces, in memory.
///
/// All per-unit vectors are parallel to `unit_ids`; per-kind vectors are
/// parallel to `kinds`.
#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub seed: u64,
    pub kinds: Vec<StatisticKind>,
    pub method: CombineMethod,
    pub batch_size: usize,
    pub plan: BootstrapPlan,
    pub summary: TrainingSummary,
    pub model: Option<AnyModel>,
    /// Sequential unit ids, in-distribution units first.
    pub unit_ids: Vec<u64>,
    /// Ground truth per unit, present when the spec has an outlier set.
    pub labels: Option<Vec<Label>>,
    pub statistics: Vec<StatisticSeries>,
    pub nulls: Vec<EmpiricalCdf>,
    /// `p_values[kind][unit]`.
    pub p_values: Vec<Vec<f64>>,
    pub combined: Vec<CombinedScore>,
    pub auroc: Vec<AurocRow>,
    pub curves: Vec<ErrorCurvePoint>,
}

impl PipelineReport {
    /// The per-unit combined p-values, always populated by the pipeline.
    pub fn combined_p_values(&self) -> Vec<f64> {
        self.combined
            .iter()
            .map(|c| c.combined_p.expect("pipeline always calibrates"))
            .collect()
    }
}

// One resolved dataset: records for statistic evaluation plus the raw matrix
// when mahalanobis distances need it.
struct Dataset {
    records: Vec<GradientRecord>,
    matrix: Option<DataMatrix>,
}

fn prepare_dataset(
    resolved: ResolvedData,
    model: Option<&AnyModel>,
    needs_records: bool,
    needs_grad: bool,
    needs_matrix: bool,
    what: &str,
) -> Result<Dataset> {
    match resolved {
        ResolvedData::Matrix(m) => {
            let records = if needs_records {
                let model = model.ok_or_else(|| {
                    Error::Config(format!("{what} observations need a model to score them"))
                })?;
                records_from_model(model, &m, needs_grad)?
            } else {
                Vec::new()
            };
            Ok(Dataset {
                records,
                matrix: Some(m),
            })
        }
        ResolvedData::Records(records) => {
            if needs_matrix {
                return Err(Error::Capability(format!(
                    "{what} is a records file; mahalanobis distances need raw observations"
                )));
            }
            if needs_grad && records.iter().any(|r| r.gradient.is_none()) {
                return Err(Error::Capability(format!(
                    "{what} records carry no gradients but a gradient statistic was requested"
                )));
            }
            Ok(Dataset {
                records,
                matrix: None,
            })
        }
    }
}

fn summary_from_train(
    train: &Dataset,
    model: Option<&AnyModel>,
    needs_grad: bool,
    fim_spec: &FimSpec,
) -> Result<TrainingSummary> {
    let dim = if needs_grad {
        match (model, train.records.first()) {
            (Some(m), _) => m.layout().total_len(),
            (None, Some(r)) => r.gradient.as_ref().map(|g| g.len()).unwrap_or(0),
            (None, None) => 0,
        }
    } else {
        0
    };
    let mut moments = RunningMoments::new(dim);
    if train.records.is_empty() {
        // Raw observations but no records were built; score them directly.
        let (matrix, model) = match (&train.matrix, model) {
            (Some(m), Some(model)) => (m, model),
            _ => return Err(Error::Empty("training data")),
        };
        for i in 0..matrix.rows() {
            let row = matrix.row(i);
            let ld = model.log_density(row)?;
            if needs_grad {
                moments.update(ld, &model.grad_log_density(row)?)?;
            } else {
                moments.update(ld, &[])?;
            }
        }
    } else {
        for r in &train.records {
            if needs_grad {
                let g = r.gradient.as_ref().ok_or_else(|| {
                    Error::Capability("training records carry no gradients".into())
                })?;
                moments.update(r.log_density, g)?;
            } else {
                moments.update(r.log_density, &[])?;
            }
        }
    }
    let fim = if !needs_grad || dim == 0 {
        DiagonalFim::identity(dim)
    } else {
        match fim_spec.mode {
            FimMode::Identity => DiagonalFim::identity(dim),
            FimMode::Diagonal => finalize_fim(&moments, fim_spec.epsilon, fim_spec.xi)?,
        }
    };
    TrainingSummary::from_moments(&moments, fim)
}

fn mixture_of<'m>(model: Option<&'m AnyModel>) -> Result<&'m crate::models::GaussianMixture> {
    match model {
        Some(AnyModel::Mixture(m)) => Ok(m),
        Some(other) => Err(Error::Capability(format!(
            "mahalanobis distances need a mixture model, got {}",
            other.family()
        ))),
        None => Err(Error::Capability(
            "mahalanobis distances need a mixture model".into(),
        )),
    }
}

fn mahalanobis_series(model: &crate::models::GaussianMixture, m: &DataMatrix) -> Result<Vec<f64>> {
    let mut values = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        values.push(mahalanobis_statistic(model, m.row(i))?);
    }
    Ok(values)
}

fn require_matrix<'d>(d: &'d Dataset, what: &str) -> Result<&'d DataMatrix> {
    d.matrix.as_ref().ok_or_else(|| {
        Error::Capability(format!(
            "{what} is a records file; mahalanobis distances need raw observations"
        ))
    })
}

/// The anomaly ordering of a combined score: Fisher and KDE scores grow with
/// anomaly, the harmonic mean p-value shrinks.
pub fn combined_anomaly_score(c: &CombinedScore) -> f64 {
    match c.method {
        CombineMethod::Fisher | CombineMethod::DoseKde => c.value,
        CombineMethod::Harmonic => -c.value,
    }
}

/// Runs every stage of an experiment and persists artifacts when the spec
/// names an output directory.
pub fn run_pipeline(spec: &ExperimentSpec) -> Result<PipelineReport> {
    spec.validate()?;
    let seed = spec.resolve_seed()?;
    let needs_grad = spec.statistics.iter().any(|k| k.needs_gradient());
    let wants_mahalanobis = spec.statistics.contains(&StatisticKind::Mahalanobis);
    let record_kinds: Vec<StatisticKind> = spec
        .statistics
        .iter()
        .copied()
        .filter(|k| *k != StatisticKind::Mahalanobis)
        .collect();
    let needs_records = !record_kinds.is_empty();

    // Stage: resolve data sources.
    let stage = |s: &'static str| move |e: Error| e.in_stage(s);
    let train_raw = spec
        .data
        .train
        .resolve(seed, ROLE_TRAIN)
        .map_err(stage("resolve_data"))?;
    let validation_raw = spec
        .data
        .validation
        .resolve(seed, ROLE_VALIDATION)
        .map_err(stage("resolve_data"))?;
    let test_raw = spec
        .data
        .test
        .resolve(seed, ROLE_TEST)
        .map_err(stage("resolve_data"))?;
    let test_out_raw = match &spec.data.test_out {
        Some(src) => Some(
            src.resolve(seed, ROLE_TEST_OUT)
                .map_err(stage("resolve_data"))?,
        ),
        None => None,
    };

    // Stage: obtain the model.
    let model: Option<AnyModel> = match &spec.model {
        None => None,
        Some(ModelSpec::Load { path }) => {
            Some(crate::io::model_file::load_model(path).map_err(stage("fit_model"))?)
        }
        Some(family) => {
            let train_matrix = match &train_raw {
                ResolvedData::Matrix(m) => m,
                ResolvedData::Records(_) => {
                    return Err(Error::Config(
                        "cannot fit a model from a records file; provide raw observations or load a model"
                            .into(),
                    )
                    .in_stage("fit_model"))
                }
            };
            let fitted = match family {
                ModelSpec::Gaussian { mean_only: false } => {
                    AnyModel::Gaussian(fit_gaussian(train_matrix).map_err(stage("fit_model"))?)
                }
                ModelSpec::Gaussian { mean_only: true } => AnyModel::Gaussian(
                    fit_gaussian_mean_only(train_matrix).map_err(stage("fit_model"))?,
                ),
                ModelSpec::Gmm { k } => {
                    AnyModel::Mixture(fit_gmm(train_matrix, *k, seed).map_err(stage("fit_model"))?)
                }
                ModelSpec::Ppca { q } => {
                    AnyModel::Pca(fit_ppca(train_matrix, *q).map_err(stage("fit_model"))?)
                }
                ModelSpec::Load { .. } => unreachable!(),
            };
            Some(fitted)
        }
    };

    // Stage: datasets to records (and matrices for mahalanobis).
    let prep = |raw, what| {
        prepare_dataset(
            raw,
            model.as_ref(),
            needs_records,
            needs_grad,
            wants_mahalanobis,
            what,
        )
        .map_err(stage("prepare_data"))
    };
    let train = prepare_dataset(
        train_raw,
        model.as_ref(),
        false,
        needs_grad,
        false,
        "training data",
    )
    .map_err(stage("prepare_data"))?;
    let validation = prep(validation_raw, "validation data")?;
    let test_in = prep(test_raw, "test data")?;
    let test_out = match test_out_raw {
        Some(raw) => Some(prep(raw, "outlier test data")?),
        None => None,
    };

    // Stage: training summary and Fisher information.
    let summary = summary_from_train(&train, model.as_ref(), needs_grad, &spec.fim)
        .map_err(stage("training_summary"))?;

    // Stage: null distributions per statistic.
    let plan = spec
        .bootstrap
        .unwrap_or_else(|| BootstrapPlan::default_for_batch(spec.batch_size, role_seed(seed, ROLE_BOOTSTRAP)));
    if plan.dataset_size != spec.batch_size && plan.resample != crate::calibration::Resample::PerExample
    {
        log::warn!(
            "null datasets have size {} but evaluation batches have size {}; \
             the calibration may not match",
            plan.dataset_size,
            spec.batch_size
        );
    }
    let mut null_raw: Vec<Vec<f64>> = Vec::with_capacity(spec.statistics.len());
    for kind in &spec.statistics {
        let values = if *kind == StatisticKind::Mahalanobis {
            let mixture = mixture_of(model.as_ref()).map_err(stage("calibration"))?;
            let matrix = require_matrix(&validation, "validation data")
                .map_err(stage("calibration"))?;
            mahalanobis_series(mixture, matrix).map_err(stage("calibration"))?
        } else {
            null_statistic_values(&validation.records, &plan, *kind, &summary)
                .map_err(stage("calibration"))?
        };
        null_raw.push(values);
    }
    let nulls: Vec<EmpiricalCdf> = null_raw
        .iter()
        .map(|v| EmpiricalCdf::from_values(v))
        .collect::<Result<_>>()
        .map_err(stage("calibration"))?;

    // Stage: test statistics. Batches never straddle the inlier/outlier
    // boundary; the two series are concatenated per kind.
    let eval_series = |ds: &Dataset, what| -> Result<Vec<Vec<f64>>> {
        let mut per_kind = Vec::with_capacity(spec.statistics.len());
        for kind in &spec.statistics {
            let values = if *kind == StatisticKind::Mahalanobis {
                let mixture = mixture_of(model.as_ref())?;
                mahalanobis_series(mixture, require_matrix(ds, what)?)?
            } else {
                batch_series(*kind, &ds.records, spec.batch_size, &summary)?.values
            };
            per_kind.push(values);
        }
        Ok(per_kind)
    };
    let series_in = eval_series(&test_in, "test data").map_err(stage("test_statistics"))?;
    let series_out = match &test_out {
        Some(ds) => Some(eval_series(ds, "outlier test data").map_err(stage("test_statistics"))?),
        None => None,
    };
    let n_in = series_in.first().map_or(0, |v| v.len());
    let n_out = series_out
        .as_ref()
        .and_then(|s| s.first())
        .map_or(0, |v| v.len());
    if n_in == 0 {
        return Err(Error::Insufficient(
            "no complete evaluation batches in the test data".into(),
        )
        .in_stage("test_statistics"));
    }
    if spec.data.test_out.is_some() && n_out == 0 {
        return Err(Error::Insufficient(
            "no complete evaluation batches in the outlier test data".into(),
        )
        .in_stage("test_statistics"));
    }
    let n_units = n_in + n_out;
    let statistics: Vec<StatisticSeries> = spec
        .statistics
        .iter()
        .enumerate()
        .map(|(j, kind)| {
            let mut values = series_in[j].clone();
            if let Some(out) = &series_out {
                values.extend_from_slice(&out[j]);
            }
            StatisticSeries {
                kind: *kind,
                values,
            }
        })
        .collect();

    // Stage: p-values against the nulls.
    let p_values: Vec<Vec<f64>> = statistics
        .iter()
        .zip(&nulls)
        .map(|(series, null)| null.p_values(&series.values))
        .collect::<Result<_>>()
        .map_err(stage("p_values"))?;

    // Stage: combine across statistics per unit.
    let combined: Vec<CombinedScore> = match spec.combiner {
        CombineMethod::Fisher | CombineMethod::Harmonic => {
            let mut out = Vec::with_capacity(n_units);
            let mut point = vec![0.0; spec.statistics.len()];
            for u in 0..n_units {
                for (j, ps) in p_values.iter().enumerate() {
                    point[j] = ps[u];
                }
                let score = match spec.combiner {
                    CombineMethod::Fisher => fisher_combine_values(&point),
                    _ => harmonic_combine_values(&point, None),
                }
                .map_err(stage("combine"))?;
                out.push(score);
            }
            out
        }
        CombineMethod::DoseKde => {
            // The KDE trains on the null statistic series; element i of each
            // series describes the same bootstrap dataset, so the null scores
            // below are scores of complete null statistic vectors.
            let train_series: Vec<StatisticSeries> = spec
                .statistics
                .iter()
                .zip(&null_raw)
                .map(|(kind, values)| StatisticSeries {
                    kind: *kind,
                    values: values.clone(),
                })
                .collect();
            let kde = DoseKde::fit(&train_series, None).map_err(stage("combine"))?;
            let n_null = null_raw[0].len();
            let mut null_scores = Vec::with_capacity(n_null);
            let mut point = vec![0.0; spec.statistics.len()];
            for i in 0..n_null {
                for (j, values) in null_raw.iter().enumerate() {
                    point[j] = values[i];
                }
                null_scores.push(kde.score(&point).map_err(stage("combine"))?.value);
            }
            let null_cdf = EmpiricalCdf::from_values(&null_scores).map_err(stage("combine"))?;
            let mut out = Vec::with_capacity(n_units);
            for u in 0..n_units {
                for (j, series) in statistics.iter().enumerate() {
                    point[j] = series.values[u];
                }
                let mut score = kde.score(&point).map_err(stage("combine"))?;
                score.combined_p = Some(null_cdf.p_value(score.value).map_err(stage("combine"))?);
                out.push(score);
            }
            out
        }
    };

    let unit_ids: Vec<u64> = (0..n_units as u64).collect();
    let labels: Option<Vec<Label>> = if test_out.is_some() {
        let mut l = vec![Label::Inlier; n_in];
        l.extend(std::iter::repeat(Label::Outlier).take(n_out));
        Some(l)
    } else {
        None
    };

    // Stage: threshold-free ranking quality, when outliers are available.
    let mut auroc_rows: Vec<AurocRow> = Vec::new();
    if n_out > 0 {
        for (j, kind) in spec.statistics.iter().enumerate() {
            let pop = ScoredPopulations::new(series_in[j].clone(), series_out.as_ref().unwrap()[j].clone())
                .map_err(stage("evaluation"))?;
            auroc_rows.push(AurocRow {
                name: kind.as_str().to_string(),
                auroc: auroc(&pop).map_err(stage("evaluation"))?,
            });
        }
        let scores: Vec<f64> = combined.iter().map(combined_anomaly_score).collect();
        let pop = ScoredPopulations::new(scores[..n_in].to_vec(), scores[n_in..].to_vec())
            .map_err(stage("evaluation"))?;
        auroc_rows.push(AurocRow {
            name: format!("combined_{}", spec.combiner.as_str()),
            auroc: auroc(&pop).map_err(stage("evaluation"))?,
        });
    }

    // Stage: multiple-testing error curves over the requested levels.
    let combined_p: Vec<f64> = combined
        .iter()
        .map(|c| c.combined_p.expect("combiners always calibrate here"))
        .collect();
    let curves = if labels.is_some() && !spec.alphas.is_empty() {
        let batch = HypothesisBatch::new(unit_ids.clone(), combined_p, labels.clone())
            .map_err(stage("decision"))?;
        error_curves(&batch, &spec.alphas).map_err(stage("decision"))?
    } else {
        Vec::new()
    };

    let report = PipelineReport {
        seed,
        kinds: spec.statistics.clone(),
        method: spec.combiner,
        batch_size: spec.batch_size,
        plan,
        summary,
        model,
        unit_ids,
        labels,
        statistics,
        nulls,
        p_values,
        combined,
        auroc: auroc_rows,
        curves,
    };

    if let Some(dir) = &spec.output_dir {
        persist(spec, &report, &train, &validation, &test_in, test_out.as_ref(), dir)
            .map_err(stage("persist"))?;
    }
    Ok(report)
}

fn persist(
    spec: &ExperimentSpec,
    report: &PipelineReport,
    train: &Dataset,
    validation: &Dataset,
    test_in: &Dataset,
    test_out: Option<&Dataset>,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;

    // The spec echo records the resolved seed and plan so the run can be
    // reproduced even when they came from the environment or defaults.
    let echo = ExperimentSpec {
        seed: Some(report.seed),
        bootstrap: Some(report.plan),
        ..spec.clone()
    };
    let spec_json = serde_json::to_string_pretty(&echo)
        .map_err(|e| Error::Format(format!("spec serialization failed: {e}")))?;
    std::fs::write(dir.join("spec.json"), spec_json + "\n")?;

    if let Some(model) = &report.model {
        save_model(&dir.join("model.oodm"), model)?;
    }
    save_summary(&dir.join("summary.oods"), &report.summary)?;

    let model_hash = match &report.model {
        Some(m) => model_fingerprint(m)?,
        None => 0,
    };
    for (kind, cdf) in report.kinds.iter().zip(&report.nulls) {
        let null = NullFile {
            kind: *kind,
            model_hash,
            plan: report.plan,
            cdf: cdf.clone(),
        };
        save_null(&dir.join(format!("null_{}.oodn", kind.as_str())), &null)?;
    }

    let mut stat_rows = Vec::new();
    let mut p_rows = Vec::new();
    for (j, series) in report.statistics.iter().enumerate() {
        for (u, id) in report.unit_ids.iter().enumerate() {
            stat_rows.push(StatRow {
                id: *id,
                kind: series.kind,
                value: series.values[u],
            });
            p_rows.push(PValueRow {
                id: *id,
                kind: series.kind,
                p_value: report.p_values[j][u],
            });
        }
    }
    write_stats_csv(&dir.join("stats.csv"), &stat_rows)?;
    write_pvalues_csv(&dir.join("pvalues.csv"), &p_rows)?;

    let combined_rows: Vec<CombinedRow> = report
        .unit_ids
        .iter()
        .zip(&report.combined)
        .map(|(id, c)| CombinedRow {
            id: *id,
            method: c.method,
            value: c.value,
            combined_p: c.combined_p,
        })
        .collect();
    write_combined_csv(&dir.join("combined.csv"), &combined_rows)?;

    if let Some(labels) = &report.labels {
        let rows: Vec<LabelRow> = report
            .unit_ids
            .iter()
            .zip(labels)
            .map(|(id, label)| LabelRow {
                id: *id,
                label: *label,
            })
            .collect();
        write_labels_csv(&dir.join("labels.csv"), &rows)?;
    }
    if !report.auroc.is_empty() {
        write_auroc_csv(&dir.join("auroc.csv"), &report.auroc)?;
    }
    if !report.curves.is_empty() {
        write_curves_csv(&dir.join("bh_curves.csv"), &report.curves)?;
    }

    if spec.persist_records {
        // Training records are not built during the run (moments stream over
        // the raw observations), so export them here; they let a later run
        // reproduce this one without the model.
        if !train.records.is_empty() {
            write_gradient_records(&dir.join("records_train.oodk"), &train.records)?;
        } else if let (Some(matrix), Some(model)) = (&train.matrix, &report.model) {
            let needs_grad = report.kinds.iter().any(|k| k.needs_gradient());
            let records = records_from_model(model, matrix, needs_grad)?;
            write_gradient_records(&dir.join("records_train.oodk"), &records)?;
        }
        if !validation.records.is_empty() {
            write_gradient_records(&dir.join("records_validation.oodk"), &validation.records)?;
        }
        if !test_in.records.is_empty() {
            write_gradient_records(&dir.join("records_test.oodk"), &test_in.records)?;
        }
        if let Some(out) = test_out {
            if !out.records.is_empty() {
                write_gradient_records(&dir.join("records_test_out.oodk"), &out.records)?;
            }
        }
    }
    Ok(())
}
