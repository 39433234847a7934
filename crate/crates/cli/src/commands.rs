//! One handler per subcommand, each a thin wrapper over a library call.
//!
//! The handlers parse nothing themselves; flags arrive typed from clap and
//! every failure is a library error so the exit-code mapping in `main` stays
//! uniform.

use std::collections::HashMap;

use serde_json::json;

use oodkit_core::calibration::{build_null, BootstrapPlan};
use oodkit_core::combine::{
    fisher_combine_values, harmonic_combine_values, CombineMethod, CombinedScore,
};
use oodkit_core::data::DataMatrix;
use oodkit_core::decision::{benjamini_hochberg, error_curves, HypothesisBatch, Label};
use oodkit_core::error::{Error, Result};
use oodkit_core::evaluation::pipeline::{combined_anomaly_score, load_spec, run_pipeline, SEED_ENV_VAR};
use oodkit_core::evaluation::{auroc as auroc_of, run_gaussian_failure_modes, ScoredPopulations};
use oodkit_core::fim::{finalize_fim, RunningMoments};
use oodkit_core::io::csv_io::{
    read_combined_csv, read_labels_csv, read_pvalues_csv, read_stats_csv, write_auroc_csv,
    write_combined_csv, write_curves_csv, write_decisions_csv, write_pvalues_csv, write_stats_csv,
    AurocRow, CombinedRow, DecisionRow, PValueRow, StatRow,
};
use oodkit_core::io::idx::load_idx;
use oodkit_core::io::model_file::{
    load_model, load_null, load_summary, model_fingerprint, save_model, save_null, save_summary,
    NullFile,
};
use oodkit_core::io::records::{read_gradient_records, RecordReader};
use oodkit_core::models::{
    fit_gaussian, fit_gaussian_mean_only, fit_gmm, fit_ppca, AnyModel, GaussianMixture,
    GenerativeModel,
};
use oodkit_core::stats::{
    batch_series, mahalanobis_statistic, moments_from_model, records_from_model, GradientRecord,
    StatisticKind, TrainingSummary,
};

use crate::{
    AurocArgs, BhArgs, CalibrateArgs, CombineArgs, FimArgs, FitArgs, GaussianDemoArgs,
    PvaluesArgs, RunArgs, StatsArgs,
};

/// Seed precedence for subcommands: the flag, then OODKIT_SEED, then zero.
fn seed_or_default(flag: Option<u64>) -> Result<u64> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var(SEED_ENV_VAR) {
        Ok(raw) => raw.trim().parse::<u64>().map_err(|_| {
            Error::Config(format!(
                "{SEED_ENV_VAR} must be an unsigned integer, got {raw:?}"
            ))
        }),
        Err(_) => Ok(0),
    }
}

pub fn fit(args: FitArgs) -> Result<()> {
    let reject = |flag: &str, family: &str| -> Result<()> {
        Err(Error::Config(format!("{flag} only applies to {family}")))
    };
    let data = load_idx(&args.data)?;
    let seed = seed_or_default(args.seed)?;
    let model = match args.model.as_str() {
        "gaussian" => {
            if args.k.is_some() {
                return reject("--k", "gmm");
            }
            if args.q.is_some() {
                return reject("--q", "ppca");
            }
            AnyModel::Gaussian(if args.mean_only {
                fit_gaussian_mean_only(&data)?
            } else {
                fit_gaussian(&data)?
            })
        }
        "gmm" => {
            if args.mean_only {
                return reject("--mean-only", "gaussian");
            }
            if args.q.is_some() {
                return reject("--q", "ppca");
            }
            let k = args
                .k
                .ok_or_else(|| Error::Config("gmm needs --k components".into()))?;
            AnyModel::Mixture(fit_gmm(&data, k, seed)?)
        }
        "ppca" => {
            if args.mean_only {
                return reject("--mean-only", "gaussian");
            }
            if args.k.is_some() {
                return reject("--k", "gmm");
            }
            let q = args
                .q
                .ok_or_else(|| Error::Config("ppca needs --q latent dimensions".into()))?;
            AnyModel::Pca(fit_ppca(&data, q)?)
        }
        other => {
            return Err(Error::Config(format!(
                "unknown model family {other:?}, expected gaussian, gmm, or ppca"
            )))
        }
    };
    save_model(&args.out, &model)?;
    println!(
        "{}",
        json!({
            "family": model.family(),
            "rows": data.rows(),
            "data_dim": data.cols(),
            "param_len": model.layout().total_len(),
            "out": args.out,
        })
    );
    Ok(())
}

pub fn fim(args: FimArgs) -> Result<()> {
    let moments = match (&args.records, &args.model, &args.data) {
        (Some(records), None, None) => {
            let mut reader = RecordReader::open(records)?;
            if !reader.has_gradient() {
                return Err(Error::Capability(format!(
                    "{} carries no gradients; information estimation needs them",
                    records.display()
                )));
            }
            let mut moments = RunningMoments::new(reader.param_len());
            for record in &mut reader {
                let record = record?;
                let grad = record.gradient.as_ref().expect("flagged file has gradients");
                moments.update(record.log_density, grad)?;
            }
            moments
        }
        (None, Some(model), Some(data)) => {
            let model = load_model(model)?;
            moments_from_model(&model, &load_idx(data)?)?
        }
        _ => {
            return Err(Error::Config(
                "provide --records, or --model together with --data".into(),
            ))
        }
    };
    let fim = finalize_fim(&moments, args.epsilon, args.xi)?;
    let summary = TrainingSummary::from_moments(&moments, fim)?;
    save_summary(&args.out, &summary)?;
    println!(
        "{}",
        json!({
            "n_train": summary.n_train,
            "param_len": summary.param_len(),
            "mean_log_density": summary.mean_log_density,
            "out": args.out,
        })
    );
    Ok(())
}

fn mixture_ref(model: &AnyModel) -> Result<&GaussianMixture> {
    match model {
        AnyModel::Mixture(m) => Ok(m),
        other => Err(Error::Capability(format!(
            "mahalanobis distances need a mixture model, got {}",
            other.family()
        ))),
    }
}

/// Unit ids for batch statistics: record ids for singleton batches, the
/// batch index otherwise.
fn batch_ids(records: &[GradientRecord], batch_size: usize) -> Vec<u64> {
    if batch_size == 1 {
        records.iter().map(|r| r.id).collect()
    } else {
        (0..records.len() / batch_size).map(|i| i as u64).collect()
    }
}

pub fn stats(args: StatsArgs) -> Result<()> {
    let summary = load_summary(&args.summary)?;
    let wants_mahalanobis = args.kinds.contains(&StatisticKind::Mahalanobis);
    if wants_mahalanobis && args.batch_size > 1 {
        return Err(Error::Config(
            "mahalanobis distances are per observation; use batch size 1".into(),
        ));
    }
    let needs_grad = args.kinds.iter().any(|k| k.needs_gradient());

    // Either route yields records; the matrix and model stay around only
    // for mahalanobis distances.
    let (records, matrix, model): (Vec<GradientRecord>, Option<DataMatrix>, Option<AnyModel>) =
        match (&args.records, &args.model, &args.data) {
            (Some(path), None, None) => {
                if wants_mahalanobis {
                    return Err(Error::Capability(
                        "mahalanobis is computed from a mixture model and raw observations, not records"
                            .into(),
                    ));
                }
                (read_gradient_records(path)?, None, None)
            }
            (None, Some(model_path), Some(data_path)) => {
                let model = load_model(model_path)?;
                let data = load_idx(data_path)?;
                let records = records_from_model(&model, &data, needs_grad)?;
                (records, Some(data), Some(model))
            }
            _ => {
                return Err(Error::Config(
                    "provide --records, or --model together with --data".into(),
                ))
            }
        };

    let ids = batch_ids(&records, args.batch_size);
    let mut rows = Vec::new();
    for kind in &args.kinds {
        if *kind == StatisticKind::Mahalanobis {
            let model = model.as_ref().expect("records route already rejected");
            let mixture = mixture_ref(model)?;
            let matrix = matrix.as_ref().expect("model route keeps the matrix");
            for (i, id) in ids.iter().enumerate() {
                rows.push(StatRow {
                    id: *id,
                    kind: *kind,
                    value: mahalanobis_statistic(mixture, matrix.row(i))?,
                });
            }
        } else {
            let series = batch_series(*kind, &records, args.batch_size, &summary)?;
            for (id, value) in ids.iter().zip(series.values) {
                rows.push(StatRow {
                    id: *id,
                    kind: *kind,
                    value,
                });
            }
        }
    }
    write_stats_csv(&args.out, &rows)?;
    println!(
        "{}",
        json!({ "units": ids.len(), "kinds": args.kinds.len(), "out": args.out })
    );
    Ok(())
}

pub fn calibrate(args: CalibrateArgs) -> Result<()> {
    let records = read_gradient_records(&args.records)?;
    let summary = load_summary(&args.summary)?;
    let seed = seed_or_default(args.seed)?;
    let plan = match args.plan.as_str() {
        "per-example" => BootstrapPlan::per_example(),
        "without-replacement" => {
            BootstrapPlan::without_replacement(args.n_datasets, args.dataset_size, seed)
        }
        "with-replacement" => {
            BootstrapPlan::with_replacement(args.n_datasets, args.dataset_size, seed)
        }
        other => {
            return Err(Error::Config(format!(
                "unknown plan {other:?}, expected per-example, without-replacement, or with-replacement"
            )))
        }
    };
    let cdf = build_null(&records, &plan, args.kind, &summary)?;
    let model_hash = match &args.model {
        Some(path) => model_fingerprint(&load_model(path)?)?,
        None => 0,
    };
    let null = NullFile {
        kind: args.kind,
        model_hash,
        plan,
        cdf,
    };
    save_null(&args.out, &null)?;
    let null_size = null.cdf.len();
    println!(
        "{}",
        json!({ "kind": args.kind.as_str(), "null_size": null_size, "out": args.out })
    );
    Ok(())
}

pub fn pvalues(args: PvaluesArgs) -> Result<()> {
    let rows = read_stats_csv(&args.stats)?;
    let mut nulls: HashMap<StatisticKind, NullFile> = HashMap::new();
    for path in &args.null {
        let null = load_null(path)?;
        if nulls.insert(null.kind, null).is_some() {
            return Err(Error::Config(format!(
                "two null files for kind {}",
                path.display()
            )));
        }
    }
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let null = nulls.get(&row.kind).ok_or_else(|| {
            Error::Config(format!("no null file for statistic kind {}", row.kind))
        })?;
        out.push(PValueRow {
            id: row.id,
            kind: row.kind,
            p_value: null.cdf.p_value(row.value)?,
        });
    }
    write_pvalues_csv(&args.out, &out)?;
    println!("{}", json!({ "rows": out.len(), "out": args.out }));
    Ok(())
}

pub fn combine(args: CombineArgs) -> Result<()> {
    let rows = read_pvalues_csv(&args.pvalues)?;
    // Group per unit, preserving first-seen id order.
    let mut order: Vec<u64> = Vec::new();
    let mut groups: HashMap<u64, Vec<f64>> = HashMap::new();
    for row in rows {
        groups.entry(row.id).or_insert_with(|| {
            order.push(row.id);
            Vec::new()
        });
        groups.get_mut(&row.id).expect("just inserted").push(row.p_value);
    }
    if order.is_empty() {
        return Err(Error::Empty("p-value rows"));
    }
    let expected = groups[&order[0]].len();
    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let values = &groups[&id];
        if values.len() != expected {
            return Err(Error::Format(format!(
                "unit {id} has {} p-values, others have {expected}",
                values.len()
            )));
        }
        let combined: CombinedScore = match args.method {
            CombineMethod::Fisher => fisher_combine_values(values)?,
            CombineMethod::Harmonic => harmonic_combine_values(values, None)?,
            CombineMethod::DoseKde => {
                return Err(Error::Config(
                    "dose_kde needs the null statistic series; use the run subcommand".into(),
                ))
            }
        };
        out.push(CombinedRow {
            id,
            method: combined.method,
            value: combined.value,
            combined_p: combined.combined_p,
        });
    }
    write_combined_csv(&args.out, &out)?;
    println!(
        "{}",
        json!({ "units": out.len(), "method": args.method.as_str(), "out": args.out })
    );
    Ok(())
}

fn labels_by_id(path: &std::path::Path) -> Result<HashMap<u64, Label>> {
    let mut map = HashMap::new();
    for row in read_labels_csv(path)? {
        if map.insert(row.id, row.label).is_some() {
            return Err(Error::Format(format!("duplicate label for id {}", row.id)));
        }
    }
    Ok(map)
}

pub fn bh(args: BhArgs) -> Result<()> {
    let rows = read_combined_csv(&args.combined)?;
    let mut ids = Vec::with_capacity(rows.len());
    let mut ps = Vec::with_capacity(rows.len());
    for row in &rows {
        ids.push(row.id);
        ps.push(row.combined_p.ok_or_else(|| {
            Error::Format(format!("row {} has no combined p-value", row.id))
        })?);
    }
    let labels = match &args.labels {
        Some(path) => {
            let by_id = labels_by_id(path)?;
            let mut labels = Vec::with_capacity(ids.len());
            for id in &ids {
                labels.push(*by_id.get(id).ok_or_else(|| {
                    Error::Format(format!("no label for unit {id}"))
                })?);
            }
            Some(labels)
        }
        None => None,
    };
    let batch = HypothesisBatch::new(ids.clone(), ps.clone(), labels)?;
    let report = benjamini_hochberg(&batch, args.alpha)?;
    let rejected: std::collections::HashSet<u64> = report.rejected_ids.iter().copied().collect();
    let decisions: Vec<DecisionRow> = ids
        .iter()
        .zip(&ps)
        .map(|(id, p)| DecisionRow {
            id: *id,
            p_value: *p,
            rejected: rejected.contains(id),
        })
        .collect();
    write_decisions_csv(&args.out, &decisions)?;
    if let Some(curves_path) = &args.curves {
        let curves = error_curves(&batch, &args.alphas)?;
        write_curves_csv(curves_path, &curves)?;
    }
    println!(
        "{}",
        json!({
            "alpha": report.alpha,
            "threshold": report.threshold,
            "n_rejected": report.n_rejected(),
            "n_units": decisions.len(),
            "out": args.out,
        })
    );
    Ok(())
}

pub fn auroc(args: AurocArgs) -> Result<()> {
    let labels = labels_by_id(&args.labels)?;
    // Split scores by ground truth, preserving row order within each side.
    let split = |scored: Vec<(u64, f64)>| -> Result<ScoredPopulations> {
        let mut inliers = Vec::new();
        let mut outliers = Vec::new();
        for (id, value) in scored {
            match labels.get(&id) {
                Some(Label::Inlier) => inliers.push(value),
                Some(Label::Outlier) => outliers.push(value),
                None => return Err(Error::Format(format!("no label for unit {id}"))),
            }
        }
        ScoredPopulations::new(inliers, outliers)
    };
    let mut rows: Vec<AurocRow> = Vec::new();
    match (&args.stats, &args.combined) {
        (Some(path), None) => {
            let stat_rows = read_stats_csv(path)?;
            let mut kinds: Vec<StatisticKind> = Vec::new();
            for row in &stat_rows {
                if !kinds.contains(&row.kind) {
                    kinds.push(row.kind);
                }
            }
            for kind in kinds {
                let scored: Vec<(u64, f64)> = stat_rows
                    .iter()
                    .filter(|r| r.kind == kind)
                    .map(|r| (r.id, r.value))
                    .collect();
                rows.push(AurocRow {
                    name: kind.as_str().to_string(),
                    auroc: auroc_of(&split(scored)?)?,
                });
            }
        }
        (None, Some(path)) => {
            let combined_rows = read_combined_csv(path)?;
            let mut methods: Vec<CombineMethod> = Vec::new();
            for row in &combined_rows {
                if !methods.contains(&row.method) {
                    methods.push(row.method);
                }
            }
            for method in methods {
                let scored: Vec<(u64, f64)> = combined_rows
                    .iter()
                    .filter(|r| r.method == method)
                    .map(|r| {
                        let score = combined_anomaly_score(&CombinedScore {
                            method: r.method,
                            value: r.value,
                            combined_p: r.combined_p,
                        });
                        (r.id, score)
                    })
                    .collect();
                rows.push(AurocRow {
                    name: format!("combined_{}", method.as_str()),
                    auroc: auroc_of(&split(scored)?)?,
                });
            }
        }
        _ => {
            return Err(Error::Config(
                "provide exactly one of --stats or --combined".into(),
            ))
        }
    }
    write_auroc_csv(&args.out, &rows)?;
    println!("{}", json!({ "rows": rows.len(), "out": args.out }));
    Ok(())
}

pub fn run(args: RunArgs) -> Result<()> {
    let spec = load_spec(&args.spec)?;
    let report = run_pipeline(&spec)?;
    let aurocs: Vec<serde_json::Value> = report
        .auroc
        .iter()
        .map(|r| json!({ "name": r.name, "auroc": r.auroc }))
        .collect();
    println!(
        "{}",
        json!({
            "seed": report.seed,
            "units": report.unit_ids.len(),
            "batch_size": report.batch_size,
            "method": report.method.as_str(),
            "auroc": aurocs,
            "output_dir": spec.output_dir,
        })
    );
    Ok(())
}

pub fn gaussian_demo(args: GaussianDemoArgs) -> Result<()> {
    let report = run_gaussian_failure_modes(args.d, args.batch_size, args.seed)?;
    let rows = [
        AurocRow {
            name: "score".into(),
            auroc: report.score_auroc,
        },
        AurocRow {
            name: "typicality".into(),
            auroc: report.typicality_auroc,
        },
    ];
    write_auroc_csv(&args.out, &rows)?;
    println!(
        "{}",
        json!({
            "score_auroc": report.score_auroc,
            "typicality_auroc": report.typicality_auroc,
            "mean_squared_score_in": report.mean_squared_score_in,
            "mean_squared_score_out": report.mean_squared_score_out,
            "expected_squared_gap": report.expected_squared_gap,
            "score_at_true_origin": report.score_at_true_origin,
            "score_at_origin_fitted": report.score_at_origin_fitted,
            "out": args.out,
        })
    );
    Ok(())
}
