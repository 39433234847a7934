//! CSV report files: statistics, p-values, combined scores, AUROC tables,
//! error curves, decisions.
//!
//! Every file is RFC-4180 UTF-8 with one header row. Readers validate the
//! numeric domains so a hand-edited file fails loudly instead of poisoning a
//! downstream stage.

use std::fs::File;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::combine::CombineMethod;
use crate::decision::{ErrorCurvePoint, Label};
use crate::error::{Error, Result};
use crate::stats::StatisticKind;

/// One statistic value for one evaluation unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub id: u64,
    pub kind: StatisticKind,
    pub value: f64,
}

/// One calibrated p-value for one evaluation unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueRow {
    pub id: u64,
    pub kind: StatisticKind,
    pub p_value: f64,
}

/// One combined score for one evaluation unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedRow {
    pub id: u64,
    pub method: CombineMethod,
    pub value: f64,
    pub combined_p: Option<f64>,
}

/// AUROC of one scoring route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AurocRow {
    pub name: String,
    pub auroc: f64,
}

/// One accept/reject decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRow {
    pub id: u64,
    pub p_value: f64,
    pub rejected: bool,
}

/// Ground-truth label for one evaluation unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub id: u64,
    pub label: Label,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(File::create(path)?);
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::Format(format!("csv write failed: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| Error::Format(format!("csv flush failed: {e}")))?;
    Ok(())
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_reader(File::open(path)?);
    let mut out = Vec::new();
    for row in reader.deserialize() {
        out.push(row.map_err(|e| Error::Format(format!("csv parse failed: {e}")))?);
    }
    Ok(out)
}

fn check_finite(value: f64, what: &str, id: u64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Format(format!(
            "{what} must be finite, got {value} for id {id}"
        )))
    }
}

fn check_p(p: f64, id: u64) -> Result<()> {
    if p.is_finite() && p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::Format(format!(
            "p-values must lie in (0, 1], got {p} for id {id}"
        )))
    }
}

pub fn write_stats_csv(path: &Path, rows: &[StatRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn read_stats_csv(path: &Path) -> Result<Vec<StatRow>> {
    let rows: Vec<StatRow> = read_csv(path)?;
    for row in &rows {
        check_finite(row.value, "statistic value", row.id)?;
    }
    Ok(rows)
}

pub fn write_pvalues_csv(path: &Path, rows: &[PValueRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn read_pvalues_csv(path: &Path) -> Result<Vec<PValueRow>> {
    let rows: Vec<PValueRow> = read_csv(path)?;
    for row in &rows {
        check_p(row.p_value, row.id)?;
    }
    Ok(rows)
}

pub fn write_combined_csv(path: &Path, rows: &[CombinedRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn read_combined_csv(path: &Path) -> Result<Vec<CombinedRow>> {
    let rows: Vec<CombinedRow> = read_csv(path)?;
    for row in &rows {
        check_finite(row.value, "combined value", row.id)?;
        if let Some(p) = row.combined_p {
            check_p(p, row.id)?;
        }
    }
    Ok(rows)
}

pub fn write_auroc_csv(path: &Path, rows: &[AurocRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn write_curves_csv(path: &Path, rows: &[ErrorCurvePoint]) -> Result<()> {
    write_csv(path, rows)
}

pub fn write_decisions_csv(path: &Path, rows: &[DecisionRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn read_labels_csv(path: &Path) -> Result<Vec<LabelRow>> {
    read_csv(path)
}

pub fn write_labels_csv(path: &Path, rows: &[LabelRow]) -> Result<()> {
    write_csv(path, rows)
}
