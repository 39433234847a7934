//! Combining p-values across statistics.
//!
//! Three combiners are provided. Fisher's method sums `-2 ln p` and refers
//! the total to a chi-squared distribution with two degrees of freedom per
//! p-value; it is exact when the p-values are independent and uniform.
//! The weighted harmonic mean is robust to dependence. The KDE combiner
//! skips p-values entirely: it fits one univariate Gaussian KDE per
//! statistic on validation values and scores a point by its summed negative
//! log-density, which downstream code calibrates like any other statistic.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::models::{log_sum_exp, LN_2PI};
use crate::stats::{StatisticKind, StatisticSeries};

/// A set of p-values, one per distinct statistic kind.
#[derive(Debug, Clone, PartialEq)]
pub struct PValueVector {
    kinds: Vec<StatisticKind>,
    values: Vec<f64>,
}

impl PValueVector {
    /// Validates distinct kinds and p-values in (0, 1].
    pub fn new(kinds: Vec<StatisticKind>, values: Vec<f64>) -> Result<Self> {
        if kinds.is_empty() {
            return Err(Error::Empty("p-value vector"));
        }
        ensure_len(kinds.len(), values.len())?;
        for (i, a) in kinds.iter().enumerate() {
            if kinds[i + 1..].contains(a) {
                return Err(Error::Domain(format!("duplicate statistic kind {a}")));
            }
        }
        check_p_values(&values)?;
        Ok(PValueVector { kinds, values })
    }

    pub fn kinds(&self) -> &[StatisticKind] {
        &self.kinds
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_p_values(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Empty("p-values"));
    }
    for p in values {
        if !(p.is_finite() && *p > 0.0 && *p <= 1.0) {
            return Err(Error::Domain(format!("p-values must lie in (0, 1], got {p}")));
        }
    }
    Ok(())
}

/// The available combination methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMethod {
    Fisher,
    Harmonic,
    DoseKde,
}

impl CombineMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            CombineMethod::Fisher => "fisher",
            CombineMethod::Harmonic => "harmonic",
            CombineMethod::DoseKde => "dose_kde",
        }
    }
}

impl std::fmt::Display for CombineMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CombineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fisher" => Ok(CombineMethod::Fisher),
            "harmonic" => Ok(CombineMethod::Harmonic),
            "dose_kde" => Ok(CombineMethod::DoseKde),
            other => Err(Error::Config(format!("unknown combine method {other:?}"))),
        }
    }
}

/// The result of combining one point's statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedScore {
    pub method: CombineMethod,
    /// The raw combined value; larger is more anomalous.
    pub value: f64,
    /// A calibrated p-value, when the method provides one directly.
    pub combined_p: Option<f64>,
}

/// Fisher's method: `-2 sum(ln p)` referred to chi-squared with `2k` degrees
/// of freedom.
pub fn fisher_combine(p: &PValueVector) -> Result<CombinedScore> {
    fisher_combine_values(p.values())
}

/// Fisher's method on a bare slice of p-values.
pub fn fisher_combine_values(values: &[f64]) -> Result<CombinedScore> {
    check_p_values(values)?;
    let value = -2.0 * values.iter().map(|p| p.ln()).sum::<f64>();
    // The survival function may underflow to zero for extreme statistics;
    // keep the result a valid p-value.
    let combined_p = chi2_survival(value, 2 * values.len())?.max(f64::MIN_POSITIVE);
    Ok(CombinedScore {
        method: CombineMethod::Fisher,
        value,
        combined_p: Some(combined_p),
    })
}

/// Survival function of the chi-squared distribution with even `dof`.
///
/// With `k = dof / 2` the closed form is
/// `exp(-x/2) * sum_{i<k} (x/2)^i / i!`; the sum is taken in log space so
/// large `x` and `dof` neither overflow nor lose the tail.
pub fn chi2_survival(x: f64, dof: usize) -> Result<f64> {
    if dof == 0 || dof % 2 != 0 {
        return Err(Error::Unsupported(format!(
            "chi-squared survival is implemented for even degrees of freedom, got {dof}"
        )));
    }
    if !(x.is_finite() && x >= 0.0) {
        return Err(Error::Domain(format!(
            "chi-squared statistic must be finite and non-negative, got {x}"
        )));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    let k = dof / 2;
    let half = x / 2.0;
    let log_half = half.ln();
    // log of (x/2)^i / i!, built incrementally.
    let mut log_term = 0.0;
    let mut max = 0.0f64;
    let mut terms = Vec::with_capacity(k);
    terms.push(0.0);
    for i in 1..k {
        log_term += log_half - (i as f64).ln();
        terms.push(log_term);
        max = max.max(log_term);
    }
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    Ok((max + sum.ln() - half).exp().min(1.0))
}

/// Weighted harmonic mean of p-values: `sum(w) / sum(w / p)`.
///
/// Weights default to equal and must form a simplex.
pub fn harmonic_combine(p: &PValueVector, weights: Option<&[f64]>) -> Result<CombinedScore> {
    harmonic_combine_values(p.values(), weights)
}

/// Harmonic-mean combination on a bare slice of p-values.
pub fn harmonic_combine_values(values: &[f64], weights: Option<&[f64]>) -> Result<CombinedScore> {
    check_p_values(values)?;
    let k = values.len();
    let equal = vec![1.0 / k as f64; k];
    let w = weights.unwrap_or(&equal);
    ensure_len(k, w.len())?;
    let mut total = 0.0;
    for wi in w {
        if !(wi.is_finite() && *wi > 0.0) {
            return Err(Error::Domain(format!(
                "harmonic weights must be positive, got {wi}"
            )));
        }
        total += wi;
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "harmonic weights must sum to 1, got {total}"
        )));
    }
    let denom: f64 = w.iter().zip(values).map(|(wi, pi)| wi / pi).sum();
    let value = total / denom;
    Ok(CombinedScore {
        method: CombineMethod::Harmonic,
        value,
        combined_p: Some(value),
    })
}

/// One statistic's Gaussian KDE over validation values.
#[derive(Debug, Clone, PartialEq)]
struct KdeComponent {
    kind: StatisticKind,
    points: Vec<f64>,
    bandwidth: f64,
}

/// Per-statistic kernel density model of in-distribution statistic values.
///
/// Scores are summed negative log-densities under independent univariate
/// KDEs, one per statistic; the score carries no p-value of its own and is
/// calibrated downstream against a null sample like any other statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct DoseKde {
    components: Vec<KdeComponent>,
}

impl DoseKde {
    /// Fits one KDE per training series.
    ///
    /// Bandwidths default to Scott's rule, `std * n^(-1/5)` with the
    /// unbiased standard deviation; a series without spread is an error.
    pub fn fit(train: &[StatisticSeries], bandwidths: Option<&[f64]>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("kde training series"));
        }
        if let Some(b) = bandwidths {
            ensure_len(train.len(), b.len())?;
        }
        let mut components = Vec::with_capacity(train.len());
        for (j, series) in train.iter().enumerate() {
            let n = series.values.len();
            if n < 2 {
                return Err(Error::Insufficient(format!(
                    "kde for {} needs at least 2 values, got {n}",
                    series.kind
                )));
            }
            let bandwidth = match bandwidths {
                Some(b) => {
                    if !(b[j].is_finite() && b[j] > 0.0) {
                        return Err(Error::Domain(format!(
                            "bandwidth must be positive, got {}",
                            b[j]
                        )));
                    }
                    b[j]
                }
                None => {
                    let std = sample_std(&series.values);
                    if std <= 0.0 {
                        return Err(Error::Degenerate(format!(
                            "{} values have no spread; provide an explicit bandwidth",
                            series.kind
                        )));
                    }
                    std * (n as f64).powf(-0.2)
                }
            };
            components.push(KdeComponent {
                kind: series.kind,
                points: series.values.clone(),
                bandwidth,
            });
        }
        Ok(DoseKde { components })
    }

    /// Statistic kinds in score order.
    pub fn kinds(&self) -> Vec<StatisticKind> {
        self.components.iter().map(|c| c.kind).collect()
    }

    /// Log KDE density of component `j` at `t`.
    fn log_density(&self, j: usize, t: f64) -> f64 {
        let c = &self.components[j];
        let n = c.points.len() as f64;
        let h = c.bandwidth;
        let logs: Vec<f64> = c
            .points
            .iter()
            .map(|x| {
                let z = (t - x) / h;
                -0.5 * z * z
            })
            .collect();
        log_sum_exp(&logs) - 0.5 * LN_2PI - h.ln() - n.ln()
    }

    /// Summed negative log-density of one point's statistic values.
    pub fn score(&self, stats: &[f64]) -> Result<CombinedScore> {
        ensure_len(self.components.len(), stats.len())?;
        let mut total = 0.0;
        for (j, t) in stats.iter().enumerate() {
            if !t.is_finite() {
                return Err(Error::Domain(format!(
                    "statistic values must be finite, got {t}"
                )));
            }
            total -= self.log_density(j, *t);
        }
        Ok(CombinedScore {
            method: CombineMethod::DoseKde,
            value: total,
            combined_p: None,
        })
    }
}

/// Fits KDEs on training series and scores a single point.
pub fn dose_kde_combine(
    train: &[StatisticSeries],
    test_point: &[f64],
    bandwidths: Option<&[f64]>,
) -> Result<CombinedScore> {
    DoseKde::fit(train, bandwidths)?.score(test_point)
}

/// Unbiased sample standard deviation.
fn sample_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1.0)).sqrt()
}
