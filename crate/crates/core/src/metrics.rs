//! Point-prediction and interval-quality metrics.
//!
//! Every metric is computed per output coordinate; aggregate scalars are the
//! unweighted mean over coordinates. Sums use pairwise summation so the
//! aggregates do not depend on how callers batch the data.

use serde::{Deserialize, Serialize};

use crate::conformal::PredictionInterval;
use crate::error::{check_dim, Error, Result};

fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        v.iter().sum()
    } else {
        let mid = v.len() / 2;
        pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
    }
}

fn mean(v: &[f64]) -> f64 {
    pairwise_sum(v) / v.len() as f64
}

fn check_pairs(truth: &[Vec<f64>], pred_len: usize, pred_dims: impl Iterator<Item = usize>) -> Result<usize> {
    if truth.is_empty() {
        return Err(Error::Data("metric of an empty sample".into()));
    }
    check_dim(truth.len(), pred_len)?;
    let dims = truth[0].len();
    for (t, p) in truth.iter().zip(pred_dims) {
        check_dim(dims, t.len())?;
        check_dim(dims, p)?;
    }
    Ok(dims)
}

/// Per-coordinate residual columns `truth - pred`.
fn residual_columns(truth: &[Vec<f64>], pred: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let dims = check_pairs(truth, pred.len(), pred.iter().map(Vec::len))?;
    Ok((0..dims)
        .map(|k| truth.iter().zip(pred).map(|(t, p)| t[k] - p[k]).collect())
        .collect())
}

pub fn rmse(truth: &[Vec<f64>], pred: &[Vec<f64>]) -> Result<Vec<f64>> {
    Ok(residual_columns(truth, pred)?
        .iter()
        .map(|r| mean(&r.iter().map(|e| e * e).collect::<Vec<_>>()).sqrt())
        .collect())
}

pub fn mae(truth: &[Vec<f64>], pred: &[Vec<f64>]) -> Result<Vec<f64>> {
    Ok(residual_columns(truth, pred)?
        .iter()
        .map(|r| mean(&r.iter().map(|e| e.abs()).collect::<Vec<_>>()))
        .collect())
}

/// Coefficient of determination per coordinate; `None` where the truth has zero variance.
pub fn r2(truth: &[Vec<f64>], pred: &[Vec<f64>]) -> Result<Vec<Option<f64>>> {
    let resid = residual_columns(truth, pred)?;
    Ok(resid
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let col: Vec<f64> = truth.iter().map(|t| t[k]).collect();
            let m = mean(&col);
            let ss_tot = pairwise_sum(&col.iter().map(|v| (v - m).powi(2)).collect::<Vec<_>>());
            let ss_res = pairwise_sum(&r.iter().map(|e| e * e).collect::<Vec<_>>());
            (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot)
        })
        .collect())
}

/// Mean absolute percentage error, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mape {
    /// Per coordinate; `None` when every truth value of the coordinate is exactly zero.
    pub values: Vec<Option<f64>>,
    /// Number of entries skipped per coordinate because the truth was exactly zero.
    pub excluded: Vec<usize>,
}

pub fn mape(truth: &[Vec<f64>], pred: &[Vec<f64>]) -> Result<Mape> {
    let dims = check_pairs(truth, pred.len(), pred.iter().map(Vec::len))?;
    let mut values = Vec::with_capacity(dims);
    let mut excluded = Vec::with_capacity(dims);
    for k in 0..dims {
        let terms: Vec<f64> = truth
            .iter()
            .zip(pred)
            .filter(|(t, _)| t[k] != 0.0)
            .map(|(t, p)| ((t[k] - p[k]) / t[k]).abs())
            .collect();
        excluded.push(truth.len() - terms.len());
        values.push((!terms.is_empty()).then(|| 100.0 * mean(&terms)));
    }
    Ok(Mape { values, excluded })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    /// Fraction of all (sample, coordinate) pairs inside their interval.
    pub overall: f64,
    pub per_dim: Vec<f64>,
    /// Fraction of samples whose every coordinate is covered.
    pub joint: f64,
}

/// Empirical coverage with inclusive bounds.
pub fn coverage(truth: &[Vec<f64>], intervals: &[PredictionInterval]) -> Result<Coverage> {
    let dims = check_pairs(truth, intervals.len(), intervals.iter().map(PredictionInterval::dim))?;
    let n = truth.len() as f64;
    let mut hits = vec![0usize; dims];
    let mut joint = 0usize;
    for (t, iv) in truth.iter().zip(intervals) {
        let mut all = true;
        for (k, hit) in hits.iter_mut().enumerate() {
            if iv.contains(k, t[k]) {
                *hit += 1;
            } else {
                all = false;
            }
        }
        joint += all as usize;
    }
    let per_dim: Vec<f64> = hits.iter().map(|&h| h as f64 / n).collect();
    Ok(Coverage {
        overall: hits.iter().sum::<usize>() as f64 / (n * dims as f64),
        per_dim,
        joint: joint as f64 / n,
    })
}

/// Winkler interval score: the width plus `2/alpha` times the distance by which `y` misses.
pub fn winkler(y: f64, lower: f64, upper: f64, alpha: f64) -> Result<f64> {
    if lower > upper {
        return Err(Error::InvalidParameter(format!(
            "interval lower bound {lower} exceeds upper bound {upper}"
        )));
    }
    crate::conformal::check_alpha(alpha)?;
    Ok(winkler_unchecked(y, lower, upper, alpha))
}

fn winkler_unchecked(y: f64, lower: f64, upper: f64, alpha: f64) -> f64 {
    let width = upper - lower;
    if y < lower {
        width + 2.0 / alpha * (lower - y)
    } else if y > upper {
        width + 2.0 / alpha * (y - upper)
    } else {
        width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanWinkler {
    pub mean: f64,
    pub per_dim: Vec<f64>,
}

/// Mean Winkler score over every (sample, coordinate) pair.
pub fn mean_winkler(truth: &[Vec<f64>], intervals: &[PredictionInterval], alpha: f64) -> Result<MeanWinkler> {
    let dims = check_pairs(truth, intervals.len(), intervals.iter().map(PredictionInterval::dim))?;
    let mut per_dim = Vec::with_capacity(dims);
    for k in 0..dims {
        let scores = truth
            .iter()
            .zip(intervals)
            .map(|(t, iv)| winkler(t[k], iv.lower[k], iv.upper[k], alpha))
            .collect::<Result<Vec<f64>>>()?;
        per_dim.push(mean(&scores));
    }
    Ok(MeanWinkler {
        mean: mean(&per_dim),
        per_dim,
    })
}

/// Interval half of a [`MetricReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalMetrics {
    pub alpha: f64,
    pub coverage: f64,
    pub coverage_per_dim: Vec<f64>,
    pub joint_coverage: f64,
    pub mean_winkler: f64,
    pub winkler_per_dim: Vec<f64>,
    pub mean_width: f64,
}

impl IntervalMetrics {
    pub fn compute(truth: &[Vec<f64>], intervals: &[PredictionInterval], alpha: f64) -> Result<Self> {
        let cov = coverage(truth, intervals)?;
        let w = mean_winkler(truth, intervals, alpha)?;
        let widths: Vec<f64> = intervals.iter().flat_map(PredictionInterval::width).collect();
        Ok(Self {
            alpha,
            coverage: cov.overall,
            coverage_per_dim: cov.per_dim,
            joint_coverage: cov.joint,
            mean_winkler: w.mean,
            winkler_per_dim: w.per_dim,
            mean_width: mean(&widths),
        })
    }
}

/// How per-coordinate values are reduced to the scalar columns of a report.
pub const AGGREGATION_RULE: &str = "unweighted mean over output coordinates";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model_id: String,
    pub method: String,
    pub split: String,
    pub n_samples: usize,
    pub output_names: Vec<String>,
    pub rmse: f64,
    pub mae: f64,
    /// `None` when no coordinate has a defined R².
    pub r2: Option<f64>,
    pub mape: Option<f64>,
    pub rmse_per_dim: Vec<f64>,
    pub mae_per_dim: Vec<f64>,
    pub r2_per_dim: Vec<Option<f64>>,
    pub mape_per_dim: Vec<Option<f64>>,
    pub mape_excluded: Vec<usize>,
    pub intervals: Option<IntervalMetrics>,
    pub aggregation: String,
}

fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| mean(&defined))
}

impl MetricReport {
    /// Point metrics of `pred` against `truth`.
    pub fn point(
        model_id: &str,
        method: &str,
        split: &str,
        output_names: &[String],
        truth: &[Vec<f64>],
        pred: &[Vec<f64>],
    ) -> Result<Self> {
        let rmse_v = rmse(truth, pred)?;
        let mae_v = mae(truth, pred)?;
        let r2_v = r2(truth, pred)?;
        let mape_v = mape(truth, pred)?;
        check_dim(output_names.len(), rmse_v.len())?;
        Ok(Self {
            model_id: model_id.to_string(),
            method: method.to_string(),
            split: split.to_string(),
            n_samples: truth.len(),
            output_names: output_names.to_vec(),
            rmse: mean(&rmse_v),
            mae: mean(&mae_v),
            r2: mean_defined(&r2_v),
            mape: mean_defined(&mape_v.values),
            rmse_per_dim: rmse_v,
            mae_per_dim: mae_v,
            r2_per_dim: r2_v,
            mape_per_dim: mape_v.values,
            mape_excluded: mape_v.excluded,
            intervals: None,
            aggregation: AGGREGATION_RULE.to_string(),
        })
    }

    pub fn with_intervals(mut self, truth: &[Vec<f64>], intervals: &[PredictionInterval], alpha: f64) -> Result<Self> {
        self.intervals = Some(IntervalMetrics::compute(truth, intervals, alpha)?);
        Ok(self)
    }

    pub const CSV_HEADER: [&'static str; 10] = [
        "method", "model_id", "split", "n", "rmse", "mae", "r2", "mape", "coverage", "winkler",
    ];

    /// Flat CSV row matching [`MetricReport::CSV_HEADER`]; undefined values are empty.
    pub fn csv_row(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        vec![
            self.method.clone(),
            self.model_id.clone(),
            self.split.clone(),
            self.n_samples.to_string(),
            format!("{:?}", self.rmse),
            format!("{:?}", self.mae),
            opt(self.r2),
            opt(self.mape),
            opt(self.intervals.as_ref().map(|i| i.coverage)),
            opt(self.intervals.as_ref().map(|i| i.mean_winkler)),
        ]
    }
}

/// Writes reports as a flat CSV table, one row per report.
pub fn write_reports_csv(path: impl AsRef<std::path::Path>, reports: &[MetricReport]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MetricReport::CSV_HEADER)?;
    for r in reports {
        w.write_record(r.csv_row())?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
