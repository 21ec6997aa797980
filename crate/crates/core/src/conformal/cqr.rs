//! Quantile regression intervals, raw and conformalized.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::models::{BoostParams, FittedModel, Loss, ModelSpec, Regressor};

use super::{check_alpha, extended_floats, kth_smallest, PredictionInterval};

/// Orders a quantile pair, returning whether it had to be swapped.
fn ordered(lo: f64, hi: f64) -> (f64, f64, bool) {
    if lo > hi {
        (hi, lo, true)
    } else {
        (lo, hi, false)
    }
}

fn raw_bounds<R: Regressor>(lower: &R, upper: &R, u: &[f64]) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    check_dim(lower.n_outputs(), upper.n_outputs())?;
    let lo = lower.predict(u)?;
    let hi = upper.predict(u)?;
    let mut swaps = 0;
    let (lo, hi): (Vec<f64>, Vec<f64>) = lo
        .into_iter()
        .zip(hi)
        .map(|(a, b)| {
            let (a, b, swapped) = ordered(a, b);
            swaps += swapped as usize;
            (a, b)
        })
        .unzip();
    Ok((lo, hi, swaps))
}

fn midpoints(lo: &[f64], hi: &[f64]) -> Vec<f64> {
    lo.iter().zip(hi).map(|(a, b)| a + (b - a) / 2.0).collect()
}

/// Uncalibrated interval `[q_lo(u), q_hi(u)]` centered at its midpoint.
/// Crossed quantiles are swapped with a warning.
pub fn predict_raw_qr<R: Regressor>(lower: &R, upper: &R, u: &[f64], alpha: f64) -> Result<PredictionInterval> {
    let (lo, hi, swaps) = raw_bounds(lower, upper, u)?;
    if swaps > 0 {
        log::warn!("{swaps} crossing quantile prediction(s) swapped");
    }
    Ok(PredictionInterval {
        center: midpoints(&lo, &hi),
        lower: lo,
        upper: hi,
        alpha,
    })
}

/// Conformalized quantile regression: a lower/upper quantile model pair plus a
/// per-coordinate correction `c`, giving `[q_lo - c, q_hi + c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CqrCalibrator<R = FittedModel> {
    alpha: f64,
    lower: R,
    upper: R,
    n_cal: usize,
    #[serde(with = "extended_floats")]
    corrections: Vec<f64>,
    /// Sorted conformity scores `max(q_lo - x, x - q_hi)` per coordinate.
    scores: Vec<Vec<f64>>,
}

/// Fits boosted pinball-loss models at `alpha/2` and `1 - alpha/2` on `train`
/// and conformalizes them on `cal`. The `loss` in `gb` is ignored.
pub fn fit_cqr(train: &Dataset, cal: &Dataset, alpha: f64, gb: &BoostParams, standardize: bool) -> Result<CqrCalibrator> {
    check_alpha(alpha)?;
    let spec = |tau: f64| {
        ModelSpec::Boosted(BoostParams {
            loss: Loss::Pinball { tau },
            ..gb.clone()
        })
    };
    let lower = FittedModel::fit("qr_lower", &spec(alpha / 2.0), train, standardize)?;
    let upper = FittedModel::fit("qr_upper", &spec(1.0 - alpha / 2.0), train, standardize)?;
    CqrCalibrator::calibrate(lower, upper, cal, alpha)
}

impl<R: Regressor> CqrCalibrator<R> {
    /// Conformalizes an already fitted quantile pair on `cal`.
    pub fn calibrate(lower: R, upper: R, cal: &Dataset, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if cal.is_empty() {
            return Err(Error::Calibration("empty calibration set".into()));
        }
        check_dim(lower.n_outputs(), cal.n_outputs())?;
        let dims = cal.n_outputs();
        let mut scores = vec![Vec::with_capacity(cal.len()); dims];
        let mut swaps = 0;
        for s in cal.samples() {
            let (lo, hi, sw) = raw_bounds(&lower, &upper, &s.u)?;
            swaps += sw;
            for k in 0..dims {
                scores[k].push((lo[k] - s.x[k]).max(s.x[k] - hi[k]));
            }
        }
        if swaps > 0 {
            log::warn!("{swaps} crossing quantile prediction(s) swapped during CQR calibration");
        }
        for s in &mut scores {
            s.sort_by(f64::total_cmp);
        }
        let corrections: Vec<f64> = scores.iter().map(|s| kth_smallest(s, alpha)).collect();
        if corrections.iter().any(|c| c.is_infinite()) {
            log::warn!("calibration set of {} is too small for alpha = {alpha}; CQR intervals are unbounded", cal.len());
        }
        Ok(Self {
            alpha,
            lower,
            upper,
            n_cal: cal.len(),
            corrections,
            scores,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n_cal(&self) -> usize {
        self.n_cal
    }

    pub fn corrections(&self) -> &[f64] {
        &self.corrections
    }

    pub fn scores(&self) -> &[Vec<f64>] {
        &self.scores
    }

    pub fn lower_model(&self) -> &R {
        &self.lower
    }

    pub fn upper_model(&self) -> &R {
        &self.upper
    }

    pub fn predict_raw(&self, u: &[f64]) -> Result<PredictionInterval> {
        predict_raw_qr(&self.lower, &self.upper, u, self.alpha)
    }

    /// Corrected interval. A negative correction larger than the half-width
    /// collapses the interval onto its midpoint.
    pub fn predict_interval(&self, u: &[f64]) -> Result<PredictionInterval> {
        let (lo, hi, swaps) = raw_bounds(&self.lower, &self.upper, u)?;
        if swaps > 0 {
            log::warn!("{swaps} crossing quantile prediction(s) swapped");
        }
        Ok(self.corrected(lo, hi))
    }

    pub fn predict_intervals(&self, d: &Dataset) -> Result<Vec<PredictionInterval>> {
        let mut swaps = 0;
        let mut out = Vec::with_capacity(d.len());
        for s in d.samples() {
            let (lo, hi, sw) = raw_bounds(&self.lower, &self.upper, &s.u)?;
            swaps += sw;
            out.push(self.corrected(lo, hi));
        }
        if swaps > 0 {
            log::warn!("{swaps} crossing quantile prediction(s) swapped");
        }
        Ok(out)
    }

    pub fn predict_raw_intervals(&self, d: &Dataset) -> Result<Vec<PredictionInterval>> {
        let mut swaps = 0;
        let mut out = Vec::with_capacity(d.len());
        for s in d.samples() {
            let (lo, hi, sw) = raw_bounds(&self.lower, &self.upper, &s.u)?;
            swaps += sw;
            out.push(PredictionInterval {
                center: midpoints(&lo, &hi),
                lower: lo,
                upper: hi,
                alpha: self.alpha,
            });
        }
        if swaps > 0 {
            log::warn!("{swaps} crossing quantile prediction(s) swapped");
        }
        Ok(out)
    }

    fn corrected(&self, lo: Vec<f64>, hi: Vec<f64>) -> PredictionInterval {
        let center = midpoints(&lo, &hi);
        let mut lower = Vec::with_capacity(lo.len());
        let mut upper = Vec::with_capacity(lo.len());
        for k in 0..lo.len() {
            let c = self.corrections[k];
            let (l, u) = (lo[k] - c, hi[k] + c);
            if l <= u {
                lower.push(l);
                upper.push(u);
            } else {
                lower.push(center[k]);
                upper.push(center[k]);
            }
        }
        PredictionInterval {
            lower,
            center,
            upper,
            alpha: self.alpha,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;
    use crate::models::LinearModel;

    fn line(offset: f64) -> LinearModel {
        LinearModel::new(vec![vec![1.0]], vec![offset]).unwrap()
    }

    fn cal_set(offsets: &[f64]) -> Dataset {
        let samples = offsets
            .iter()
            .enumerate()
            .map(|(i, o)| Sample::new(vec![i as f64], vec![i as f64 + o]))
            .collect();
        Dataset::from_samples(samples, 1, 1).unwrap()
    }

    #[test]
    fn identical_models_give_zero_width() {
        let iv = predict_raw_qr(&line(0.5), &line(0.5), &[2.0], 0.1).unwrap();
        assert_eq!(iv.lower, iv.upper);
        assert_eq!(iv.center, vec![2.5]);
    }

    #[test]
    fn symmetric_pair_centers_on_the_point_model() {
        let iv = predict_raw_qr(&line(-1.0), &line(1.0), &[3.0], 0.1).unwrap();
        assert_eq!(iv.center, line(0.0).predict(&[3.0]).unwrap());
    }

    #[test]
    fn crossed_pair_is_swapped() {
        let iv = predict_raw_qr(&line(1.0), &line(-1.0), &[0.0], 0.1).unwrap();
        assert_eq!((iv.lower[0], iv.upper[0]), (-1.0, 1.0));
    }

    #[test]
    fn zero_correction_reproduces_raw_interval() {
        // ten points exactly on the lower or upper bound: every score is 0
        let offs: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        let cqr = CqrCalibrator::calibrate(line(-1.0), line(1.0), &cal_set(&offs), 0.1).unwrap();
        assert_eq!(cqr.corrections(), &[0.0]);
        assert_eq!(cqr.predict_interval(&[4.0]).unwrap(), cqr.predict_raw(&[4.0]).unwrap());
    }

    #[test]
    fn too_narrow_pair_is_widened() {
        let offs: Vec<f64> = (0..19).map(|i| (i as f64 - 9.0) / 3.0).collect();
        let cqr = CqrCalibrator::calibrate(line(-0.5), line(0.5), &cal_set(&offs), 0.1).unwrap();
        // scores are |o| - 0.5; k = ceil(20 * 0.9) = 18 -> 18th smallest |o| = 3
        assert!((cqr.corrections()[0] - 2.5).abs() < 1e-12);
        let raw = cqr.predict_raw(&[0.0]).unwrap();
        let fixed = cqr.predict_interval(&[0.0]).unwrap();
        assert!(fixed.lower[0] < raw.lower[0] && fixed.upper[0] > raw.upper[0]);
    }

    #[test]
    fn over_wide_pair_shrinks_but_stays_ordered() {
        let offs = vec![0.0; 19];
        let cqr = CqrCalibrator::calibrate(line(-2.0), line(2.0), &cal_set(&offs), 0.1).unwrap();
        assert_eq!(cqr.corrections(), &[-2.0]);
        let iv = cqr.predict_interval(&[1.0]).unwrap();
        assert_eq!((iv.lower[0], iv.upper[0]), (1.0, 1.0));

        let cqr = CqrCalibrator::calibrate(line(-0.1), line(0.1), &cal_set(&offs), 0.1).unwrap();
        let iv = cqr.predict_interval(&[1.0]).unwrap();
        assert!(iv.lower[0] <= iv.center[0] && iv.center[0] <= iv.upper[0]);
    }
}
