//! Split conformal prediction around any fitted [`Regressor`].
//!
//! Calibration computes absolute-error nonconformity scores on a held-out set,
//! one score list per output coordinate, and keeps the
//! `ceil((N_cal + 1)(1 - alpha))`-th smallest score of each list as the
//! interval half-width. Under exchangeability the resulting fixed-width
//! interval `[x_hat - mu, x_hat + mu]` covers each coordinate with probability
//! at least `1 - alpha`.

mod cqr;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::models::Regressor;

pub use cqr::{fit_cqr, predict_raw_qr, CqrCalibrator};

/// Componentwise absolute error `|x - x_hat|`.
pub fn nonconformity(x: &[f64], x_hat: &[f64]) -> Result<Vec<f64>> {
    check_dim(x.len(), x_hat.len())?;
    Ok(x.iter().zip(x_hat).map(|(a, b)| (a - b).abs()).collect())
}

/// Conformal p-value of `new_score`: `(#{scores >= new_score} + 1) / (N + 1)`.
pub fn p_value(cal_scores: &[f64], new_score: f64) -> Result<f64> {
    if cal_scores.is_empty() {
        return Err(Error::Calibration("p-value against an empty score list".into()));
    }
    let at_least = cal_scores.iter().filter(|&&s| s >= new_score).count();
    Ok((at_least + 1) as f64 / (cal_scores.len() + 1) as f64)
}

/// Rank `k = ceil((n + 1)(1 - alpha))` of the calibration quantile. May exceed `n`.
///
/// Products within 1e-9 of an integer are treated as that integer so that
/// e.g. `10 * 0.9` gives 9 regardless of rounding.
pub fn conformal_rank(n: usize, alpha: f64) -> usize {
    let v = (n + 1) as f64 * (1.0 - alpha);
    let k = (v - 1e-9).ceil();
    k.max(1.0) as usize
}

/// The `conformal_rank`-th smallest of `scores`, or `+inf` when the rank exceeds `scores.len()`.
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if scores.is_empty() {
        return Err(Error::Calibration("empty calibration set".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(kth_smallest(&sorted, alpha))
}

fn kth_smallest(sorted: &[f64], alpha: f64) -> f64 {
    let k = conformal_rank(sorted.len(), alpha);
    if k > sorted.len() {
        f64::INFINITY
    } else {
        sorted[k - 1]
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// How the significance level is spread across output coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageMode {
    /// Each coordinate is calibrated at `alpha` (per-coordinate marginal coverage).
    #[default]
    Marginal,
    /// Each coordinate is calibrated at `alpha / d`, so all `d` coordinates are
    /// covered simultaneously with probability at least `1 - alpha`.
    Bonferroni,
}

/// Per-coordinate calibration quantiles for split conformal prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalCalibrator {
    alpha: f64,
    mode: CoverageMode,
    n_cal: usize,
    #[serde(with = "extended_floats")]
    quantiles: Vec<f64>,
    /// Sorted nonconformity scores per output coordinate.
    scores: Vec<Vec<f64>>,
}

impl ConformalCalibrator {
    pub fn calibrate<R: Regressor>(model: &R, cal: &Dataset, alpha: f64) -> Result<Self> {
        Self::calibrate_with_mode(model, cal, alpha, CoverageMode::Marginal)
    }

    pub fn calibrate_with_mode<R: Regressor>(model: &R, cal: &Dataset, alpha: f64, mode: CoverageMode) -> Result<Self> {
        check_alpha(alpha)?;
        if cal.is_empty() {
            return Err(Error::Calibration("empty calibration set".into()));
        }
        check_dim(model.n_outputs(), cal.n_outputs())?;
        let preds = model.predict_dataset(cal)?;
        let mut scores = vec![Vec::with_capacity(cal.len()); cal.n_outputs()];
        for (s, p) in cal.samples().iter().zip(&preds) {
            for (k, d) in nonconformity(&s.x, p)?.into_iter().enumerate() {
                scores[k].push(d);
            }
        }
        Self::from_scores(scores, alpha, mode)
    }

    /// Builds a calibrator from raw (unsorted) per-coordinate score lists.
    pub fn from_scores(mut scores: Vec<Vec<f64>>, alpha: f64, mode: CoverageMode) -> Result<Self> {
        check_alpha(alpha)?;
        let n_cal = scores.first().map_or(0, Vec::len);
        if n_cal == 0 || scores.iter().any(|s| s.len() != n_cal) {
            return Err(Error::Calibration("score lists must be nonempty and of equal length".into()));
        }
        if scores.iter().flatten().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Calibration("nonconformity scores must be finite and nonnegative".into()));
        }
        for s in &mut scores {
            s.sort_by(f64::total_cmp);
        }
        let level = effective_alpha(alpha, mode, scores.len());
        let quantiles: Vec<f64> = scores.iter().map(|s| kth_smallest(s, level)).collect();
        if quantiles.iter().any(|q| q.is_infinite()) {
            log::warn!(
                "calibration set of {n_cal} is too small for alpha = {level}: rank {} exceeds it, intervals are unbounded",
                conformal_rank(n_cal, level)
            );
        }
        Ok(Self {
            alpha,
            mode,
            n_cal,
            quantiles,
            scores,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mode(&self) -> CoverageMode {
        self.mode
    }

    /// Level each coordinate is calibrated at.
    pub fn per_output_alpha(&self) -> f64 {
        effective_alpha(self.alpha, self.mode, self.quantiles.len())
    }

    pub fn n_cal(&self) -> usize {
        self.n_cal
    }

    /// Interval half-widths, one per output coordinate.
    pub fn quantiles(&self) -> &[f64] {
        &self.quantiles
    }

    pub fn scores(&self) -> &[Vec<f64>] {
        &self.scores
    }

    /// `[x_hat - mu, x_hat + mu]` for commands `u`.
    pub fn predict_interval<R: Regressor>(&self, model: &R, u: &[f64]) -> Result<PredictionInterval> {
        check_dim(self.quantiles.len(), model.n_outputs())?;
        let center = model.predict(u)?;
        Ok(self.interval_around(center))
    }

    pub fn predict_intervals<R: Regressor>(&self, model: &R, d: &Dataset) -> Result<Vec<PredictionInterval>> {
        check_dim(self.quantiles.len(), model.n_outputs())?;
        Ok(model
            .predict_dataset(d)?
            .into_iter()
            .map(|c| self.interval_around(c))
            .collect())
    }

    fn interval_around(&self, center: Vec<f64>) -> PredictionInterval {
        let lower = center.iter().zip(&self.quantiles).map(|(c, q)| c - q).collect();
        let upper = center.iter().zip(&self.quantiles).map(|(c, q)| c + q).collect();
        PredictionInterval {
            lower,
            center,
            upper,
            alpha: self.alpha,
        }
    }
}

fn effective_alpha(alpha: f64, mode: CoverageMode, dims: usize) -> f64 {
    match mode {
        CoverageMode::Marginal => alpha,
        CoverageMode::Bonferroni => alpha / dims.max(1) as f64,
    }
}

/// Per-coordinate bounds `lower <= center <= upper` at significance `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    #[serde(with = "extended_floats")]
    pub lower: Vec<f64>,
    pub center: Vec<f64>,
    #[serde(with = "extended_floats")]
    pub upper: Vec<f64>,
    pub alpha: f64,
}

impl PredictionInterval {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn width(&self) -> Vec<f64> {
        self.upper.iter().zip(&self.lower).map(|(u, l)| u - l).collect()
    }

    /// Inclusive containment of `x[k]` in coordinate `k`.
    pub fn contains(&self, k: usize, x: f64) -> bool {
        self.lower[k] <= x && x <= self.upper[k]
    }
}

/// Writes one row per interval with `<name>_lower,<name>_center,<name>_upper`
/// columns for each output (plus `<name>_truth` when `truth` is given).
pub fn write_intervals_csv(
    path: impl AsRef<Path>,
    output_names: &[String],
    intervals: &[PredictionInterval],
    truth: Option<&Dataset>,
) -> Result<()> {
    let path = path.as_ref();
    if let Some(t) = truth {
        if t.len() != intervals.len() {
            return Err(Error::Data("truth and interval counts differ".into()));
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["index".to_string()];
    for name in output_names {
        header.push(format!("{name}_lower"));
        header.push(format!("{name}_center"));
        header.push(format!("{name}_upper"));
        if truth.is_some() {
            header.push(format!("{name}_truth"));
        }
    }
    w.write_record(&header)?;
    for (i, iv) in intervals.iter().enumerate() {
        check_dim(output_names.len(), iv.dim())?;
        let mut row = vec![i.to_string()];
        for k in 0..iv.dim() {
            row.push(fmt_float(iv.lower[k]));
            row.push(fmt_float(iv.center[k]));
            row.push(fmt_float(iv.upper[k]));
            if let Some(t) = truth {
                row.push(fmt_float(t.samples()[i].x[k]));
            }
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Round-trippable float text; infinities as `inf` / `-inf`.
pub(crate) fn fmt_float(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:?}")
    }
}

/// JSON has no infinities; store them as the strings "inf" / "-inf".
pub(crate) mod extended_floats {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let reprs: Vec<Repr> = values
            .iter()
            .map(|&v| {
                if v.is_finite() {
                    Repr::Num(v)
                } else {
                    Repr::Text(super::fmt_float(v))
                }
            })
            .collect();
        reprs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Repr>::deserialize(d)?
            .into_iter()
            .map(|r| match r {
                Repr::Num(v) => Ok(v),
                Repr::Text(t) => match t.as_str() {
                    "inf" => Ok(f64::INFINITY),
                    "-inf" => Ok(f64::NEG_INFINITY),
                    other => Err(D::Error::custom(format!("bad float {other:?}"))),
                },
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;
    use crate::models::LinearModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn calib(scores: &[f64], alpha: f64) -> ConformalCalibrator {
        ConformalCalibrator::from_scores(vec![scores.to_vec()], alpha, CoverageMode::Marginal).unwrap()
    }

    #[test]
    fn nonconformity_cases() {
        assert_eq!(nonconformity(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(nonconformity(&[1.0, 2.0], &[0.0, 4.0]).unwrap(), vec![1.0, 2.0]);
        assert!(nonconformity(&[1.0], &[1.0, 2.0]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x: Vec<f64> = (0..50).map(|_| rng.random_range(-9.0..9.0)).collect();
        let y: Vec<f64> = (0..50).map(|_| rng.random_range(-9.0..9.0)).collect();
        let got = nonconformity(&x, &y).unwrap();
        for i in 0..50 {
            let want = if x[i] > y[i] { x[i] - y[i] } else { y[i] - x[i] };
            assert_eq!(got[i], want);
        }
    }

    #[test]
    fn rank_examples() {
        assert_eq!(conformal_rank(9, 0.1), 9);
        assert_eq!(conformal_rank(5, 0.1), 6);
        assert_eq!(conformal_rank(500, 0.1), 451);
        assert_eq!(conformal_rank(99, 0.1), 90);
    }

    #[test]
    fn quantile_of_nine_scores() {
        let scores: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        let c = calib(&scores, 0.1);
        assert_eq!(c.quantiles(), &[0.9]);

        // Oracle: the smallest candidate mu whose p-value still exceeds alpha when
        // it is counted as a calibration score, i.e. enumerate p over all candidates.
        let alpha = 0.1;
        let accepted_max = scores
            .iter()
            .copied()
            .filter(|&s| p_value(&scores, s).unwrap() > alpha)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(accepted_max, 0.9);
    }

    #[test]
    fn perfect_calibration_gives_zero_width() {
        let c = calib(&[0.0; 20], 0.1);
        assert_eq!(c.quantiles(), &[0.0]);
        let m = LinearModel::new(vec![vec![1.0]], vec![0.0]).unwrap();
        let iv = c.predict_interval(&m, &[2.5]).unwrap();
        assert_eq!(iv.lower, iv.upper);
        assert_eq!(iv.lower, vec![2.5]);
    }

    #[test]
    fn too_few_calibration_points_is_unbounded() {
        let c = calib(&[0.1, 0.2, 0.3, 0.4, 0.5], 0.1);
        assert_eq!(c.quantiles(), &[f64::INFINITY]);
        let json = serde_json::to_string(&c).unwrap();
        assert!(json.contains("\"inf\""));
        let back: ConformalCalibrator = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn interval_formula() {
        let c = ConformalCalibrator {
            alpha: 0.1,
            mode: CoverageMode::Marginal,
            n_cal: 1,
            quantiles: vec![0.5, 1.0],
            scores: vec![vec![0.5], vec![1.0]],
        };
        let iv = c.interval_around(vec![1.0, 2.0]);
        assert_eq!(iv.lower, vec![0.5, 1.0]);
        assert_eq!(iv.upper, vec![1.5, 3.0]);
    }

    #[test]
    fn p_value_cases() {
        let s = [0.2, 0.4, 0.4, 0.9];
        assert_eq!(p_value(&s, 1.0).unwrap(), 1.0 / 5.0);
        assert_eq!(p_value(&s, 0.1).unwrap(), 1.0);
        assert_eq!(p_value(&s, 0.4).unwrap(), 4.0 / 5.0);
        assert!(p_value(&[], 0.0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scores: Vec<f64> = (0..40).map(|_| rng.random_range(0..10) as f64).collect();
        for q in 0..12 {
            let q = q as f64;
            let mut count = 0;
            for &v in &scores {
                if v >= q {
                    count += 1;
                }
            }
            assert_eq!(p_value(&scores, q).unwrap(), (count + 1) as f64 / 41.0);
        }
    }

    #[test]
    fn calibrate_against_a_model() {
        let m = LinearModel::new(vec![vec![1.0], vec![0.0]], vec![0.0, 1.0]).unwrap();
        let samples = (0..19)
            .map(|i| Sample::new(vec![i as f64], vec![i as f64 + 0.1 * i as f64, 1.0 - 0.01 * i as f64]))
            .collect();
        let cal = Dataset::from_samples(samples, 1, 2).unwrap();
        let c = ConformalCalibrator::calibrate(&m, &cal, 0.1).unwrap();
        // k = ceil(20 * 0.9) = 18
        assert_eq!(c.n_cal(), 19);
        assert!((c.quantiles()[0] - 1.7).abs() < 1e-12);
        assert!((c.quantiles()[1] - 0.17).abs() < 1e-12);
        assert!(ConformalCalibrator::calibrate(&m, &cal.empty_like(), 0.1).is_err());
        assert!(ConformalCalibrator::calibrate(&m, &cal, 1.0).is_err());
    }

    #[test]
    fn bonferroni_widens() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let scores: Vec<Vec<f64>> = (0..3).map(|_| (0..200).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let m = ConformalCalibrator::from_scores(scores.clone(), 0.1, CoverageMode::Marginal).unwrap();
        let b = ConformalCalibrator::from_scores(scores, 0.1, CoverageMode::Bonferroni).unwrap();
        assert!((b.per_output_alpha() - 0.1 / 3.0).abs() < 1e-15);
        for (q_m, q_b) in m.quantiles().iter().zip(b.quantiles()) {
            assert!(q_b >= q_m);
        }
    }

    #[test]
    fn rejects_negative_scores() {
        assert!(ConformalCalibrator::from_scores(vec![vec![-0.1, 0.2]], 0.1, CoverageMode::Marginal).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn smaller_alpha_never_shrinks_mu(scores in prop::collection::vec(0.0f64..10.0, 1..60), a in 0.01f64..0.99, b in 0.01f64..0.99) {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                prop_assert!(conformal_quantile(&scores, lo).unwrap() >= conformal_quantile(&scores, hi).unwrap());
            }

            #[test]
            fn permutation_leaves_mu_unchanged(mut scores in prop::collection::vec(0.0f64..10.0, 1..60), seed in any::<u64>()) {
                use rand::seq::SliceRandom;
                let mu = conformal_quantile(&scores, 0.1).unwrap();
                scores.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                prop_assert_eq!(conformal_quantile(&scores, 0.1).unwrap(), mu);
            }

            #[test]
            fn adding_a_large_score_never_decreases_mu(scores in prop::collection::vec(0.0f64..10.0, 1..60), extra in 0.0f64..5.0) {
                let mu = conformal_quantile(&scores, 0.2).unwrap();
                prop_assume!(mu.is_finite());
                let mut more = scores.clone();
                more.push(mu + extra + 1e-9);
                prop_assert!(conformal_quantile(&more, 0.2).unwrap() >= mu);
            }
        }
    }
}
