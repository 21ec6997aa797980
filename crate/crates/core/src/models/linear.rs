use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, STD_FLOOR};
use crate::error::{Error, Result};

use super::Regressor;

/// `x = W u + b` with `W` stored row-per-output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    weights: Vec<Vec<f64>>,
    intercept: Vec<f64>,
}

impl LinearModel {
    pub fn new(weights: Vec<Vec<f64>>, intercept: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != intercept.len() {
            return Err(Error::InvalidParameter(
                "weight rows must match intercept length and be nonempty".into(),
            ));
        }
        let n = weights[0].len();
        if n == 0 || weights.iter().any(|w| w.len() != n) {
            return Err(Error::InvalidParameter("ragged or empty weight matrix".into()));
        }
        Ok(Self { weights, intercept })
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn intercept(&self) -> &[f64] {
        &self.intercept
    }
}

impl Regressor for LinearModel {
    fn n_inputs(&self) -> usize {
        self.weights[0].len()
    }

    fn n_outputs(&self) -> usize {
        self.weights.len()
    }

    fn predict_unchecked(&self, u: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.intercept)
            .map(|(w, b)| b + w.iter().zip(u).map(|(wi, ui)| wi * ui).sum::<f64>())
            .collect()
    }
}

fn column_means(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    let width = rows[0].len();
    (0..width)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect()
}

/// Ordinary least squares through an SVD of the centered design matrix.
///
/// The intercept is recovered from the column means. A rank-deficient design
/// yields the minimum-norm weight matrix and logs a warning.
pub fn fit_linear(train: &Dataset) -> Result<LinearModel> {
    if train.is_empty() {
        return Err(Error::Fit("linear fit on an empty dataset".into()));
    }
    let inputs = train.inputs();
    let outputs = train.outputs();
    let (n_rows, n_in, n_out) = (train.len(), train.n_inputs(), train.n_outputs());
    let u_mean = column_means(&inputs);
    let x_mean = column_means(&outputs);

    let a = DMatrix::from_fn(n_rows, n_in, |i, j| inputs[i][j] - u_mean[j]);
    let b = DMatrix::from_fn(n_rows, n_out, |i, k| outputs[i][k] - x_mean[k]);

    let svd = a.svd(true, true);
    let sigma_max = svd.singular_values.max();
    let cutoff = sigma_max * n_rows.max(n_in) as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    if rank < n_in {
        log::warn!("rank-deficient design (rank {rank} < {n_in}); using the minimum-norm solution");
    }
    let coef = if rank == 0 {
        DMatrix::zeros(n_in, n_out)
    } else {
        svd.solve(&b, cutoff).map_err(|e| Error::Fit(e.to_string()))?
    };

    let weights: Vec<Vec<f64>> = (0..n_out)
        .map(|k| (0..n_in).map(|j| coef[(j, k)]).collect())
        .collect();
    let intercept = (0..n_out)
        .map(|k| x_mean[k] - weights[k].iter().zip(&u_mean).map(|(w, m)| w * m).sum::<f64>())
        .collect();
    LinearModel::new(weights, intercept)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoParams {
    pub lambda: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LassoParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            max_iter: 10_000,
            tol: 1e-6,
        }
    }
}

impl LassoParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("lasso lambda must be >= 0, got {}", self.lambda)));
        }
        if self.max_iter == 0 || !(self.tol > 0.0) {
            return Err(Error::InvalidParameter("lasso needs max_iter >= 1 and tol > 0".into()));
        }
        Ok(())
    }
}

/// Result of [`fit_lasso`], with per-output solver diagnostics.
#[derive(Debug, Clone)]
pub struct LassoFit {
    pub model: LinearModel,
    /// True when every output met the tolerance before `max_iter` sweeps.
    pub converged: bool,
    pub iterations: Vec<usize>,
    /// Objective value after each sweep, per output.
    pub objective_trace: Vec<Vec<f64>>,
}

/// `S(z, g) = sign(z) max(|z| - g, 0)`.
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Standardized design used by the lasso: z-scored columns and centered targets.
struct LassoDesign {
    z: Vec<Vec<f64>>,
    mean: Vec<f64>,
    std: Vec<f64>,
    active: Vec<bool>,
}

impl LassoDesign {
    fn new(train: &Dataset) -> Self {
        let n = train.len() as f64;
        let mut z = Vec::with_capacity(train.n_inputs());
        let mut mean = Vec::new();
        let mut std = Vec::new();
        let mut active = Vec::new();
        for j in 0..train.n_inputs() {
            let col = train.input_column(j);
            let m = col.iter().sum::<f64>() / n;
            let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            let live = s >= STD_FLOOR;
            z.push(if live {
                col.iter().map(|v| (v - m) / s).collect()
            } else {
                vec![0.0; col.len()]
            });
            mean.push(m);
            std.push(if live { s } else { 1.0 });
            active.push(live);
        }
        Self { z, mean, std, active }
    }
}

/// Smallest penalty that zeroes every weight, per output: `max_j |z_j . y_c| / N`.
pub fn lambda_max(train: &Dataset) -> Vec<f64> {
    let design = LassoDesign::new(train);
    let n = train.len() as f64;
    (0..train.n_outputs())
        .map(|k| {
            let y = train.output_column(k);
            let ym = y.iter().sum::<f64>() / n;
            design
                .z
                .iter()
                .map(|zj| (zj.iter().zip(&y).map(|(a, b)| a * (b - ym)).sum::<f64>() / n).abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Cyclic coordinate descent on `(1/2N) ||y - b - Z w||^2 + lambda ||w||_1`, one output at a time.
///
/// `Z` is the z-scored input matrix, so the penalty acts on standardized
/// coefficients; the returned model is mapped back to raw input units.
pub fn fit_lasso(train: &Dataset, params: &LassoParams) -> Result<LassoFit> {
    params.validate()?;
    if train.is_empty() {
        return Err(Error::Fit("lasso fit on an empty dataset".into()));
    }
    let design = LassoDesign::new(train);
    let n = train.len() as f64;
    let n_in = train.n_inputs();
    let diag: Vec<f64> = design
        .z
        .iter()
        .map(|zj| zj.iter().map(|v| v * v).sum::<f64>() / n)
        .collect();

    let mut weights = Vec::new();
    let mut intercept = Vec::new();
    let mut iterations = Vec::new();
    let mut traces = Vec::new();
    let mut converged = true;

    for k in 0..train.n_outputs() {
        let y = train.output_column(k);
        let ym = y.iter().sum::<f64>() / n;
        let mut resid: Vec<f64> = y.iter().map(|v| v - ym).collect();
        let mut beta = vec![0.0; n_in];
        let mut trace = Vec::new();
        let mut done = false;
        let mut sweeps = 0;

        while sweeps < params.max_iter {
            sweeps += 1;
            let mut max_change: f64 = 0.0;
            for j in 0..n_in {
                if !design.active[j] {
                    continue;
                }
                let zj = &design.z[j];
                let rho = zj.iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() / n + diag[j] * beta[j];
                let updated = soft_threshold(rho, params.lambda) / diag[j];
                let delta = updated - beta[j];
                if delta != 0.0 {
                    for (r, a) in resid.iter_mut().zip(zj) {
                        *r -= a * delta;
                    }
                    beta[j] = updated;
                    max_change = max_change.max(delta.abs());
                }
            }
            let sse = resid.iter().map(|r| r * r).sum::<f64>();
            trace.push(sse / (2.0 * n) + params.lambda * beta.iter().map(|b| b.abs()).sum::<f64>());
            if max_change < params.tol {
                done = true;
                break;
            }
        }
        if !done {
            log::warn!("lasso output {k} did not converge in {} sweeps", params.max_iter);
            converged = false;
        }

        let w: Vec<f64> = beta.iter().zip(&design.std).map(|(b, s)| b / s).collect();
        let b = ym - w.iter().zip(&design.mean).map(|(wi, m)| wi * m).sum::<f64>();
        weights.push(w);
        intercept.push(b);
        iterations.push(sweeps);
        traces.push(trace);
    }

    Ok(LassoFit {
        model: LinearModel::new(weights, intercept)?,
        converged,
        iterations,
        objective_trace: traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line_data() -> Dataset {
        let samples = (0..20)
            .map(|i| {
                let u = i as f64 * 0.37 - 2.0;
                Sample::new(vec![u], vec![2.0 * u + 1.0])
            })
            .collect();
        Dataset::from_samples(samples, 1, 1).unwrap()
    }

    fn random_problem(seed: u64, n: usize, p: usize, noise: f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth: Vec<f64> = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
        let samples = (0..n)
            .map(|_| {
                let u: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
                let x = 0.5 + u.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>()
                    + noise * rng.random_range(-1.0..1.0);
                Sample::new(u, vec![x])
            })
            .collect();
        Dataset::from_samples(samples, p, 1).unwrap()
    }

    fn mse(m: &LinearModel, d: &Dataset) -> f64 {
        d.samples()
            .iter()
            .map(|s| (m.predict(&s.u).unwrap()[0] - s.x[0]).powi(2))
            .sum::<f64>()
            / d.len() as f64
    }

    #[test]
    fn recovers_noiseless_line() {
        let m = fit_linear(&line_data()).unwrap();
        assert!((m.weights()[0][0] - 2.0).abs() < 1e-10);
        assert!((m.intercept()[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn identity_map() {
        let m = LinearModel::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]).unwrap();
        assert_eq!(m.predict(&[3.5, -2.0]).unwrap(), vec![3.5, -2.0]);
        assert!(m.predict(&[1.0]).is_err());
    }

    #[test]
    fn constant_targets() {
        let samples = (0..10).map(|i| Sample::new(vec![i as f64, (i * i) as f64], vec![4.25])).collect();
        let d = Dataset::from_samples(samples, 2, 1).unwrap();
        let m = fit_linear(&d).unwrap();
        assert!(m.weights()[0].iter().all(|w| w.abs() < 1e-12));
        assert!((m.intercept()[0] - 4.25).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_gives_minimum_norm() {
        // second column duplicates the first, so any w1 + w2 = 3 fits; min-norm splits evenly.
        let samples = (0..10)
            .map(|i| {
                let u = i as f64;
                Sample::new(vec![u, u], vec![3.0 * u])
            })
            .collect();
        let d = Dataset::from_samples(samples, 2, 1).unwrap();
        let m = fit_linear(&d).unwrap();
        assert!((m.weights()[0][0] - 1.5).abs() < 1e-9);
        assert!((m.weights()[0][1] - 1.5).abs() < 1e-9);
    }

    #[test]
    fn least_squares_beats_perturbations() {
        let d = random_problem(5, 50, 3, 0.3);
        let m = fit_linear(&d).unwrap();
        let best = mse(&m, &d);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let scale = 10f64.powf(rng.random_range(-4.0..0.0));
            let w: Vec<f64> = m.weights()[0].iter().map(|w| w + scale * rng.random_range(-1.0..1.0)).collect();
            let b = m.intercept()[0] + scale * rng.random_range(-1.0..1.0);
            let other = LinearModel::new(vec![w], vec![b]).unwrap();
            assert!(best <= mse(&other, &d));
        }
    }

    #[test]
    fn scaling_targets_scales_predictions() {
        let d = random_problem(8, 30, 2, 0.1);
        let c = -3.5;
        let scaled: Vec<Sample> = d.samples().iter().map(|s| Sample::new(s.u.clone(), vec![c * s.x[0]])).collect();
        let d2 = Dataset::from_samples(scaled, 2, 1).unwrap();
        let (m1, m2) = (fit_linear(&d).unwrap(), fit_linear(&d2).unwrap());
        for s in d.samples() {
            let (a, b) = (m1.predict(&s.u).unwrap()[0], m2.predict(&s.u).unwrap()[0]);
            assert!((c * a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }
    }

    #[test]
    fn lasso_full_shrinkage() {
        let d = random_problem(3, 40, 3, 0.2);
        let lmax = lambda_max(&d)[0];
        let fit = fit_lasso(&d, &LassoParams { lambda: lmax, ..Default::default() }).unwrap();
        assert!(fit.model.weights()[0].iter().all(|&w| w == 0.0));
        let mean = d.output_column(0).iter().sum::<f64>() / d.len() as f64;
        assert_eq!(fit.model.intercept()[0], mean);
        assert!(fit.converged);
    }

    #[test]
    fn lasso_without_penalty_is_ols() {
        let fit = fit_lasso(&line_data(), &LassoParams { lambda: 0.0, ..Default::default() }).unwrap();
        assert!((fit.model.weights()[0][0] - 2.0).abs() < 1e-6);
        assert!((fit.model.intercept()[0] - 1.0).abs() < 1e-6);

        let d = random_problem(21, 60, 3, 0.5);
        let ols = fit_linear(&d).unwrap();
        let fit = fit_lasso(&d, &LassoParams { lambda: 0.0, tol: 1e-10, ..Default::default() }).unwrap();
        for (a, b) in ols.weights()[0].iter().zip(&fit.model.weights()[0]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn lasso_scalar_closed_form() {
        let d = random_problem(12, 25, 1, 0.5);
        let lambda = 0.1;
        let fit = fit_lasso(&d, &LassoParams { lambda, ..Default::default() }).unwrap();
        // Oracle: with z-scored u and centered y, w_std = S(c, lambda) / a.
        let u = d.input_column(0);
        let y = d.output_column(0);
        let n = u.len() as f64;
        let (um, ym) = (u.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let sd = (u.iter().map(|v| (v - um).powi(2)).sum::<f64>() / n).sqrt();
        let z: Vec<f64> = u.iter().map(|v| (v - um) / sd).collect();
        let c = z.iter().zip(&y).map(|(a, b)| a * (b - ym)).sum::<f64>() / n;
        let a = z.iter().map(|v| v * v).sum::<f64>() / n;
        let s = if c.abs() > lambda { c - lambda * c.signum() } else { 0.0 };
        let want = s / a / sd;
        assert!((fit.model.weights()[0][0] - want).abs() < 1e-12, "{} vs {want}", fit.model.weights()[0][0]);
    }

    #[test]
    fn lasso_objective_nonincreasing() {
        let mut d = random_problem(31, 80, 5, 1.0);
        // correlate two columns so several sweeps are needed
        let samples: Vec<Sample> = d
            .samples()
            .iter()
            .map(|s| {
                let mut u = s.u.clone();
                u[1] = 0.9 * u[0] + 0.1 * u[1];
                Sample::new(u, s.x.clone())
            })
            .collect();
        d = Dataset::from_samples(samples, 5, 1).unwrap();
        let fit = fit_lasso(&d, &LassoParams { lambda: 0.05, tol: 1e-12, ..Default::default() }).unwrap();
        let trace = &fit.objective_trace[0];
        assert!(trace.len() > 2);
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-15 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn lasso_reports_nonconvergence() {
        let d = random_problem(31, 80, 5, 1.0);
        let fit = fit_lasso(&d, &LassoParams { lambda: 0.0, max_iter: 1, tol: 1e-300 }).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, vec![1]);
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(5.0, 2.0), 3.0);
        assert_eq!(soft_threshold(-5.0, 2.0), -3.0);
        assert_eq!(soft_threshold(1.0, 2.0), 0.0);
    }
}
