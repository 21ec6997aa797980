use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

use super::Dataset;

/// Smallest standard deviation a column is allowed to have.
pub const STD_FLOOR: f64 = 1e-12;

/// Per-input-column affine scaling to zero mean and unit (population) variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    /// Fits on the input columns of `d`. Constant columns get `STD_FLOOR`.
    pub fn fit(d: &Dataset) -> Result<Self> {
        Self::fit_rows(&d.inputs())
    }

    pub fn fit_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::Data(format!(
                "standardizer needs at least 2 rows, got {}",
                rows.len()
            )));
        }
        let n = rows.len() as f64;
        let width = rows[0].len();
        let mut mean = vec![0.0; width];
        let mut std = vec![0.0; width];
        for j in 0..width {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
            mean[j] = m;
            std[j] = var.sqrt();
            if std[j] < STD_FLOOR {
                log::warn!("input column {j} is constant; clamping its std to {STD_FLOOR:e}");
                std[j] = STD_FLOOR;
            }
        }
        Ok(Self { mean, std })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), u.len())?;
        Ok(self.apply_unchecked(u))
    }

    pub(crate) fn apply_unchecked(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), z.len())?;
        Ok(z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect())
    }

    /// Applies the scaling to the inputs of every sample in `d`.
    pub fn transform(&self, d: &Dataset) -> Result<Dataset> {
        check_dim(self.dim(), d.n_inputs())?;
        let samples = d
            .samples()
            .iter()
            .map(|s| super::Sample::new(self.apply_unchecked(&s.u), s.x.clone()))
            .collect();
        Dataset::new(samples, d.input_names().to_vec(), d.output_names().to_vec())
    }
}
