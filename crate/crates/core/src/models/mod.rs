//! Forward-kinematics regressors.
//!
//! Every model maps an actuation-command vector to a position vector and is
//! fitted by empirical risk minimization on a training [`Dataset`]. Multi-output
//! targets are handled by one independent sub-model per output coordinate,
//! all sharing the same hyperparameters.

mod boost;
mod forest;
mod linear;
mod tree;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conformal::ConformalCalibrator;
use crate::dataset::{Dataset, Standardizer};
use crate::error::{check_dim, Error, Result};

pub use boost::{fit_boosted, fit_boosted_with_trace, BoostParams, BoostedModel};
pub use forest::{fit_forest, ForestModel, ForestParams};
pub use linear::{fit_lasso, fit_linear, lambda_max, soft_threshold, LassoFit, LassoParams, LinearModel};
pub use tree::{fit_tree, fit_tree_with_loss, Node, RegressionTree, TreeParams};

/// Training loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Loss {
    Squared,
    Pinball { tau: f64 },
}

impl Loss {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Loss::Squared => Ok(()),
            Loss::Pinball { tau } if tau > 0.0 && tau < 1.0 => Ok(()),
            Loss::Pinball { tau } => Err(Error::InvalidParameter(format!(
                "pinball tau must lie in (0, 1), got {tau}"
            ))),
        }
    }

    /// Loss of predicting `pred` when the truth is `y`.
    pub fn value(&self, y: f64, pred: f64) -> f64 {
        match *self {
            Loss::Squared => (y - pred).powi(2),
            Loss::Pinball { tau } => pinball(y, pred, tau),
        }
    }
}

/// `tau * max(y - pred, 0) + (1 - tau) * max(pred - y, 0)`.
pub fn pinball(y: f64, pred: f64, tau: f64) -> f64 {
    let d = y - pred;
    if d >= 0.0 {
        tau * d
    } else {
        (tau - 1.0) * d
    }
}

/// Lower empirical `tau`-quantile: the `ceil(tau * n)`-th smallest value.
/// It minimizes the summed pinball loss over the sample. `values` must be nonempty.
pub(crate) fn quantile_of(values: &mut [f64], tau: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let n = values.len();
    let k = ((tau * n as f64).ceil() as usize).clamp(1, n);
    let (_, v, _) = values.select_nth_unstable_by(k - 1, f64::total_cmp);
    *v
}

/// The fit/predict contract shared by every forward-kinematics model.
pub trait Regressor {
    fn n_inputs(&self) -> usize;

    fn n_outputs(&self) -> usize;

    /// Prediction without the dimension check.
    fn predict_unchecked(&self, u: &[f64]) -> Vec<f64>;

    fn predict(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n_inputs(), u.len())?;
        Ok(self.predict_unchecked(u))
    }

    fn predict_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|u| self.predict(u)).collect()
    }

    fn predict_dataset(&self, d: &Dataset) -> Result<Vec<Vec<f64>>> {
        check_dim(self.n_inputs(), d.n_inputs())?;
        Ok(d.samples().iter().map(|s| self.predict_unchecked(&s.u)).collect())
    }
}

impl<R: Regressor + ?Sized> Regressor for &R {
    fn n_inputs(&self) -> usize {
        (**self).n_inputs()
    }
    fn n_outputs(&self) -> usize {
        (**self).n_outputs()
    }
    fn predict_unchecked(&self, u: &[f64]) -> Vec<f64> {
        (**self).predict_unchecked(u)
    }
}

/// A model family plus its hyperparameters, as written in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Linear,
    Lasso(LassoParams),
    Forest(ForestParams),
    Boosted(BoostParams),
}

impl ModelSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelSpec::Linear => "linear",
            ModelSpec::Lasso(_) => "lasso",
            ModelSpec::Forest(_) => "forest",
            ModelSpec::Boosted(_) => "boosted",
        }
    }

    /// Short display label (LR, LASSO, RF, GB, QR).
    pub fn label(&self) -> &'static str {
        match self {
            ModelSpec::Linear => "LR",
            ModelSpec::Lasso(_) => "LASSO",
            ModelSpec::Forest(_) => "RF",
            ModelSpec::Boosted(p) if matches!(p.loss, Loss::Pinball { .. }) => "QR",
            ModelSpec::Boosted(_) => "GB",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Linear => Ok(()),
            ModelSpec::Lasso(p) => p.validate(),
            ModelSpec::Forest(p) => p.validate(),
            ModelSpec::Boosted(p) => p.validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelBody {
    Linear(LinearModel),
    Forest(ForestModel),
    Boosted(BoostedModel),
}

impl Regressor for ModelBody {
    fn n_inputs(&self) -> usize {
        match self {
            ModelBody::Linear(m) => m.n_inputs(),
            ModelBody::Forest(m) => m.n_inputs(),
            ModelBody::Boosted(m) => m.n_inputs(),
        }
    }

    fn n_outputs(&self) -> usize {
        match self {
            ModelBody::Linear(m) => m.n_outputs(),
            ModelBody::Forest(m) => m.n_outputs(),
            ModelBody::Boosted(m) => m.n_outputs(),
        }
    }

    fn predict_unchecked(&self, u: &[f64]) -> Vec<f64> {
        match self {
            ModelBody::Linear(m) => m.predict_unchecked(u),
            ModelBody::Forest(m) => m.predict_unchecked(u),
            ModelBody::Boosted(m) => m.predict_unchecked(u),
        }
    }
}

/// A fitted model with the spec it came from and an optional input standardizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub id: String,
    pub spec: ModelSpec,
    pub standardizer: Option<Standardizer>,
    pub body: ModelBody,
    /// Whether the solver met its stopping tolerance (always true for closed-form fits).
    pub converged: bool,
}

impl FittedModel {
    /// Fits `spec` on `train`. With `standardize`, inputs are scaled by a
    /// [`Standardizer`] fitted on `train` before they reach the model.
    pub fn fit(id: impl Into<String>, spec: &ModelSpec, train: &Dataset, standardize: bool) -> Result<Self> {
        spec.validate()?;
        if train.is_empty() {
            return Err(Error::Fit("training set is empty".into()));
        }
        let standardizer = if standardize {
            Some(Standardizer::fit(train)?)
        } else {
            None
        };
        let scaled;
        let data = match &standardizer {
            Some(s) => {
                scaled = s.transform(train)?;
                &scaled
            }
            None => train,
        };
        let mut converged = true;
        let body = match spec {
            ModelSpec::Linear => ModelBody::Linear(fit_linear(data)?),
            ModelSpec::Lasso(p) => {
                let fit = fit_lasso(data, p)?;
                converged = fit.converged;
                ModelBody::Linear(fit.model)
            }
            ModelSpec::Forest(p) => ModelBody::Forest(fit_forest(data, p)?),
            ModelSpec::Boosted(p) => ModelBody::Boosted(fit_boosted(data, p)?),
        };
        Ok(Self {
            id: id.into(),
            spec: spec.clone(),
            standardizer,
            body,
            converged,
        })
    }
}

impl Regressor for FittedModel {
    fn n_inputs(&self) -> usize {
        self.body.n_inputs()
    }

    fn n_outputs(&self) -> usize {
        self.body.n_outputs()
    }

    fn predict_unchecked(&self, u: &[f64]) -> Vec<f64> {
        match &self.standardizer {
            Some(s) => self.body.predict_unchecked(&s.apply_unchecked(u)),
            None => self.body.predict_unchecked(u),
        }
    }
}

pub const MODEL_FORMAT: &str = "softkin-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// The versioned JSON document a model (and optionally its calibrator) is stored in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
    pub model: FittedModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrator: Option<ConformalCalibrator>,
}

impl ModelDocument {
    pub fn new(model: FittedModel, input_names: Vec<String>, output_names: Vec<String>) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_FORMAT_VERSION,
            input_names,
            output_names,
            model,
            calibrator: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format != MODEL_FORMAT {
            return Err(Error::Data(format!("not a model document: format {:?}", doc.format)));
        }
        if doc.version != MODEL_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported model document version {} (expected {MODEL_FORMAT_VERSION})",
                doc.version
            )));
        }
        Ok(doc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Column-major copy of a dataset's inputs, used by the tree learners.
#[derive(Debug, Clone)]
pub(crate) struct Columns {
    pub cols: Vec<Vec<f64>>,
}

impl Columns {
    pub fn from_dataset(d: &Dataset) -> Self {
        Self {
            cols: (0..d.n_inputs()).map(|j| d.input_column(j)).collect(),
        }
    }
}
