//! Run configuration, read from a single TOML document.
//!
//! ```toml
//! seed = 7
//! alpha = 0.1
//! out_dir = "runs/demo"
//!
//! [data]
//! source = "synthetic"
//! noise_std = 0.5
//!
//! [[models]]
//! id = "gb"
//! kind = "boosted"
//! n_trees = 300
//! ```
//!
//! Omitted keys take their defaults; the fully resolved document is written
//! next to the run outputs.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conformal::CoverageMode;
use crate::dataset::{SplitFractions, SynthConfig};
use crate::error::{Error, Result};
use crate::models::{BoostParams, ForestParams, LassoParams, ModelSpec};

/// Where the four data splits come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SynthConfig),
    /// One CSV per split; the extrapolation file is optional.
    CsvSplits {
        n_inputs: usize,
        train: PathBuf,
        calibration: PathBuf,
        test: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        extrapolation: Option<PathBuf>,
    },
    /// A single CSV partitioned by `fractions`.
    CsvSingle {
        path: PathBuf,
        n_inputs: usize,
        fractions: SplitFractions,
        #[serde(default = "default_true")]
        shuffle: bool,
    },
}

fn default_true() -> bool {
    true
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SynthConfig::default())
    }
}

/// Point metric used to rank the pool on the calibration split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    Rmse,
    Mae,
}

impl SelectionMetric {
    pub fn name(self) -> &'static str {
        match self {
            SelectionMetric::Rmse => "rmse",
            SelectionMetric::Mae => "mae",
        }
    }
}

/// A named model in the pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub id: String,
    #[serde(flatten)]
    pub spec: ModelSpec,
}

impl ModelEntry {
    pub fn new(id: impl Into<String>, spec: ModelSpec) -> Self {
        Self { id: id.into(), spec }
    }
}

/// LR, LASSO, RF and GB with default hyperparameters.
pub fn default_pool() -> Vec<ModelEntry> {
    vec![
        ModelEntry::new("lr", ModelSpec::Linear),
        ModelEntry::new("lasso", ModelSpec::Lasso(LassoParams::default())),
        ModelEntry::new("rf", ModelSpec::Forest(ForestParams::default())),
        ModelEntry::new("gb", ModelSpec::Boosted(BoostParams::default())),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. It replaces the seed of the synthetic generator and of every
    /// forest, and drives the shuffle of single-file CSV sources.
    pub seed: u64,
    pub alpha: f64,
    /// Z-score inputs with training statistics before fitting.
    pub standardize: bool,
    pub out_dir: PathBuf,
    pub selection_metric: SelectionMetric,
    pub conformal_mode: CoverageMode,
    /// Also run raw quantile regression and CQR in `conformal`.
    pub compare_quantile: bool,
    /// Boosting settings for the quantile pair; the loss is set per quantile.
    pub quantile: BoostParams,
    pub data: DataSource,
    pub models: Vec<ModelEntry>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            alpha: 0.1,
            standardize: false,
            out_dir: PathBuf::from("softkin-out"),
            selection_metric: SelectionMetric::Rmse,
            conformal_mode: CoverageMode::Marginal,
            compare_quantile: true,
            quantile: BoostParams::default(),
            data: DataSource::default(),
            models: default_pool(),
        }
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub out_dir: Option<PathBuf>,
    /// Keep only these model ids, in this order.
    pub models: Option<Vec<String>>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Applies overrides, propagates the master seed and validates the result.
    pub fn resolve(mut self, ov: &Overrides) -> Result<Self> {
        if let Some(seed) = ov.seed {
            self.seed = seed;
        }
        if let Some(alpha) = ov.alpha {
            self.alpha = alpha;
        }
        if let Some(out) = &ov.out_dir {
            self.out_dir = out.clone();
        }
        if let Some(ids) = &ov.models {
            let mut keep = Vec::with_capacity(ids.len());
            for id in ids {
                let entry = self
                    .models
                    .iter()
                    .find(|m| &m.id == id)
                    .ok_or_else(|| Error::Config(format!("--models names unknown model {id:?}")))?;
                keep.push(entry.clone());
            }
            self.models = keep;
        }
        if let DataSource::Synthetic(s) = &mut self.data {
            s.seed = self.seed;
        }
        for m in &mut self.models {
            if let ModelSpec::Forest(p) = &mut m.spec {
                p.seed = self.seed;
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return cfg(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.models.is_empty() {
            return cfg("at least one model is required".into());
        }
        let mut seen = BTreeSet::new();
        for m in &self.models {
            if !valid_id(&m.id) {
                return cfg(format!("model id {:?} may only use letters, digits, '_' and '-'", m.id));
            }
            if !seen.insert(m.id.as_str()) {
                return cfg(format!("duplicate model id {:?}", m.id));
            }
            m.spec
                .validate()
                .map_err(|e| Error::Config(format!("model {:?}: {e}", m.id)))?;
        }
        self.quantile
            .validate()
            .map_err(|e| Error::Config(format!("quantile: {e}")))?;
        match &self.data {
            DataSource::Synthetic(s) => s.validate()?,
            DataSource::CsvSplits {
                n_inputs,
                train,
                calibration,
                test,
                extrapolation,
            } => {
                if *n_inputs == 0 {
                    return cfg("n_inputs must be at least 1".into());
                }
                for p in [Some(train), Some(calibration), Some(test), extrapolation.as_ref()].into_iter().flatten() {
                    if !p.is_file() {
                        return cfg(format!("data file {} does not exist", p.display()));
                    }
                }
            }
            DataSource::CsvSingle {
                path,
                n_inputs,
                fractions,
                ..
            } => {
                if *n_inputs == 0 {
                    return cfg("n_inputs must be at least 1".into());
                }
                if !path.is_file() {
                    return cfg(format!("data file {} does not exist", path.display()));
                }
                fractions.validate().map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        Ok(())
    }
}
