//! Gradient-boosted regression trees with squared or pinball loss.
//!
//! Squared loss starts from the target mean and fits each stage's tree to the
//! current residuals. Pinball loss starts from the target `tau`-quantile, fits
//! each tree to the negative gradient `tau - 1[y < F]`, then replaces every
//! leaf value with the `tau`-quantile of the residuals routed to that leaf.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

use super::tree::grow_tree;
use super::{quantile_of, Columns, Loss, RegressionTree, Regressor, TreeParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub learning_rate: f64,
    pub loss: Loss,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            n_trees: 300,
            max_depth: Some(3),
            min_samples_leaf: 1,
            learning_rate: 0.1,
            loss: Loss::Squared,
        }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidParameter("boosting needs at least one tree".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "learning_rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        self.loss.validate()?;
        self.tree_params().validate()
    }

    fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    learning_rate: f64,
    loss: Loss,
    /// Stage-0 constant prediction per output.
    init: Vec<f64>,
    /// `trees[k]` holds the stage trees for output coordinate `k`.
    trees: Vec<Vec<RegressionTree>>,
    n_inputs: usize,
}

impl BoostedModel {
    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn init(&self) -> &[f64] {
        &self.init
    }

    pub fn trees(&self) -> &[Vec<RegressionTree>] {
        &self.trees
    }
}

impl Regressor for BoostedModel {
    fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    fn n_outputs(&self) -> usize {
        self.init.len()
    }

    fn predict_unchecked(&self, u: &[f64]) -> Vec<f64> {
        self.init
            .iter()
            .zip(&self.trees)
            .map(|(init, ts)| init + self.learning_rate * ts.iter().map(|t| t.predict_unchecked(u)).sum::<f64>())
            .collect()
    }
}

pub fn fit_boosted(train: &Dataset, params: &BoostParams) -> Result<BoostedModel> {
    fit_boosted_with_trace(train, params).map(|(m, _)| m)
}

/// Like [`fit_boosted`], also returning the mean training loss after each stage
/// (index 0 is the constant initial model) for every output.
pub fn fit_boosted_with_trace(train: &Dataset, params: &BoostParams) -> Result<(BoostedModel, Vec<Vec<f64>>)> {
    params.validate()?;
    let n = train.len();
    if n == 0 || n < 2 * params.min_samples_leaf {
        return Err(Error::Fit(format!(
            "boosting needs at least {} samples, got {n}",
            2 * params.min_samples_leaf
        )));
    }
    let cols = Columns::from_dataset(train);
    let inputs = train.inputs();

    let fitted: Vec<(f64, Vec<RegressionTree>, Vec<f64>)> = (0..train.n_outputs())
        .into_par_iter()
        .map(|k| fit_output(&cols, &inputs, &train.output_column(k), params))
        .collect();

    let mut init = Vec::new();
    let mut trees = Vec::new();
    let mut traces = Vec::new();
    for (i, ts, tr) in fitted {
        init.push(i);
        trees.push(ts);
        traces.push(tr);
    }
    let model = BoostedModel {
        learning_rate: params.learning_rate,
        loss: params.loss,
        init,
        trees,
        n_inputs: train.n_inputs(),
    };
    Ok((model, traces))
}

fn mean_loss(loss: Loss, y: &[f64], f: &[f64]) -> f64 {
    y.iter().zip(f).map(|(&a, &b)| loss.value(a, b)).sum::<f64>() / y.len() as f64
}

fn fit_output(
    cols: &Columns,
    inputs: &[Vec<f64>],
    y: &[f64],
    params: &BoostParams,
) -> (f64, Vec<RegressionTree>, Vec<f64>) {
    let n = y.len();
    let tree_params = params.tree_params();
    let init = match params.loss {
        Loss::Squared => y.iter().sum::<f64>() / n as f64,
        Loss::Pinball { tau } => quantile_of(&mut y.to_vec(), tau),
    };
    let mut f = vec![init; n];
    let mut trace = vec![mean_loss(params.loss, y, &f)];
    let mut trees = Vec::with_capacity(params.n_trees);

    for _ in 0..params.n_trees {
        let tree = match params.loss {
            Loss::Squared => {
                let resid: Vec<f64> = y.iter().zip(&f).map(|(a, b)| a - b).collect();
                grow_tree(cols, &resid, (0..n).collect(), &tree_params, Loss::Squared, None)
            }
            Loss::Pinball { tau } => {
                let grad: Vec<f64> = y
                    .iter()
                    .zip(&f)
                    .map(|(&a, &b)| if a < b { tau - 1.0 } else { tau })
                    .collect();
                let mut tree = grow_tree(cols, &grad, (0..n).collect(), &tree_params, Loss::Squared, None);
                let mut by_leaf: Vec<Vec<f64>> = vec![Vec::new(); tree.nodes().len()];
                for (i, u) in inputs.iter().enumerate() {
                    by_leaf[tree.leaf_index(u)].push(y[i] - f[i]);
                }
                for (leaf, mut resid) in by_leaf.into_iter().enumerate() {
                    if !resid.is_empty() {
                        tree.set_leaf_value(leaf, quantile_of(&mut resid, tau));
                    }
                }
                tree
            }
        };
        for (fi, u) in f.iter_mut().zip(inputs) {
            *fi += params.learning_rate * tree.predict_unchecked(u);
        }
        trace.push(mean_loss(params.loss, y, &f));
        trees.push(tree);
    }
    (init, trees, trace)
}
