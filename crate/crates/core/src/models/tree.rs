//! Exact greedy regression trees.
//!
//! Split candidates are midpoints between consecutive distinct feature values
//! in the node. A split is accepted only if it strictly reduces the node loss;
//! among equal gains the lowest feature index, then the lowest threshold, wins.

use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{check_dim, Error, Result};

use super::{pinball, quantile_of, Columns, Loss};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Number of features examined at each split; `None` means all.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_leaf: 1,
            max_features: None,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidParameter("min_samples_leaf must be at least 1".into()));
        }
        if self.max_features == Some(0) {
            return Err(Error::InvalidParameter("max_features must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    /// Inputs with `u[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A single-output binary regression tree stored as a flat node list, root first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    n_inputs: usize,
}

impl RegressionTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Index of the leaf `u` is routed to.
    pub fn leaf_index(&self, u: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if u[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, u: &[f64]) -> Result<f64> {
        check_dim(self.n_inputs, u.len())?;
        Ok(self.predict_unchecked(u))
    }

    pub(crate) fn predict_unchecked(&self, u: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(u)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    pub(crate) fn set_leaf_value(&mut self, leaf: usize, v: f64) {
        if let Node::Leaf { value } = &mut self.nodes[leaf] {
            *value = v;
        }
    }
}

/// Fits a squared-loss tree to output column `output_dim` of `train`.
pub fn fit_tree(train: &Dataset, output_dim: usize, params: &TreeParams) -> Result<RegressionTree> {
    fit_tree_with_loss(train, output_dim, params, Loss::Squared)
}

/// Fits a tree whose splits minimize `loss`: variance reduction for squared
/// loss, pinball-loss reduction with `tau`-quantile leaves for pinball loss.
pub fn fit_tree_with_loss(
    train: &Dataset,
    output_dim: usize,
    params: &TreeParams,
    loss: Loss,
) -> Result<RegressionTree> {
    params.validate()?;
    loss.validate()?;
    if output_dim >= train.n_outputs() {
        return Err(Error::InvalidParameter(format!(
            "output_dim {output_dim} out of range for {} outputs",
            train.n_outputs()
        )));
    }
    if train.is_empty() || train.len() < 2 * params.min_samples_leaf {
        return Err(Error::Fit(format!(
            "tree needs at least {} samples, got {}",
            2 * params.min_samples_leaf,
            train.len()
        )));
    }
    let cols = Columns::from_dataset(train);
    let targets = train.output_column(output_dim);
    let rows: Vec<usize> = (0..train.len()).collect();
    Ok(grow_tree(&cols, &targets, rows, params, loss, None))
}

/// Grows a tree on the given rows (which may repeat, as in a bootstrap sample).
pub(crate) fn grow_tree(
    cols: &Columns,
    targets: &[f64],
    rows: Vec<usize>,
    params: &TreeParams,
    loss: Loss,
    rng: Option<&mut ChaCha8Rng>,
) -> RegressionTree {
    let mut builder = Builder {
        cols,
        targets,
        params,
        loss,
        rng,
        nodes: Vec::new(),
    };
    builder.grow(rows, 0);
    RegressionTree {
        nodes: builder.nodes,
        n_inputs: cols.cols.len(),
    }
}

struct Builder<'a> {
    cols: &'a Columns,
    targets: &'a [f64],
    params: &'a TreeParams,
    loss: Loss,
    rng: Option<&'a mut ChaCha8Rng>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });

        let split = if self.can_split(&rows, depth) {
            self.best_split(&rows)
        } else {
            None
        };
        match split {
            Some(c) => {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                    .iter()
                    .partition(|&&r| self.cols.cols[c.feature][r] <= c.threshold);
                drop(rows);
                let left = self.grow(left_rows, depth + 1);
                let right = self.grow(right_rows, depth + 1);
                self.nodes[id] = Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left,
                    right,
                };
            }
            None => {
                let value = self.leaf_value(&rows);
                self.nodes[id] = Node::Leaf { value };
            }
        }
        id
    }

    fn can_split(&self, rows: &[usize], depth: usize) -> bool {
        if self.params.max_depth.is_some_and(|d| depth >= d) {
            return false;
        }
        if rows.len() < 2 * self.params.min_samples_leaf {
            return false;
        }
        let first = self.targets[rows[0]];
        rows.iter().any(|&r| self.targets[r] != first)
    }

    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let mut ys: Vec<f64> = rows.iter().map(|&r| self.targets[r]).collect();
        match self.loss {
            Loss::Squared => ys.iter().sum::<f64>() / ys.len() as f64,
            Loss::Pinball { tau } => quantile_of(&mut ys, tau),
        }
    }

    fn features(&mut self) -> Vec<usize> {
        let p = self.cols.cols.len();
        match (self.params.max_features, self.rng.as_deref_mut()) {
            (Some(k), Some(rng)) if k < p => {
                let mut f = index::sample(rng, p, k).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..p).collect(),
        }
    }

    fn best_split(&mut self, rows: &[usize]) -> Option<Candidate> {
        let features = self.features();
        let mut best: Option<Candidate> = None;
        for f in features {
            let col = &self.cols.cols[f];
            let mut order = rows.to_vec();
            order.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            let ys: Vec<f64> = order.iter().map(|&r| self.targets[r]).collect();
            let xs: Vec<f64> = order.iter().map(|&r| col[r]).collect();
            let gains = match self.loss {
                Loss::Squared => squared_gains(&ys),
                Loss::Pinball { tau } => pinball_gains(&ys, tau),
            };
            let min_leaf = self.params.min_samples_leaf;
            // gains[i] is for putting the first i sorted rows on the left.
            for i in min_leaf..=(ys.len() - min_leaf) {
                if xs[i - 1] >= xs[i] {
                    continue;
                }
                let gain = gains[i];
                if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
                    best = Some(Candidate {
                        gain,
                        feature: f,
                        threshold: midpoint(xs[i - 1], xs[i]),
                    });
                }
            }
        }
        best
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let mid = a + (b - a) / 2.0;
    if mid < b {
        mid
    } else {
        a
    }
}

/// Reduction in summed squared error for each left-prefix size of `ys`.
fn squared_gains(ys: &[f64]) -> Vec<f64> {
    let n = ys.len();
    let mean = ys.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = ys.iter().map(|y| y - mean).collect();
    let total: f64 = centered.iter().sum();
    let base = total * total / n as f64;
    let mut gains = vec![0.0; n + 1];
    let mut left = 0.0;
    for i in 1..n {
        left += centered[i - 1];
        let right = total - left;
        gains[i] = left * left / i as f64 + right * right / (n - i) as f64 - base;
    }
    gains
}

/// Reduction in summed pinball loss (each side at its own `tau`-quantile) for each
/// left-prefix size of `ys`.
fn pinball_gains(ys: &[f64], tau: f64) -> Vec<f64> {
    let n = ys.len();
    let left = prefix_pinball_losses(ys.iter().copied(), n, tau);
    let right = prefix_pinball_losses(ys.iter().rev().copied(), n, tau);
    let parent = left[n];
    (0..=n)
        .map(|i| {
            if i == 0 || i == n {
                0.0
            } else {
                parent - left[i] - right[n - i]
            }
        })
        .collect()
}

/// `out[i]` is the minimal summed pinball loss of the first `i` values.
fn prefix_pinball_losses(values: impl Iterator<Item = f64>, n: usize, tau: f64) -> Vec<f64> {
    let mut sorted: Vec<f64> = Vec::with_capacity(n);
    let mut out = vec![0.0; n + 1];
    for (i, y) in values.enumerate() {
        let pos = sorted.partition_point(|&v| v < y);
        sorted.insert(pos, y);
        let k = ((tau * (i + 1) as f64).ceil() as usize).clamp(1, i + 1);
        let q = sorted[k - 1];
        out[i + 1] = sorted.iter().map(|&v| pinball(v, q, tau)).sum();
    }
    out
}
