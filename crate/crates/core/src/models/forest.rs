use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

use super::tree::grow_tree;
use super::{Columns, Loss, RegressionTree, Regressor, TreeParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Fraction of features examined at each split, in (0, 1].
    pub feature_fraction: f64,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: None,
            min_samples_leaf: 1,
            feature_fraction: 1.0,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidParameter("forest needs at least one tree".into()));
        }
        if !(self.feature_fraction > 0.0 && self.feature_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "feature_fraction must lie in (0, 1], got {}",
                self.feature_fraction
            )));
        }
        self.tree_params(1).validate()
    }

    fn tree_params(&self, n_features: usize) -> TreeParams {
        let k = ((self.feature_fraction * n_features as f64).ceil() as usize).clamp(1, n_features.max(1));
        TreeParams {
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
            max_features: (k < n_features).then_some(k),
        }
    }
}

/// Bagged regression trees; the prediction is the mean over trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    /// `trees[k]` holds the trees for output coordinate `k`.
    trees: Vec<Vec<RegressionTree>>,
    n_inputs: usize,
}

impl ForestModel {
    pub fn trees(&self) -> &[Vec<RegressionTree>] {
        &self.trees
    }
}

impl Regressor for ForestModel {
    fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    fn n_outputs(&self) -> usize {
        self.trees.len()
    }

    fn predict_unchecked(&self, u: &[f64]) -> Vec<f64> {
        self.trees
            .iter()
            .map(|ts| ts.iter().map(|t| t.predict_unchecked(u)).sum::<f64>() / ts.len() as f64)
            .collect()
    }
}

/// Fits `n_trees` trees per output coordinate.
///
/// Tree `i` draws its bootstrap rows from ChaCha8 stream `i` of `seed`, and the
/// same rows are used for every output coordinate. Feature subsampling inside
/// the tree for output `k` uses a separate stream, so results do not depend on
/// thread scheduling.
pub fn fit_forest(train: &Dataset, params: &ForestParams) -> Result<ForestModel> {
    params.validate()?;
    let n = train.len();
    if n == 0 || n < 2 * params.min_samples_leaf {
        return Err(Error::Fit(format!("forest needs at least {} samples, got {n}", 2 * params.min_samples_leaf)));
    }
    let cols = Columns::from_dataset(train);
    let tree_params = params.tree_params(train.n_inputs());
    let n_out = train.n_outputs();
    let targets: Vec<Vec<f64>> = (0..n_out).map(|k| train.output_column(k)).collect();

    let per_tree: Vec<Vec<RegressionTree>> = (0..params.n_trees)
        .into_par_iter()
        .map(|i| {
            let rows: Vec<usize> = if params.bootstrap {
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
                rng.set_stream(i as u64);
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            (0..n_out)
                .map(|k| {
                    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5EED_F0E5_7000_0000);
                    rng.set_stream((i * n_out + k) as u64);
                    grow_tree(&cols, &targets[k], rows.clone(), &tree_params, Loss::Squared, Some(&mut rng))
                })
                .collect()
        })
        .collect();

    let mut trees: Vec<Vec<RegressionTree>> = vec![Vec::with_capacity(params.n_trees); n_out];
    for tree_set in per_tree {
        for (k, t) in tree_set.into_iter().enumerate() {
            trees[k].push(t);
        }
    }
    Ok(ForestModel {
        trees,
        n_inputs: train.n_inputs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;
    use crate::models::fit_tree;

    fn data(seed: u64, n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n)
            .map(|_| {
                let u = vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
                Sample::new(u.clone(), vec![u[0] * u[1], (4.0 * u[0]).cos() + 0.05 * rng.random_range(-1.0..1.0)])
            })
            .collect();
        Dataset::from_samples(samples, 2, 2).unwrap()
    }

    #[test]
    fn single_unbootstrapped_tree_equals_fit_tree() {
        let d = data(1, 80);
        let params = ForestParams { n_trees: 1, bootstrap: false, ..Default::default() };
        let f = fit_forest(&d, &params).unwrap();
        for k in 0..2 {
            let t = fit_tree(&d, k, &TreeParams::default()).unwrap();
            assert_eq!(f.trees()[k][0], t);
        }
    }

    #[test]
    fn constant_targets_predict_constant() {
        let samples = (0..30).map(|i| Sample::new(vec![i as f64, 1.0], vec![7.5])).collect();
        let d = Dataset::from_samples(samples, 2, 1).unwrap();
        let f = fit_forest(&d, &ForestParams { n_trees: 10, ..Default::default() }).unwrap();
        for q in [-5.0, 3.3, 100.0] {
            assert_eq!(f.predict(&[q, 0.0]).unwrap(), vec![7.5]);
        }
    }

    #[test]
    fn seeded_fits_are_identical() {
        let d = data(2, 100);
        let params = ForestParams { n_trees: 16, feature_fraction: 0.5, seed: 9, ..Default::default() };
        let a = fit_forest(&d, &params).unwrap();
        let b = fit_forest(&d, &params).unwrap();
        assert_eq!(a, b);
        let c = fit_forest(&d, &ForestParams { seed: 10, ..params }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn tree_count_and_mean_prediction() {
        let d = data(3, 60);
        let f = fit_forest(&d, &ForestParams { n_trees: 7, max_depth: Some(3), ..Default::default() }).unwrap();
        assert!(f.trees().iter().all(|ts| ts.len() == 7));
        let u = [0.3, 0.6];
        let pred = f.predict(&u).unwrap();
        for k in 0..2 {
            let mean = f.trees()[k].iter().map(|t| t.predict(&u).unwrap()).sum::<f64>() / 7.0;
            assert_eq!(pred[k], mean);
        }
    }

    #[test]
    fn invalid_params() {
        let d = data(3, 10);
        assert!(fit_forest(&d, &ForestParams { n_trees: 0, ..Default::default() }).is_err());
        assert!(fit_forest(&d, &ForestParams { feature_fraction: 0.0, ..Default::default() }).is_err());
    }
}
