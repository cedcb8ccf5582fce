//! Least-squares gradient boosting over regression trees.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::tree::{grow, Presorted, Tree, TreeParams};
use super::ModelParams;
use crate::error::{Error, Result};
use crate::rng::RngSeed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostingParams {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub subsample: f64,
    pub min_samples_leaf: usize,
}

impl Default for BoostingParams {
    fn default() -> Self {
        BoostingParams {
            n_rounds: 200,
            max_depth: 3,
            learning_rate: 0.1,
            subsample: 1.0,
            min_samples_leaf: 1,
        }
    }
}

impl BoostingParams {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.n_rounds == 0 {
            return Err(Error::invalid("boosting needs at least one round"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::invalid("subsample must lie in (0,1]"));
        }
        TreeParams {
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
        }
        .validate()
    }
}

pub(super) fn fit(
    x: &DMatrix<f64>,
    y: &[f64],
    params: &BoostingParams,
    seed: RngSeed,
) -> ModelParams {
    let n = x.nrows();
    let init = y.iter().sum::<f64>() / n as f64;
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
    };
    let sorted = Presorted::new(x);
    let mut pred = vec![init; n];
    let mut resid = vec![0.0; n];
    let mut mask = vec![true; n];
    let rows_per_round = ((params.subsample * n as f64).round() as usize).clamp(1, n);
    let mut trees = Vec::with_capacity(params.n_rounds);
    for round in 0..params.n_rounds {
        for i in 0..n {
            resid[i] = y[i] - pred[i];
        }
        let include = if rows_per_round < n {
            mask.fill(false);
            let mut rng = seed.derive(round as u64).rng();
            for i in sample(&mut rng, n, rows_per_round) {
                mask[i] = true;
            }
            Some(&mask[..])
        } else {
            None
        };
        let tree = grow(x, &sorted, &resid, include, &tree_params);
        for (i, p) in pred.iter_mut().enumerate() {
            *p += params.learning_rate * tree.predict_row(x, i);
        }
        trees.push(tree);
    }
    ModelParams::Boosting {
        init,
        learning_rate: params.learning_rate,
        trees,
    }
}

pub(super) fn predict(init: f64, learning_rate: f64, trees: &[Tree], x: &DMatrix<f64>) -> Vec<f64> {
    let mut out = vec![init; x.nrows()];
    for t in trees {
        for (i, o) in out.iter_mut().enumerate() {
            *o += learning_rate * t.predict_row(x, i);
        }
    }
    out
}
