//! Regression learners used for the full model, the restricted model and the
//! conditional-mean regressions of the sampler.
//!
//! Every learner is fit through [`fit`] from a serialisable [`LearnerSpec`]
//! and produces an immutable [`FittedModel`].

mod boosting;
mod knn;
mod linear;
mod tree;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngSeed;

pub use boosting::BoostingParams;
pub use linear::LassoParams;
pub use tree::{Tree, TreeParams};

mod stream {
    pub const CV_FOLDS: u64 = 1;
    pub const CV_FIT: u64 = 2;
    pub const CV_REFIT: u64 = 3;
}

fn default_folds() -> usize {
    5
}

/// Learner family and its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    Ols,
    Ridge {
        lambda: f64,
    },
    Lasso(LassoParams),
    Cart(TreeParams),
    GradientBoosting(BoostingParams),
    Knn {
        k: usize,
    },
    CvSelect {
        candidates: Vec<LearnerSpec>,
        #[serde(default = "default_folds")]
        folds: usize,
    },
}

impl LearnerSpec {
    /// Lasso with the default cross-validated penalty path.
    pub fn lasso_cv() -> Self {
        LearnerSpec::Lasso(LassoParams::default())
    }

    pub fn lasso_fixed(lambda: f64) -> Self {
        LearnerSpec::Lasso(LassoParams {
            lambda: Some(lambda),
            ..LassoParams::default()
        })
    }

    pub fn gradient_boosting() -> Self {
        LearnerSpec::GradientBoosting(BoostingParams::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            LearnerSpec::Ols => "ols",
            LearnerSpec::Ridge { .. } => "ridge",
            LearnerSpec::Lasso(_) => "lasso",
            LearnerSpec::Cart(_) => "cart",
            LearnerSpec::GradientBoosting(_) => "gradient_boosting",
            LearnerSpec::Knn { .. } => "knn",
            LearnerSpec::CvSelect { .. } => "cv_select",
        }
    }

    /// Checks the hyperparameters that do not depend on the data.
    pub fn validate(&self) -> Result<()> {
        match self {
            LearnerSpec::Ols => Ok(()),
            LearnerSpec::Ridge { lambda } => {
                if lambda.is_finite() && *lambda >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::invalid(format!(
                        "ridge lambda must be >= 0, got {lambda}"
                    )))
                }
            }
            LearnerSpec::Lasso(p) => p.validate(),
            LearnerSpec::Cart(p) => p.validate(),
            LearnerSpec::GradientBoosting(p) => p.validate(),
            LearnerSpec::Knn { k } => {
                if *k >= 1 {
                    Ok(())
                } else {
                    Err(Error::invalid("knn requires k >= 1"))
                }
            }
            LearnerSpec::CvSelect { candidates, folds } => {
                if candidates.is_empty() {
                    return Err(Error::invalid("cv_select needs at least one candidate"));
                }
                if *folds < 2 {
                    return Err(Error::invalid("cv_select needs at least 2 folds"));
                }
                candidates.iter().try_for_each(LearnerSpec::validate)
            }
        }
    }
}

/// Fitted state of each learner family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelParams {
    Linear {
        intercept: f64,
        coef: Vec<f64>,
    },
    Tree(Tree),
    Boosting {
        init: f64,
        learning_rate: f64,
        trees: Vec<Tree>,
    },
    Knn {
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        k: usize,
    },
}

/// Side information recorded during fitting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    /// Penalty chosen by the lasso path, if any.
    pub lambda: Option<f64>,
    /// Cross-validated quadratic loss of each cv_select candidate.
    pub cv_losses: Option<Vec<f64>>,
    /// Index of the winning cv_select candidate.
    pub selected: Option<usize>,
}

/// Trained predictor. Immutable after [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    spec: LearnerSpec,
    params: ModelParams,
    input_dim: usize,
    training_rows: usize,
    info: FitInfo,
    /// Input columns the inner predictor reads; `None` means all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    columns: Option<Vec<usize>>,
}

impl FittedModel {
    /// Linear predictor from explicit coefficients.
    pub fn linear(intercept: f64, coef: Vec<f64>) -> Self {
        let input_dim = coef.len();
        FittedModel {
            spec: LearnerSpec::Ols,
            params: ModelParams::Linear { intercept, coef },
            input_dim,
            training_rows: 0,
            info: FitInfo::default(),
            columns: None,
        }
    }

    pub fn spec(&self) -> &LearnerSpec {
        &self.spec
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn training_rows(&self) -> usize {
        self.training_rows
    }

    pub fn info(&self) -> &FitInfo {
        &self.info
    }

    /// Columns read by the predictor, if restricted by [`fit_columns`].
    pub fn columns(&self) -> Option<&[usize]> {
        self.columns.as_deref()
    }

    /// `(intercept, coefficients)` for linear learners.
    pub fn linear_coefficients(&self) -> Option<(f64, &[f64])> {
        match &self.params {
            ModelParams::Linear { intercept, coef } => Some((*intercept, coef)),
            _ => None,
        }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.input_dim {
            return Err(Error::invalid(format!(
                "model expects {} columns, got {}",
                self.input_dim,
                x.ncols()
            )));
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &DMatrix<f64>) -> Vec<f64> {
        match &self.columns {
            Some(cols) => self.predict_inner(&x.select_columns(cols)),
            None => self.predict_inner(x),
        }
    }

    fn predict_inner(&self, x: &DMatrix<f64>) -> Vec<f64> {
        match &self.params {
            ModelParams::Linear { intercept, coef } => linear::predict(*intercept, coef, x),
            ModelParams::Tree(t) => (0..x.nrows()).map(|i| t.predict_row(x, i)).collect(),
            ModelParams::Boosting {
                init,
                learning_rate,
                trees,
            } => boosting::predict(*init, *learning_rate, trees, x),
            ModelParams::Knn { x: xt, y, k } => knn::predict(xt, y, *k, x),
        }
    }
}

/// Trains `spec` on `(x, y)`.
pub fn fit(spec: &LearnerSpec, x: &DMatrix<f64>, y: &[f64], seed: RngSeed) -> Result<FittedModel> {
    spec.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::invalid(format!(
            "x has {} rows but y has {}",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() < 2 || x.ncols() < 1 {
        return Err(Error::invalid("fit needs at least 2 rows and 1 column"));
    }
    crate::data::ensure_finite(x.as_slice(), "x")?;
    crate::data::ensure_finite(y, "y")?;

    let mut info = FitInfo::default();
    let (spec_used, params) = match spec {
        LearnerSpec::Ols => (spec.clone(), linear::fit_ols(x, y)?),
        LearnerSpec::Ridge { lambda } => (spec.clone(), linear::fit_ridge(x, y, *lambda)?),
        LearnerSpec::Lasso(p) => {
            let (params, lambda) = linear::fit_lasso(x, y, p, seed)?;
            info.lambda = Some(lambda);
            (spec.clone(), params)
        }
        LearnerSpec::Cart(p) => (spec.clone(), ModelParams::Tree(tree::fit_cart(x, y, p))),
        LearnerSpec::GradientBoosting(p) => (spec.clone(), boosting::fit(x, y, p, seed)),
        LearnerSpec::Knn { k } => {
            if *k > x.nrows() {
                return Err(Error::invalid(format!(
                    "knn k = {k} exceeds the {} training rows",
                    x.nrows()
                )));
            }
            (spec.clone(), knn::fit(x, y, *k))
        }
        LearnerSpec::CvSelect { candidates, folds } => {
            return cv_select(candidates, x, y, *folds, seed);
        }
    };
    Ok(FittedModel {
        spec: spec_used,
        params,
        input_dim: x.ncols(),
        training_rows: x.nrows(),
        info,
        columns: None,
    })
}

/// Trains `spec` on every column except `excluded`; the result still takes
/// all `x.ncols()` inputs and ignores the excluded ones.
pub fn fit_columns(
    spec: &LearnerSpec,
    x: &DMatrix<f64>,
    y: &[f64],
    excluded: &[usize],
    seed: RngSeed,
) -> Result<FittedModel> {
    if excluded.is_empty() {
        return fit(spec, x, y, seed);
    }
    if let Some(&j) = excluded.iter().find(|&&j| j >= x.ncols()) {
        return Err(Error::invalid(format!(
            "excluded column {j} out of range for {} columns",
            x.ncols()
        )));
    }
    let keep: Vec<usize> = (0..x.ncols()).filter(|j| !excluded.contains(j)).collect();
    if keep.is_empty() {
        return Err(Error::invalid("cannot exclude every column"));
    }
    let mut m = fit(spec, &x.select_columns(&keep), y, seed)?;
    m.input_dim = x.ncols();
    m.columns = Some(keep);
    Ok(m)
}

/// K-fold cross-validated choice among `candidates` on the quadratic loss;
/// the winner is refit on all rows. Ties go to the earlier candidate.
pub fn cv_select(
    candidates: &[LearnerSpec],
    x: &DMatrix<f64>,
    y: &[f64],
    folds: usize,
    seed: RngSeed,
) -> Result<FittedModel> {
    if candidates.is_empty() {
        return Err(Error::invalid("cv_select needs at least one candidate"));
    }
    let n = x.nrows();
    if folds < 2 || folds > n {
        return Err(Error::invalid(format!(
            "fold count {folds} invalid for n = {n}"
        )));
    }
    let fold_of = fold_assignment(n, folds, seed.derive(stream::CV_FOLDS));
    let mut losses = Vec::with_capacity(candidates.len());
    for (c, cand) in candidates.iter().enumerate() {
        cand.validate()?;
        let mut sse = 0.0;
        for f in 0..folds {
            let (tr, te): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| fold_of[i] != f);
            let m = fit(
                cand,
                &x.select_rows(&tr),
                &pick(y, &tr),
                seed.derive(stream::CV_FIT).derive((c * folds + f) as u64),
            )?;
            let pred = m.predict_unchecked(&x.select_rows(&te));
            sse += te
                .iter()
                .zip(&pred)
                .map(|(&i, p)| (p - y[i]).powi(2))
                .sum::<f64>();
        }
        losses.push(sse / n as f64);
    }
    let mut best = 0;
    for (c, l) in losses.iter().enumerate() {
        if *l < losses[best] {
            best = c;
        }
    }
    let mut model = fit(&candidates[best], x, y, seed.derive(stream::CV_REFIT))?;
    model.info.cv_losses = Some(losses);
    model.info.selected = Some(best);
    Ok(model)
}

/// Balanced random fold labels in `0..folds`.
pub(crate) fn fold_assignment(n: usize, folds: usize, seed: RngSeed) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed.rng());
    let mut fold_of = vec![0; n];
    for (k, &i) in idx.iter().enumerate() {
        fold_of[i] = k % folds;
    }
    fold_of
}

pub(crate) fn pick(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}
