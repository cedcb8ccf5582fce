//! Least squares, ridge and lasso, all with an intercept obtained by centering.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{fold_assignment, pick, ModelParams};
use crate::error::{Error, Result};
use crate::rng::RngSeed;

/// Lasso hyperparameters. With `lambda = None` the penalty is chosen by
/// K-fold cross-validation over a geometric grid from `lambda_max` (the
/// smallest penalty that zeroes every coefficient) down to
/// `lambda_max * lambda_min_ratio`.
///
/// The objective is `(1/2n) |y - b0 - X b|^2 + lambda |b|_1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoParams {
    pub lambda: Option<f64>,
    pub n_lambdas: usize,
    pub lambda_min_ratio: f64,
    pub folds: usize,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoParams {
    fn default() -> Self {
        LassoParams {
            lambda: None,
            n_lambdas: 50,
            lambda_min_ratio: 1e-3,
            folds: 5,
            tol: 1e-8,
            max_sweeps: 10_000,
        }
    }
}

impl LassoParams {
    pub(crate) fn validate(&self) -> Result<()> {
        if let Some(l) = self.lambda {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::invalid(format!(
                    "lasso lambda must be >= 0, got {l}"
                )));
            }
            return Ok(());
        }
        if self.n_lambdas == 0 {
            return Err(Error::invalid("lasso penalty grid is empty"));
        }
        if !(self.lambda_min_ratio > 0.0 && self.lambda_min_ratio <= 1.0) {
            return Err(Error::invalid("lasso lambda_min_ratio must lie in (0,1]"));
        }
        if self.folds < 2 {
            return Err(Error::invalid(
                "lasso cross-validation needs at least 2 folds",
            ));
        }
        if !(self.tol > 0.0) || self.max_sweeps == 0 {
            return Err(Error::invalid(
                "lasso tolerance and sweep budget must be positive",
            ));
        }
        Ok(())
    }
}

pub(super) fn predict(intercept: f64, coef: &[f64], x: &DMatrix<f64>) -> Vec<f64> {
    let b = DVector::from_column_slice(coef);
    let mut out = x * b;
    out.add_scalar_mut(intercept);
    out.iter().copied().collect()
}

struct Centered {
    x: DMatrix<f64>,
    y: DVector<f64>,
    x_mean: Vec<f64>,
    y_mean: f64,
}

fn center(x: &DMatrix<f64>, y: &[f64]) -> Centered {
    let n = x.nrows() as f64;
    let x_mean: Vec<f64> = x.column_iter().map(|c| c.sum() / n).collect();
    let y_mean = y.iter().sum::<f64>() / n;
    let mut xc = x.clone();
    for (j, mut c) in xc.column_iter_mut().enumerate() {
        c.add_scalar_mut(-x_mean[j]);
    }
    let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - y_mean));
    Centered {
        x: xc,
        y: yc,
        x_mean,
        y_mean,
    }
}

fn assemble(c: &Centered, coef: Vec<f64>) -> ModelParams {
    let intercept = c.y_mean - coef.iter().zip(&c.x_mean).map(|(b, m)| b * m).sum::<f64>();
    ModelParams::Linear { intercept, coef }
}

pub(super) fn fit_ols(x: &DMatrix<f64>, y: &[f64]) -> Result<ModelParams> {
    let (n, p) = x.shape();
    let rank_msg =
        || Error::numerical("design is rank deficient for ols; use ridge or lasso instead");
    // Centering removes one degree of freedom.
    if n < p + 1 {
        return Err(rank_msg());
    }
    let c = center(x, y);
    let qr = c.x.clone().qr();
    let r = qr.r();
    let max_diag = (0..p).map(|k| r[(k, k)].abs()).fold(0.0, f64::max);
    let tol = max_diag * 1e-10 * (n.max(p) as f64).sqrt();
    if max_diag == 0.0 || (0..p).any(|k| r[(k, k)].abs() <= tol) {
        return Err(rank_msg());
    }
    let mut qty = c.y.clone();
    qr.q_tr_mul(&mut qty);
    let rhs = qty.rows(0, p).into_owned();
    let b = r.solve_upper_triangular(&rhs).ok_or_else(rank_msg)?;
    Ok(assemble(&c, b.iter().copied().collect()))
}

pub(super) fn fit_ridge(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<ModelParams> {
    let c = center(x, y);
    let mut gram = c.x.tr_mul(&c.x);
    for k in 0..gram.nrows() {
        gram[(k, k)] += lambda;
    }
    let xty = c.x.tr_mul(&c.y);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::numerical("ridge normal equations are singular; increase lambda"))?;
    let b = chol.solve(&xty);
    Ok(assemble(&c, b.iter().copied().collect()))
}

/// Value of the lasso objective written in Gram form, up to the constant
/// `|y|^2 / 2n`: `b'Gb/2 - c'b + lambda |b|_1` with `G = X'X/n`, `c = X'y/n`.
pub(crate) fn lasso_objective(gram: &DMatrix<f64>, xty: &[f64], lambda: f64, b: &[f64]) -> f64 {
    let p = b.len();
    let mut quad = 0.0;
    for k in 0..p {
        let mut gb = 0.0;
        for l in 0..p {
            gb += gram[(k, l)] * b[l];
        }
        quad += b[k] * gb;
    }
    0.5 * quad - xty.iter().zip(b).map(|(c, v)| c * v).sum::<f64>()
        + lambda * b.iter().map(|v| v.abs()).sum::<f64>()
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on the Gram form of the lasso. Stops when the
/// largest coefficient change of a sweep is below `tol`. `b` is the warm
/// start and receives the solution; returns the number of sweeps. When
/// `trace` is given, the objective after every sweep is appended to it.
pub(crate) fn lasso_coordinate_descent(
    gram: &DMatrix<f64>,
    xty: &[f64],
    lambda: f64,
    b: &mut [f64],
    tol: f64,
    max_sweeps: usize,
    mut trace: Option<&mut Vec<f64>>,
) -> usize {
    let p = b.len();
    // gb = G b, kept current after every coordinate move.
    let mut gb = vec![0.0; p];
    for k in 0..p {
        if b[k] != 0.0 {
            for l in 0..p {
                gb[l] += gram[(l, k)] * b[k];
            }
        }
    }
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut max_delta: f64 = 0.0;
        for k in 0..p {
            let gkk = gram[(k, k)];
            if gkk <= 0.0 {
                continue;
            }
            let old = b[k];
            let z = xty[k] - gb[k] + gkk * old;
            let new = soft_threshold(z, lambda) / gkk;
            let delta = new - old;
            if delta != 0.0 {
                b[k] = new;
                let g = gram.column(k);
                for l in 0..p {
                    gb[l] += g[l] * delta;
                }
                max_delta = max_delta.max(delta.abs());
            }
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(lasso_objective(gram, xty, lambda, b));
        }
        if max_delta < tol {
            break;
        }
    }
    sweeps
}

struct GramForm {
    gram: DMatrix<f64>,
    xty: Vec<f64>,
    centered: Centered,
}

fn gram_form(x: &DMatrix<f64>, y: &[f64]) -> GramForm {
    let c = center(x, y);
    let n = x.nrows() as f64;
    let gram = c.x.tr_mul(&c.x) / n;
    let xty: Vec<f64> = (c.x.tr_mul(&c.y) / n).iter().copied().collect();
    GramForm {
        gram,
        xty,
        centered: c,
    }
}

fn lambda_max(xty: &[f64]) -> f64 {
    xty.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn lambda_grid(max: f64, params: &LassoParams) -> Vec<f64> {
    let k = params.n_lambdas;
    if k == 1 {
        return vec![max];
    }
    let ratio = params.lambda_min_ratio;
    (0..k)
        .map(|i| max * ratio.powf(i as f64 / (k - 1) as f64))
        .collect()
}

/// Returns the fitted parameters and the penalty used.
pub(super) fn fit_lasso(
    x: &DMatrix<f64>,
    y: &[f64],
    params: &LassoParams,
    seed: RngSeed,
) -> Result<(ModelParams, f64)> {
    let full = gram_form(x, y);
    let p = x.ncols();
    let lambda = match params.lambda {
        Some(l) => l,
        None => {
            let lmax = lambda_max(&full.xty);
            if lmax == 0.0 {
                0.0
            } else {
                select_lambda(x, y, &lambda_grid(lmax, params), params, seed)?
            }
        }
    };
    let mut b = vec![0.0; p];
    match params.lambda {
        Some(_) => {
            lasso_coordinate_descent(
                &full.gram,
                &full.xty,
                lambda,
                &mut b,
                params.tol,
                params.max_sweeps,
                None,
            );
        }
        None => {
            // Follow the path down to the chosen penalty for warm starts.
            let lmax = lambda_max(&full.xty);
            for l in lambda_grid(lmax, params)
                .into_iter()
                .filter(|l| *l >= lambda)
            {
                lasso_coordinate_descent(
                    &full.gram,
                    &full.xty,
                    l,
                    &mut b,
                    params.tol,
                    params.max_sweeps,
                    None,
                );
            }
        }
    }
    Ok((assemble(&full.centered, b), lambda))
}

fn select_lambda(
    x: &DMatrix<f64>,
    y: &[f64],
    grid: &[f64],
    params: &LassoParams,
    seed: RngSeed,
) -> Result<f64> {
    let n = x.nrows();
    if params.folds > n {
        return Err(Error::invalid(format!(
            "lasso uses {} folds but only {n} rows are available",
            params.folds
        )));
    }
    let fold_of = fold_assignment(n, params.folds, seed);
    let mut cv_loss = vec![0.0; grid.len()];
    for f in 0..params.folds {
        let (tr, te): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| fold_of[i] != f);
        let g = gram_form(&x.select_rows(&tr), &pick(y, &tr));
        let xte = x.select_rows(&te);
        let yte = pick(y, &te);
        let mut b = vec![0.0; x.ncols()];
        for (k, &l) in grid.iter().enumerate() {
            lasso_coordinate_descent(
                &g.gram,
                &g.xty,
                l,
                &mut b,
                params.tol,
                params.max_sweeps,
                None,
            );
            let ModelParams::Linear { intercept, coef } = assemble(&g.centered, b.clone()) else {
                unreachable!()
            };
            let pred = predict(intercept, &coef, &xte);
            cv_loss[k] += pred
                .iter()
                .zip(&yte)
                .map(|(p, t)| (p - t).powi(2))
                .sum::<f64>();
        }
    }
    let mut best = 0;
    for k in 1..grid.len() {
        if cv_loss[k] < cv_loss[best] {
            best = k;
        }
    }
    Ok(grid[best])
}
