//! Residual-permutation conditional sampler.
//!
//! A sampler for feature `j` regresses `X^j` on `X^{-j}` and keeps the
//! in-sample residuals. A conditional draw for a test row `x_i` keeps every
//! coordinate except `j`, which becomes
//!
//! ```text
//! nu(x_i^{-j}) + r_k,   r_k = x_k^j - nu(x_k^{-j}) for a pooled training row k
//! ```

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{drop_column, ensure_finite, sample_variance};
use crate::error::{Error, Result};
use crate::learners::{fit, FittedModel, LearnerSpec};
use crate::rng::RngSeed;

/// How pooled residuals are assigned to (test row, calibration slot) pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualScheme {
    /// Independent uniform choice with replacement for every pair.
    #[default]
    Resample,
    /// Each slot takes consecutive entries of a fresh permutation of the
    /// pool, starting a new permutation when one is exhausted.
    Permute,
}

/// Fitted conditional sampler for one feature.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionalSampler {
    j: usize,
    p: usize,
    nu_model: FittedModel,
    residual_pool: Vec<f64>,
    scheme: ResidualScheme,
    degenerate: bool,
}

/// Fits the conditional-mean regression of column `j` on the other columns.
pub fn fit_sampler(
    x_train: &DMatrix<f64>,
    j: usize,
    spec: &LearnerSpec,
    seed: RngSeed,
) -> Result<ConditionalSampler> {
    let p = x_train.ncols();
    if p < 2 {
        return Err(Error::invalid(
            "conditional sampling needs at least 2 features",
        ));
    }
    if j >= p {
        return Err(Error::invalid(format!(
            "feature index {j} out of range for p = {p}"
        )));
    }
    let rest = drop_column(x_train, j);
    let target: Vec<f64> = x_train.column(j).iter().copied().collect();
    let nu_model = fit(spec, &rest, &target, seed)?;
    let pred = nu_model.predict_unchecked(&rest);
    let pool = target.iter().zip(&pred).map(|(t, p)| t - p).collect();
    ConditionalSampler::from_parts(j, p, nu_model, pool)
}

impl ConditionalSampler {
    /// Assembles a sampler from an already fitted regression and residual pool.
    pub fn from_parts(
        j: usize,
        p: usize,
        nu_model: FittedModel,
        residual_pool: Vec<f64>,
    ) -> Result<Self> {
        if j >= p {
            return Err(Error::invalid(format!(
                "feature index {j} out of range for p = {p}"
            )));
        }
        if nu_model.input_dim() + 1 != p {
            return Err(Error::invalid(format!(
                "conditional model takes {} inputs, expected {}",
                nu_model.input_dim(),
                p - 1
            )));
        }
        if residual_pool.len() < 2 {
            return Err(Error::invalid("residual pool needs at least 2 entries"));
        }
        ensure_finite(&residual_pool, "residual pool")?;
        let degenerate = sample_variance(&residual_pool) < 1e-14;
        if degenerate {
            log::warn!("residual pool for feature {j} is degenerate; draws reduce to imputation");
        }
        Ok(ConditionalSampler {
            j,
            p,
            nu_model,
            residual_pool,
            scheme: ResidualScheme::default(),
            degenerate,
        })
    }

    pub fn with_scheme(mut self, scheme: ResidualScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn feature(&self) -> usize {
        self.j
    }

    pub fn input_dim(&self) -> usize {
        self.p
    }

    pub fn nu_model(&self) -> &FittedModel {
        &self.nu_model
    }

    pub fn residual_pool(&self) -> &[f64] {
        &self.residual_pool
    }

    pub fn pool_size(&self) -> usize {
        self.residual_pool.len()
    }

    pub fn scheme(&self) -> ResidualScheme {
        self.scheme
    }

    /// Set when the residual pool has (numerically) zero variance.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Conditional-mean prediction `nu(x^{-j})` for every row of a full-width matrix.
    pub fn conditional_mean(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check_width(x)?;
        Ok(self.nu_model.predict_unchecked(&drop_column(x, self.j)))
    }

    fn check_width(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.p {
            return Err(Error::invalid(format!(
                "sampler expects {} columns, got {}",
                self.p,
                x.ncols()
            )));
        }
        Ok(())
    }

    /// `n_cal` conditional draws for every row of `x_test`.
    pub fn draw(
        &self,
        x_test: &DMatrix<f64>,
        n_cal: usize,
        seed: RngSeed,
    ) -> Result<ConditionalDraws> {
        self.check_width(x_test)?;
        if n_cal == 0 {
            return Err(Error::invalid("n_cal must be >= 1"));
        }
        let n = x_test.nrows();
        let nu_pred = self
            .nu_model
            .predict_unchecked(&drop_column(x_test, self.j));
        let pool = &self.residual_pool;
        let mut rng = seed.rng();
        let mut values = Vec::with_capacity(n * n_cal);
        match self.scheme {
            ResidualScheme::Resample => {
                for _ in 0..n_cal {
                    for nu in &nu_pred {
                        values.push(nu + pool[rng.random_range(0..pool.len())]);
                    }
                }
            }
            ResidualScheme::Permute => {
                let mut perm: Vec<usize> = (0..pool.len()).collect();
                for _ in 0..n_cal {
                    let mut pos = perm.len();
                    for nu in &nu_pred {
                        if pos == perm.len() {
                            perm.shuffle(&mut rng);
                            pos = 0;
                        }
                        values.push(nu + pool[perm[pos]]);
                        pos += 1;
                    }
                }
            }
        }
        Ok(ConditionalDraws {
            j: self.j,
            n_cal,
            base: x_test.clone(),
            nu_pred,
            values,
        })
    }
}

/// The conditionally sampled tensor `n_test x n_cal x p`. Only coordinate `j`
/// differs from the test rows, so just those values are stored.
#[derive(Debug, Clone)]
pub struct ConditionalDraws {
    j: usize,
    n_cal: usize,
    base: DMatrix<f64>,
    nu_pred: Vec<f64>,
    values: Vec<f64>,
}

impl ConditionalDraws {
    pub fn feature(&self) -> usize {
        self.j
    }

    pub fn n_test(&self) -> usize {
        self.base.nrows()
    }

    pub fn n_cal(&self) -> usize {
        self.n_cal
    }

    pub fn p(&self) -> usize {
        self.base.ncols()
    }

    /// `nu(x_i^{-j})` per test row.
    pub fn conditional_mean(&self) -> &[f64] {
        &self.nu_pred
    }

    /// Sampled `j`-th coordinates of calibration slot `c`, one per test row.
    pub fn slot(&self, c: usize) -> &[f64] {
        let n = self.n_test();
        &self.values[c * n..(c + 1) * n]
    }

    /// All sampled `j`-th coordinates, slot-major.
    pub fn sampled_values(&self) -> &[f64] {
        &self.values
    }

    /// Entry `(i, c, l)` of the tensor.
    pub fn get(&self, i: usize, c: usize, l: usize) -> f64 {
        if l == self.j {
            self.values[c * self.n_test() + i]
        } else {
            self.base[(i, l)]
        }
    }

    /// Test matrix with column `j` replaced by calibration slot `c`.
    pub fn slot_matrix(&self, c: usize) -> DMatrix<f64> {
        let mut m = self.base.clone();
        self.fill_slot(&mut m, c);
        m
    }

    /// Overwrites column `j` of `m` (a copy of the test matrix) with slot `c`.
    pub(crate) fn fill_slot(&self, m: &mut DMatrix<f64>, c: usize) {
        m.column_mut(self.j).copy_from_slice(self.slot(c));
    }

    pub(crate) fn base(&self) -> &DMatrix<f64> {
        &self.base
    }

    /// Dense row-major tensor, index `(i * n_cal + c) * p + l`.
    pub fn to_dense(&self) -> Vec<f64> {
        let (n, p) = (self.n_test(), self.p());
        let mut out = Vec::with_capacity(n * self.n_cal * p);
        for i in 0..n {
            for c in 0..self.n_cal {
                for l in 0..p {
                    out.push(self.get(i, c, l));
                }
            }
        }
        out
    }
}

const W2_GRID: usize = 1000;

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn grid_quantiles(sorted: &[f64]) -> Vec<f64> {
    let n = sorted.len();
    (0..W2_GRID)
        .map(|k| {
            let u = (k as f64 + 0.5) / W2_GRID as f64;
            sorted[((u * n as f64) as usize).min(n - 1)]
        })
        .collect()
}

/// 2-Wasserstein distance between two empirical distributions on the line.
///
/// Equal-length inputs use the exact sorted coupling; otherwise both
/// quantile functions are evaluated on a common grid of 1000 midpoints.
pub fn wasserstein2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid(
            "wasserstein distance needs nonempty samples",
        ));
    }
    let (sa, sb) = (sorted(a), sorted(b));
    let (qa, qb) = if sa.len() == sb.len() {
        (sa, sb)
    } else {
        (grid_quantiles(&sa), grid_quantiles(&sb))
    };
    let ms = qa
        .iter()
        .zip(&qb)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        / qa.len() as f64;
    Ok(ms.sqrt())
}

/// 2-Wasserstein distance between the empirical law of `a` and `N(mean, sd^2)`,
/// coupling the k-th order statistic with the normal quantile at `(k+1/2)/n`.
pub fn wasserstein2_to_normal(a: &[f64], mean: f64, sd: f64) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::invalid(
            "wasserstein distance needs a nonempty sample",
        ));
    }
    if !(sd > 0.0) {
        let ms = a.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / a.len() as f64;
        return Ok(ms.sqrt());
    }
    let normal = Normal::new(mean, sd).map_err(|e| Error::invalid(e.to_string()))?;
    let s = sorted(a);
    let n = s.len() as f64;
    let ms = s
        .iter()
        .enumerate()
        .map(|(k, v)| (v - normal.inverse_cdf((k as f64 + 0.5) / n)).powi(2))
        .sum::<f64>()
        / n;
    Ok(ms.sqrt())
}
