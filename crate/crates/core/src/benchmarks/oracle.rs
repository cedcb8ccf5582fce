//! Brute-force total Sobol index by nested Monte Carlo.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Covariance, GaussianConditional};
use crate::error::{Error, Result};
use crate::rng::RngSeed;

/// Outer and inner sample sizes of the nested Monte-Carlo oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleSize {
    pub n_outer: usize,
    pub n_inner: usize,
}

impl Default for OracleSize {
    fn default() -> Self {
        OracleSize {
            n_outer: 100_000,
            n_inner: 100,
        }
    }
}

/// `E[(m(X) - E[m(X) | X^{-j}])^2]` for `X ~ N(0, cov)`.
///
/// Each outer draw `X` is paired with `n_inner` exact conditional redraws of
/// `X^j`. Averaging over a finite inner sample inflates the squared
/// difference by `1 + 1/n_inner`, which is divided out.
pub fn tsi_oracle_montecarlo(
    m: &dyn Fn(&[f64]) -> f64,
    cov: &Covariance,
    j: usize,
    n_outer: usize,
    n_inner: usize,
    seed: RngSeed,
) -> Result<f64> {
    if n_outer == 0 || n_inner == 0 {
        return Err(Error::invalid("oracle sample sizes must be positive"));
    }
    let p = cov.dim();
    let cond = GaussianConditional::new(cov, &vec![0.0; p], j)?;
    let sd = cond.variance().sqrt();
    let l = cov.cholesky_lower();
    let mut rng = seed.rng();
    let mut z = vec![0.0; p];
    let mut x = vec![0.0; p];
    let mut acc = 0.0;
    for _ in 0..n_outer {
        for zk in z.iter_mut() {
            *zk = rng.sample(StandardNormal);
        }
        for r in 0..p {
            x[r] = (0..=r).map(|c| l[(r, c)] * z[c]).sum();
        }
        let full = m(&x);
        let mu = cond.mean_given_row(&x);
        let xj = x[j];
        let mut inner = 0.0;
        for _ in 0..n_inner {
            x[j] = mu + sd * rng.sample::<f64, _>(StandardNormal);
            inner += m(&x);
        }
        x[j] = xj;
        let d = full - inner / n_inner as f64;
        acc += d * d;
    }
    let k = n_inner as f64;
    Ok(acc / n_outer as f64 * k / (k + 1.0))
}
