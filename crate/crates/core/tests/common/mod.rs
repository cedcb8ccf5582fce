#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use sobolcpi::data::{sample_gaussian, toeplitz_covariance, Dataset};
use sobolcpi::RngSeed;

/// `y = X beta + sigma * eps` with `X ~ N(0, toeplitz(rho))`.
pub fn linear_data(n: usize, beta: &[f64], rho: f64, sigma: f64, seed: RngSeed) -> Dataset {
    let p = beta.len();
    let cov = toeplitz_covariance(p, rho).unwrap();
    let x = sample_gaussian(n, &vec![0.0; p], &cov, seed.derive(1)).unwrap();
    let mut r = seed.derive(2).rng();
    let y = (0..n)
        .map(|i| {
            (0..p).map(|l| x[(i, l)] * beta[l]).sum::<f64>()
                + sigma * r.sample::<f64, _>(StandardNormal)
        })
        .collect();
    Dataset::new(x, y, None).unwrap()
}

pub fn gaussian_design(n: usize, p: usize, rho: f64, seed: RngSeed) -> DMatrix<f64> {
    sample_gaussian(
        n,
        &vec![0.0; p],
        &toeplitz_covariance(p, rho).unwrap(),
        seed,
    )
    .unwrap()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len();
    if k % 2 == 1 {
        s[k / 2]
    } else {
        (s[k / 2 - 1] + s[k / 2]) / 2.0
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Least-squares slope of `log|y|` on `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.abs().ln()).collect();
    let (mx, my) = (mean(&lx), mean(&ly));
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}
