//! Synthetic regression benchmarks with known total Sobol indices.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::oracle::{tsi_oracle_montecarlo, OracleSize};
use crate::data::{sample_gaussian, toeplitz_covariance, Dataset, GaussianConditional};
use crate::error::{Error, Result};
use crate::rng::RngSeed;

mod stream {
    pub const X: u64 = 1;
    pub const ACTIVE: u64 = 2;
    pub const BETA: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const MONOMIALS: u64 = 5;
    pub const ORACLE: u64 = 6;
}

/// Seed of the oracle that fills nonlinear ground truth; fixed so the truth
/// depends only on `(p, rho)`.
const NONLINEAR_ORACLE_SEED: RngSeed = RngSeed::new(0x5EED_7051);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorId {
    Linear,
    Nonlinear,
    Polynomial,
}

/// Coefficient times a product of coordinates (repeats allowed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    pub factors: Vec<usize>,
}

impl Monomial {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.factors.iter().fold(self.coef, |acc, &k| acc * x[k])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub generator: GeneratorId,
    pub active_set: Vec<bool>,
    pub beta: Option<Vec<f64>>,
    /// Total Sobol index per feature where known.
    pub tsi: Vec<Option<f64>>,
    pub rho: f64,
    pub sigma_noise: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monomials: Option<Vec<Monomial>>,
}

impl GroundTruth {
    pub fn p(&self) -> usize {
        self.active_set.len()
    }

    pub fn n_active(&self) -> usize {
        self.active_set.iter().filter(|&&a| a).count()
    }
}

/// Values taken by the nonzero coefficients of the linear generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum BetaSpec {
    Constant { value: f64 },
    Normal { mean: f64, sd: f64 },
}

impl Default for BetaSpec {
    fn default() -> Self {
        BetaSpec::Constant { value: 1.0 }
    }
}

/// Noise level, either directly or as a signal-to-noise ratio
/// `sigma^2 = |X beta|^2 / (n * snr)` on the generated sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    Sigma { sigma: f64 },
    Snr { snr: f64 },
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::Sigma { sigma: 1.0 }
    }
}

fn default_sigma() -> f64 {
    1.0
}

/// Benchmark data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Linear {
        p: usize,
        rho: f64,
        sparsity: f64,
        #[serde(default)]
        beta: BetaSpec,
        #[serde(default)]
        noise: NoiseSpec,
    },
    Nonlinear {
        p: usize,
        rho: f64,
    },
    Polynomial {
        p: usize,
        rho: f64,
        degree: usize,
        sparsity: f64,
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default)]
        oracle: OracleSize,
    },
}

impl GeneratorSpec {
    pub fn id(&self) -> GeneratorId {
        match self {
            GeneratorSpec::Linear { .. } => GeneratorId::Linear,
            GeneratorSpec::Nonlinear { .. } => GeneratorId::Nonlinear,
            GeneratorSpec::Polynomial { .. } => GeneratorId::Polynomial,
        }
    }

    pub fn p(&self) -> usize {
        match *self {
            GeneratorSpec::Linear { p, .. }
            | GeneratorSpec::Nonlinear { p, .. }
            | GeneratorSpec::Polynomial { p, .. } => p,
        }
    }

    pub fn rho(&self) -> f64 {
        match *self {
            GeneratorSpec::Linear { rho, .. }
            | GeneratorSpec::Nonlinear { rho, .. }
            | GeneratorSpec::Polynomial { rho, .. } => rho,
        }
    }

    pub fn with_rho(&self, new_rho: f64) -> GeneratorSpec {
        let mut g = self.clone();
        match &mut g {
            GeneratorSpec::Linear { rho, .. }
            | GeneratorSpec::Nonlinear { rho, .. }
            | GeneratorSpec::Polynomial { rho, .. } => *rho = new_rho,
        }
        g
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        let rho = self.rho();
        if !(rho.abs() < 1.0) {
            return Err(Error::invalid(format!(
                "rho must satisfy |rho| < 1, got {rho}"
            )));
        }
        match *self {
            GeneratorSpec::Linear {
                sparsity,
                beta,
                noise,
                ..
            } => {
                active_count(p, sparsity)?;
                if let BetaSpec::Normal { sd, .. } = beta {
                    if !(sd >= 0.0) {
                        return Err(Error::invalid("beta sd must be >= 0"));
                    }
                }
                match noise {
                    NoiseSpec::Sigma { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => Err(
                        Error::invalid(format!("noise sigma must be finite and >= 0, got {sigma}")),
                    ),
                    NoiseSpec::Snr { snr } if !(snr > 0.0 && snr.is_finite()) => Err(
                        Error::invalid(format!("snr must be finite and > 0, got {snr}")),
                    ),
                    _ => Ok(()),
                }
            }
            GeneratorSpec::Nonlinear { .. } => {
                if p < 5 {
                    Err(Error::invalid(format!(
                        "p >= 5 required for the nonlinear generator, got p = {p}"
                    )))
                } else {
                    Ok(())
                }
            }
            GeneratorSpec::Polynomial {
                degree,
                sparsity,
                sigma,
                ..
            } => {
                active_count(p, sparsity)?;
                if degree == 0 {
                    return Err(Error::invalid("polynomial degree must be >= 1"));
                }
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::invalid(format!(
                        "noise sigma must be finite and >= 0, got {sigma}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn generate(&self, n: usize, seed: RngSeed) -> Result<(Dataset, GroundTruth)> {
        self.validate()?;
        match *self {
            GeneratorSpec::Linear {
                p,
                rho,
                sparsity,
                beta,
                noise,
            } => gen_linear(n, p, rho, sparsity, beta, noise, seed),
            GeneratorSpec::Nonlinear { p, rho } => gen_nonlinear(n, p, rho, seed),
            GeneratorSpec::Polynomial {
                p,
                rho,
                degree,
                sparsity,
                sigma,
                oracle,
            } => gen_polynomial(n, p, rho, degree, sparsity, sigma, oracle, seed),
        }
    }
}

fn active_count(p: usize, sparsity: f64) -> Result<usize> {
    if !(sparsity > 0.0 && sparsity <= 1.0) {
        return Err(Error::invalid(format!(
            "sparsity must lie in (0, 1], got {sparsity}"
        )));
    }
    let k = (sparsity * p as f64).round() as usize;
    if k == 0 {
        return Err(Error::invalid(format!(
            "sparsity {sparsity} selects no feature out of p = {p}"
        )));
    }
    Ok(k)
}

fn active_mask(p: usize, k: usize, seed: RngSeed) -> Vec<bool> {
    let mut mask = vec![false; p];
    for i in sample_indices(&mut seed.rng(), p, k) {
        mask[i] = true;
    }
    mask
}

fn noise(n: usize, sigma: f64, seed: RngSeed) -> Vec<f64> {
    let mut r = seed.rng();
    (0..n)
        .map(|_| sigma * r.sample::<f64, _>(StandardNormal))
        .collect()
}

fn design(n: usize, p: usize, rho: f64, seed: RngSeed) -> Result<DMatrix<f64>> {
    if p < 2 {
        return Err(Error::invalid(format!("benchmarks need p >= 2, got {p}")));
    }
    let cov = toeplitz_covariance(p, rho)?;
    sample_gaussian(n, &vec![0.0; p], &cov, seed.derive(stream::X))
}

/// Conditional variance of every coordinate under `toeplitz(rho)`.
fn conditional_variances(p: usize, rho: f64) -> Result<Vec<f64>> {
    let cov = toeplitz_covariance(p, rho)?;
    (0..p)
        .map(|j| Ok(GaussianConditional::new(&cov, &vec![0.0; p], j)?.variance()))
        .collect()
}

/// `y = X beta + eps` with a uniformly drawn active set of size `round(sparsity * p)`.
pub fn gen_linear(
    n: usize,
    p: usize,
    rho: f64,
    sparsity: f64,
    beta_spec: BetaSpec,
    noise_spec: NoiseSpec,
    seed: RngSeed,
) -> Result<(Dataset, GroundTruth)> {
    let k = active_count(p, sparsity)?;
    let x = design(n, p, rho, seed)?;
    let active = active_mask(p, k, seed.derive(stream::ACTIVE));
    let mut br = seed.derive(stream::BETA).rng();
    let beta: Vec<f64> = active
        .iter()
        .map(|&a| match (a, beta_spec) {
            (false, _) => 0.0,
            (true, BetaSpec::Constant { value }) => value,
            (true, BetaSpec::Normal { mean, sd }) => {
                mean + sd * br.sample::<f64, _>(StandardNormal)
            }
        })
        .collect();
    let signal: Vec<f64> = (0..n)
        .map(|i| (0..p).map(|l| x[(i, l)] * beta[l]).sum())
        .collect();
    let sigma = match noise_spec {
        NoiseSpec::Sigma { sigma } => sigma,
        NoiseSpec::Snr { snr } => {
            (signal.iter().map(|s| s * s).sum::<f64>() / (n as f64 * snr)).sqrt()
        }
    };
    let eps = noise(n, sigma, seed.derive(stream::NOISE));
    let y = signal.iter().zip(&eps).map(|(s, e)| s + e).collect();
    let cv = conditional_variances(p, rho)?;
    let tsi = beta.iter().zip(&cv).map(|(b, v)| Some(b * b * v)).collect();
    let truth = GroundTruth {
        generator: GeneratorId::Linear,
        active_set: beta.iter().map(|&b| b != 0.0).collect(),
        beta: Some(beta),
        tsi,
        rho,
        sigma_noise: sigma,
        monomials: None,
    };
    Ok((Dataset::new(x, y, None)?, truth))
}

/// Regression function of the nonlinear benchmark.
pub fn nonlinear_m(x: &[f64]) -> f64 {
    if x[2] > 0.0 {
        x[0] * x[1]
    } else if x[2] < 0.0 {
        2.0 * x[3] * x[4]
    } else {
        0.0
    }
}

type TruthCache = Mutex<HashMap<(usize, u64), Vec<Option<f64>>>>;

fn nonlinear_truth_cache() -> &'static TruthCache {
    static CACHE: OnceLock<TruthCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Total Sobol indices of the nonlinear benchmark.
///
/// Features 0 and 1 are closed form: the product `X0 X1` only survives on
/// `X2 > 0`, which has probability one half independently of `X0^2` and `X1^2`,
/// so `tsi[0] = Var(X0 | X^{-0}) / 2` and `tsi[1] = Var(X1 | X^{-1}) / 2`.
/// Features 2 to 4 come from the Monte-Carlo oracle.
pub fn nonlinear_tsi(p: usize, rho: f64) -> Result<Vec<Option<f64>>> {
    if p < 5 {
        return Err(Error::invalid(format!(
            "p >= 5 required for the nonlinear generator, got p = {p}"
        )));
    }
    let key = (p, rho.to_bits());
    if let Some(v) = nonlinear_truth_cache()
        .lock()
        .expect("cache lock")
        .get(&key)
    {
        return Ok(v.clone());
    }
    let cov = toeplitz_covariance(p, rho)?;
    let cv = conditional_variances(p, rho)?;
    let size = OracleSize::default();
    let mut tsi = vec![Some(0.0); p];
    tsi[0] = Some(cv[0] / 2.0);
    tsi[1] = Some(cv[1] / 2.0);
    for (j, t) in tsi.iter_mut().enumerate().take(5).skip(2) {
        let seed = NONLINEAR_ORACLE_SEED.derive(j as u64);
        *t = Some(tsi_oracle_montecarlo(
            &nonlinear_m,
            &cov,
            j,
            size.n_outer,
            size.n_inner,
            seed,
        )?);
    }
    nonlinear_truth_cache()
        .lock()
        .expect("cache lock")
        .insert(key, tsi.clone());
    Ok(tsi)
}

/// Noiseless `y = X0 X1 1{X2 > 0} + 2 X3 X4 1{X2 < 0}`.
pub fn gen_nonlinear(
    n: usize,
    p: usize,
    rho: f64,
    seed: RngSeed,
) -> Result<(Dataset, GroundTruth)> {
    let tsi = nonlinear_tsi(p, rho)?;
    let x = design(n, p, rho, seed)?;
    let y = (0..n)
        .map(|i| {
            let row: Vec<f64> = (0..5).map(|l| x[(i, l)]).collect();
            nonlinear_m(&row)
        })
        .collect();
    let truth = GroundTruth {
        generator: GeneratorId::Nonlinear,
        active_set: (0..p).map(|j| j < 5).collect(),
        beta: None,
        tsi,
        rho,
        sigma_noise: 0.0,
        monomials: None,
    };
    Ok((Dataset::new(x, y, None)?, truth))
}

/// Sum of monomials over a sparse active set plus Gaussian noise.
///
/// Each active feature anchors one monomial: a degree drawn uniformly from
/// `1..=degree`, the anchor times `degree - 1` further factors drawn with
/// replacement from the active set, and an `N(0, 1)` coefficient.
#[allow(clippy::too_many_arguments)]
pub fn gen_polynomial(
    n: usize,
    p: usize,
    rho: f64,
    degree: usize,
    sparsity: f64,
    sigma: f64,
    oracle: OracleSize,
    seed: RngSeed,
) -> Result<(Dataset, GroundTruth)> {
    if degree == 0 {
        return Err(Error::invalid("polynomial degree must be >= 1"));
    }
    let k = active_count(p, sparsity)?;
    let x = design(n, p, rho, seed)?;
    let active = active_mask(p, k, seed.derive(stream::ACTIVE));
    let active_idx: Vec<usize> = (0..p).filter(|&j| active[j]).collect();
    let mut mr = seed.derive(stream::MONOMIALS).rng();
    let coef_law = Normal::new(0.0, 1.0).expect("unit normal is valid");
    let monomials: Vec<Monomial> = active_idx
        .iter()
        .map(|&a| {
            let d = mr.random_range(1..=degree);
            let mut factors = vec![a];
            factors.extend((1..d).map(|_| active_idx[mr.random_range(0..active_idx.len())]));
            Monomial {
                coef: mr.sample(coef_law),
                factors,
            }
        })
        .collect();
    let m = |row: &[f64]| monomials.iter().map(|t| t.eval(row)).sum::<f64>();
    let eps = noise(n, sigma, seed.derive(stream::NOISE));
    let mut row = vec![0.0; p];
    let y = (0..n)
        .map(|i| {
            for (l, v) in row.iter_mut().enumerate() {
                *v = x[(i, l)];
            }
            m(&row) + eps[i]
        })
        .collect();
    let cov = toeplitz_covariance(p, rho)?;
    let mut tsi = vec![Some(0.0); p];
    for &j in &active_idx {
        let s = seed.derive(stream::ORACLE).derive(j as u64);
        tsi[j] = Some(tsi_oracle_montecarlo(
            &m,
            &cov,
            j,
            oracle.n_outer,
            oracle.n_inner,
            s,
        )?);
    }
    let truth = GroundTruth {
        generator: GeneratorId::Polynomial,
        active_set: active,
        beta: None,
        tsi,
        rho,
        sigma_noise: sigma,
        monomials: Some(monomials),
    };
    Ok((Dataset::new(x, y, None)?, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_beta_gives_zero_truth() {
        let (ds, t) = gen_linear(
            500,
            10,
            0.6,
            0.3,
            BetaSpec::Constant { value: 0.0 },
            NoiseSpec::default(),
            RngSeed(1),
        )
        .unwrap();
        assert!(t.tsi.iter().all(|v| *v == Some(0.0)));
        assert_eq!(t.n_active(), 0);
        let var = crate::data::sample_variance(ds.y());
        assert!((var - 1.0).abs() < 0.15);
    }

    #[test]
    fn sparsity_fixes_active_count() {
        let (_, t) = gen_linear(
            50,
            100,
            0.6,
            0.25,
            BetaSpec::default(),
            NoiseSpec::default(),
            RngSeed(2),
        )
        .unwrap();
        assert_eq!(t.n_active(), 25);
        let (_, u) = gen_linear(
            50,
            100,
            0.6,
            0.25,
            BetaSpec::default(),
            NoiseSpec::default(),
            RngSeed(3),
        )
        .unwrap();
        assert_ne!(t.active_set, u.active_set);
        assert!(gen_linear(
            50,
            10,
            0.6,
            0.0,
            BetaSpec::default(),
            NoiseSpec::default(),
            RngSeed(2)
        )
        .is_err());
        assert!(gen_linear(
            50,
            10,
            0.6,
            0.01,
            BetaSpec::default(),
            NoiseSpec::default(),
            RngSeed(2)
        )
        .is_err());
        assert!(gen_linear(
            50,
            10,
            0.6,
            1.5,
            BetaSpec::default(),
            NoiseSpec::default(),
            RngSeed(2)
        )
        .is_err());
    }

    #[test]
    fn linear_truth_is_closed_form() {
        let (_, t) = gen_linear(
            10,
            20,
            0.6,
            1.0,
            BetaSpec::default(),
            NoiseSpec::default(),
            RngSeed(4),
        )
        .unwrap();
        assert!((t.tsi[0].unwrap() - 0.64).abs() < 1e-12);
        assert!((t.tsi[7].unwrap() - 0.64 / 1.36).abs() < 1e-12);
    }

    #[test]
    fn snr_sets_noise_level() {
        let (ds, t) = gen_linear(
            4000,
            30,
            0.6,
            0.25,
            BetaSpec::default(),
            NoiseSpec::Snr { snr: 2.0 },
            RngSeed(5),
        )
        .unwrap();
        let beta = t.beta.as_ref().unwrap();
        let signal_ms = (0..ds.n())
            .map(|i| {
                (0..30)
                    .map(|l| ds.x()[(i, l)] * beta[l])
                    .sum::<f64>()
                    .powi(2)
            })
            .sum::<f64>()
            / ds.n() as f64;
        assert!((signal_ms / t.sigma_noise.powi(2) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn nonlinear_closed_forms() {
        let t = nonlinear_tsi(50, 0.6).unwrap();
        assert!((t[0].unwrap() - 0.32).abs() < 1e-12);
        assert!((t[1].unwrap() - 0.32 / 1.36).abs() < 1e-12);
        assert!(t[5..].iter().all(|v| *v == Some(0.0)));
        let t0 = nonlinear_tsi(5, 0.0).unwrap();
        assert!((t0[0].unwrap() - 0.5).abs() < 1e-12);
        assert!((t0[1].unwrap() - 0.5).abs() < 1e-12);
        assert!(gen_nonlinear(10, 3, 0.6, RngSeed(0))
            .unwrap_err()
            .to_string()
            .contains("p >= 5 required"));
    }

    // Features 3 and 4 have the same structure as 0 and 1 with weight 2 on
    // the complementary half: tsi = 4 * Var(X^j | X^{-j}) / 2.
    #[test]
    fn nonlinear_oracle_agrees_with_closed_forms() {
        let t = nonlinear_tsi(10, 0.6).unwrap();
        let cv = conditional_variances(10, 0.6).unwrap();
        for j in [3, 4] {
            let v = t[j].unwrap();
            assert!((v / (2.0 * cv[j]) - 1.0).abs() < 0.03, "{j}: {v}");
        }
        let cov = toeplitz_covariance(10, 0.6).unwrap();
        for j in [0, 1] {
            let v = tsi_oracle_montecarlo(&nonlinear_m, &cov, j, 100_000, 100, RngSeed(7)).unwrap();
            assert!((v / t[j].unwrap() - 1.0).abs() < 0.03, "{j}: {v}");
        }
        let v6 = tsi_oracle_montecarlo(&nonlinear_m, &cov, 6, 10_000, 10, RngSeed(8)).unwrap();
        assert!(v6 < 1e-20, "{v6}");
        assert!(t[2].unwrap() > 0.0);
    }

    #[test]
    fn nonlinear_response_is_noiseless() {
        let (ds, t) = gen_nonlinear(100, 6, 0.6, RngSeed(9)).unwrap();
        for i in 0..100 {
            let row: Vec<f64> = ds.x().row(i).iter().copied().collect();
            assert_eq!(ds.y()[i], nonlinear_m(&row));
        }
        assert_eq!(t.active_set, vec![true, true, true, true, true, false]);
    }

    #[test]
    fn polynomial_degree_one_matches_linear_closed_form() {
        let size = OracleSize {
            n_outer: 50_000,
            n_inner: 20,
        };
        let (_, t) = gen_polynomial(100, 8, 0.6, 1, 0.5, 1.0, size, RngSeed(10)).unwrap();
        let cv = conditional_variances(8, 0.6).unwrap();
        let monos = t.monomials.as_ref().unwrap();
        for m in monos {
            assert_eq!(m.factors.len(), 1);
            let j = m.factors[0];
            let expect = m.coef * m.coef * cv[j];
            assert!((t.tsi[j].unwrap() / expect - 1.0).abs() < 0.03);
        }
        for j in 0..8 {
            if !t.active_set[j] {
                assert_eq!(t.tsi[j], Some(0.0));
            }
        }
    }

    // With one active feature and independent coordinates the monomial is
    // c * x or c * x^2, whose variances are c^2 and 2 c^2.
    #[test]
    fn polynomial_single_monomial_variance() {
        let size = OracleSize {
            n_outer: 100_000,
            n_inner: 50,
        };
        for s in 0..4 {
            let (_, t) = gen_polynomial(10, 10, 0.0, 2, 0.1, 0.5, size, RngSeed(11 + s)).unwrap();
            let m = &t.monomials.as_ref().unwrap()[0];
            let j = m.factors[0];
            let expect = if m.factors.len() == 1 {
                m.coef.powi(2)
            } else {
                2.0 * m.coef.powi(2)
            };
            assert!(
                (t.tsi[j].unwrap() / expect - 1.0).abs() < 0.05,
                "{:?} {:?}",
                m,
                t.tsi[j]
            );
        }
    }

    #[test]
    fn generator_spec_round_trip() {
        let g: GeneratorSpec = toml::from_str(
            "kind = \"linear\"\np = 30\nrho = 0.6\nsparsity = 0.25\nnoise = { kind = \"snr\", snr = 2.0 }\n",
        )
        .unwrap();
        assert_eq!(
            g,
            GeneratorSpec::Linear {
                p: 30,
                rho: 0.6,
                sparsity: 0.25,
                beta: BetaSpec::default(),
                noise: NoiseSpec::Snr { snr: 2.0 }
            }
        );
        let (a, _) = g.generate(20, RngSeed(1)).unwrap();
        let (b, _) = g.generate(20, RngSeed(1)).unwrap();
        assert_eq!(a.x(), b.x());
        assert!(GeneratorSpec::Nonlinear { p: 4, rho: 0.1 }
            .validate()
            .is_err());
    }
}
