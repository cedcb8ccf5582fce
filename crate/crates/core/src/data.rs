//! Tabular containers, train/test splitting and Gaussian designs.
//!
//! Matrices are `nalgebra::DMatrix<f64>`, which stores columns contiguously:
//! a dataset with `n` rows and `p` features is an `n x p` column-major block.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngSeed;

/// Design matrix plus response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: Vec<f64>,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: Vec<f64>, feature_names: Option<Vec<String>>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::invalid(format!(
                "x has {} rows but y has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if x.ncols() < 2 {
            return Err(Error::invalid(format!(
                "at least 2 features required, got {}",
                x.ncols()
            )));
        }
        if let Some(names) = &feature_names {
            if names.len() != x.ncols() {
                return Err(Error::invalid(format!(
                    "{} feature names for {} columns",
                    names.len(),
                    x.ncols()
                )));
            }
        }
        ensure_finite(x.as_slice(), "x")?;
        ensure_finite(&y, "y")?;
        Ok(Dataset {
            x,
            y,
            feature_names,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn feature_name(&self, j: usize) -> String {
        match &self.feature_names {
            Some(n) => n[j].clone(),
            None => format!("x{j}"),
        }
    }

    /// Rows `idx` in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Design with column `j` removed.
    pub fn x_without(&self, j: usize) -> DMatrix<f64> {
        drop_column(&self.x, j)
    }

    /// Sample standard deviation of the response (n - 1 denominator).
    pub fn response_sd(&self) -> f64 {
        sample_variance(&self.y).sqrt()
    }

    /// Reads a headered CSV whose last column is the response. Lines starting
    /// with `#` are skipped.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let f = std::fs::File::open(path)?;
        Self::read_csv_from(f)
    }

    pub fn read_csv_from<R: Read>(reader: R) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .has_headers(true)
            .from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();
        if headers.len() < 3 {
            return Err(Error::invalid(
                "dataset CSV needs at least two features and y",
            ));
        }
        if headers.last().map(String::as_str) != Some("y") {
            return Err(Error::invalid("last CSV column must be named `y`"));
        }
        let p = headers.len() - 1;
        let mut rows: Vec<f64> = Vec::new();
        let mut y = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != p + 1 {
                return Err(Error::invalid(format!(
                    "row has {} fields, expected {}",
                    rec.len(),
                    p + 1
                )));
            }
            for (k, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("non-numeric CSV field `{field}`")))?;
                if k < p {
                    rows.push(v);
                } else {
                    y.push(v);
                }
            }
        }
        let x = DMatrix::from_row_slice(y.len(), p, &rows);
        Dataset::new(x, y, Some(headers[..p].to_vec()))
    }

    /// Writes a headered CSV (features then `y`). `comment` lines are emitted
    /// first with a `# ` prefix.
    pub fn write_csv(&self, path: impl AsRef<Path>, comment: Option<&str>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv_to(std::io::BufWriter::new(f), comment)
    }

    pub fn write_csv_to<W: Write>(&self, mut w: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            for line in c.lines() {
                writeln!(w, "# {line}")?;
            }
        }
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.p()).map(|j| self.feature_name(j)).collect();
        header.push("y".into());
        wtr.write_record(&header)?;
        let mut rec = Vec::with_capacity(self.p() + 1);
        for i in 0..self.n() {
            rec.clear();
            for j in 0..self.p() {
                rec.push(format_float(self.x[(i, j)]));
            }
            rec.push(format_float(self.y[i]));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Shortest representation that round-trips exactly.
pub(crate) fn format_float(v: f64) -> String {
    format!("{v:?}")
}

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(k) => Err(Error::invalid(format!(
            "{what} contains a non-finite value at position {k}"
        ))),
        None => Ok(()),
    }
}

pub(crate) fn drop_column(x: &DMatrix<f64>, j: usize) -> DMatrix<f64> {
    x.clone().remove_column(j)
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample variance; 0 for fewer than two values.
pub(crate) fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 || v.iter().all(|&x| x == v[0]) {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

/// Train/test partition parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: RngSeed,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: RngSeed) -> Self {
        SplitSpec {
            train_fraction,
            seed,
        }
    }

    /// Shuffled `(train, test)` row indices for a dataset with `n` rows.
    pub fn indices(&self, n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "train_fraction must lie in (0,1), got {}",
                self.train_fraction
            )));
        }
        let n_train = (self.train_fraction * n as f64).round() as usize;
        if n < 2 || n_train == 0 || n_train >= n {
            return Err(Error::invalid(format!(
                "train_fraction {} leaves an empty part for n = {n}",
                self.train_fraction
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut self.seed.rng());
        let test = idx.split_off(n_train);
        Ok((idx, test))
    }
}

/// Uniform random train/test partition.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let (tr, te) = spec.indices(ds.n())?;
    Ok((ds.select_rows(&tr), ds.select_rows(&te)))
}

/// Symmetric positive-definite covariance with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct Covariance {
    sigma: DMatrix<f64>,
    lower: DMatrix<f64>,
}

impl Covariance {
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        if !sigma.is_square() || sigma.nrows() == 0 {
            return Err(Error::invalid(
                "covariance must be a nonempty square matrix",
            ));
        }
        ensure_finite(sigma.as_slice(), "covariance")?;
        let p = sigma.nrows();
        for i in 0..p {
            for j in 0..i {
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-12 {
                    return Err(Error::invalid(format!(
                        "covariance not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let lower = Cholesky::new(sigma.clone())
            .ok_or_else(|| {
                Error::numerical("Cholesky factorization failed: covariance not positive definite")
            })?
            .l();
        Ok(Covariance { sigma, lower })
    }

    pub fn identity(p: usize) -> Self {
        Covariance::new(DMatrix::identity(p, p)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn cholesky_lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Covariance::new(&self.sigma * factor)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        for i in 0..self.dim() {
            let row: Vec<String> = (0..self.dim())
                .map(|j| format_float(self.sigma[(i, j)]))
                .collect();
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// AR(1) correlation matrix with entries `rho^|i-j|`.
pub fn toeplitz_covariance(p: usize, rho: f64) -> Result<Covariance> {
    if p < 2 {
        return Err(Error::invalid(format!(
            "toeplitz covariance needs p >= 2, got {p}"
        )));
    }
    if !(rho.abs() < 1.0) {
        return Err(Error::invalid(format!("|rho| must be < 1, got {rho}")));
    }
    let sigma = DMatrix::from_fn(p, p, |i, j| rho.powi(i.abs_diff(j) as i32));
    Covariance::new(sigma)
}

/// `n` i.i.d. rows from `N(mean, cov)`; row `i` consumes the `i`-th block of
/// `p` standard normals of the seed's stream.
pub fn sample_gaussian(
    n: usize,
    mean: &[f64],
    cov: &Covariance,
    seed: RngSeed,
) -> Result<DMatrix<f64>> {
    let p = cov.dim();
    if mean.len() != p {
        return Err(Error::invalid(format!(
            "mean has length {} but covariance is {p}x{p}",
            mean.len()
        )));
    }
    ensure_finite(mean, "mean")?;
    let l = cov.cholesky_lower();
    let mut rng = seed.rng();
    let mut out = DMatrix::zeros(n, p);
    let mut z = vec![0.0; p];
    for i in 0..n {
        for zk in z.iter_mut() {
            *zk = rng.sample(StandardNormal);
        }
        for r in 0..p {
            let mut acc = mean[r];
            for c in 0..=r {
                acc += l[(r, c)] * z[c];
            }
            out[(i, r)] = acc;
        }
    }
    Ok(out)
}

/// Exact Gaussian conditional of coordinate `j` given the others, with the
/// regression weights precomputed so evaluating many rows is cheap.
#[derive(Debug, Clone)]
pub struct GaussianConditional {
    j: usize,
    mean_j: f64,
    mean_rest: Vec<f64>,
    weights: Vec<f64>,
    variance: f64,
}

impl GaussianConditional {
    pub fn new(cov: &Covariance, mean: &[f64], j: usize) -> Result<Self> {
        let p = cov.dim();
        if j >= p {
            return Err(Error::invalid(format!(
                "feature index {j} out of range for p = {p}"
            )));
        }
        if mean.len() != p {
            return Err(Error::invalid("mean length does not match covariance"));
        }
        if p == 1 {
            return Ok(GaussianConditional {
                j,
                mean_j: mean[0],
                mean_rest: vec![],
                weights: vec![],
                variance: cov.matrix()[(0, 0)],
            });
        }
        let s = cov.matrix();
        let rest: Vec<usize> = (0..p).filter(|&k| k != j).collect();
        let s_rr = s.select_rows(&rest).select_columns(&rest);
        let s_rj = DVector::from_iterator(rest.len(), rest.iter().map(|&k| s[(k, j)]));
        let chol: Cholesky<f64, Dyn> = Cholesky::new(s_rr)
            .ok_or_else(|| Error::numerical("conditioning block of the covariance is singular"))?;
        let w = chol.solve(&s_rj);
        let variance = (s[(j, j)] - s_rj.dot(&w)).max(0.0);
        Ok(GaussianConditional {
            j,
            mean_j: mean[j],
            mean_rest: rest.iter().map(|&k| mean[k]).collect(),
            weights: w.iter().copied().collect(),
            variance,
        })
    }

    pub fn feature(&self) -> usize {
        self.j
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Regression weights of `X^j` on `X^{-j}`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Intercept of the conditional mean as an affine function of `X^{-j}`.
    pub fn intercept(&self) -> f64 {
        self.mean_j
            - self
                .weights
                .iter()
                .zip(&self.mean_rest)
                .map(|(w, m)| w * m)
                .sum::<f64>()
    }

    /// Conditional mean given the other coordinates (in original order, `j` removed).
    pub fn mean_given(&self, x_minus_j: &[f64]) -> f64 {
        self.mean_j
            + self
                .weights
                .iter()
                .zip(x_minus_j.iter().zip(&self.mean_rest))
                .map(|(w, (x, m))| w * (x - m))
                .sum::<f64>()
    }

    /// Conditional mean evaluated on a full row, skipping coordinate `j`.
    pub fn mean_given_row(&self, row: &[f64]) -> f64 {
        let mut acc = self.mean_j;
        let mut k = 0;
        for (l, &v) in row.iter().enumerate() {
            if l == self.j {
                continue;
            }
            acc += self.weights[k] * (v - self.mean_rest[k]);
            k += 1;
        }
        acc
    }
}

/// Conditional mean and variance of `X^j` given `X^{-j} = x_minus_j` under `N(mean, cov)`.
pub fn conditional_gaussian_params(
    cov: &Covariance,
    mean: &[f64],
    j: usize,
    x_minus_j: &[f64],
) -> Result<(f64, f64)> {
    let cond = GaussianConditional::new(cov, mean, j)?;
    if x_minus_j.len() + 1 != cov.dim() {
        return Err(Error::invalid(format!(
            "x_minus_j has length {}, expected {}",
            x_minus_j.len(),
            cov.dim() - 1
        )));
    }
    Ok((cond.mean_given(x_minus_j), cond.variance()))
}
