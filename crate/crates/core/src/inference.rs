//! Variance estimates and one-sided tests of the conditional null with an
//! additive correction `c * n^-gamma` on the rejection threshold.

use std::fmt;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{format_float, sample_variance};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, ImportanceScore, Summands};
use crate::rng::RngSeed;

const MIN_BOOTSTRAP_REPS: usize = 50;
const BOOTSTRAP_STREAM: u64 = 0xB007;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum VarianceSpec {
    #[default]
    Sample,
    Bootstrap {
        reps: usize,
    },
}

impl VarianceSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            VarianceSpec::Bootstrap { reps } if reps < MIN_BOOTSTRAP_REPS => Err(Error::invalid(
                format!("bootstrap needs at least {MIN_BOOTSTRAP_REPS} reps, got {reps}"),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionKind {
    None,
    #[default]
    Sqrt,
    Linear,
    Quadratic,
}

impl CorrectionKind {
    /// Decay exponent of the additive term; `None` has no additive term.
    pub fn gamma(self) -> Option<f64> {
        match self {
            CorrectionKind::None => None,
            CorrectionKind::Sqrt => Some(0.5),
            CorrectionKind::Linear => Some(1.0),
            CorrectionKind::Quadratic => Some(2.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CorrectionKind::None => "none",
            CorrectionKind::Sqrt => "sqrt",
            CorrectionKind::Linear => "linear",
            CorrectionKind::Quadratic => "quadratic",
        }
    }
}

/// Scale of the additive correction: a fixed value, or the test-set
/// standard deviation of the response.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub enum CorrectionScale {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for CorrectionScale {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            CorrectionScale::Auto => s.serialize_str("auto"),
            CorrectionScale::Fixed(c) => s.serialize_f64(*c),
        }
    }
}

impl<'de> Deserialize<'de> for CorrectionScale {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(c) => Ok(CorrectionScale::Fixed(c)),
            Repr::Str(s) if s == "auto" => Ok(CorrectionScale::Auto),
            Repr::Str(s) => Err(serde::de::Error::custom(format!(
                "expected a number or \"auto\", got \"{s}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrectionSpec {
    pub kind: CorrectionKind,
    #[serde(default)]
    pub c: CorrectionScale,
}

impl CorrectionSpec {
    pub fn new(kind: CorrectionKind, c: CorrectionScale) -> Self {
        CorrectionSpec { kind, c }
    }

    pub fn none() -> Self {
        CorrectionSpec::new(CorrectionKind::None, CorrectionScale::Fixed(0.0))
    }

    pub fn validate(&self) -> Result<()> {
        if let CorrectionScale::Fixed(c) = self.c {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(Error::invalid(format!(
                    "correction scale must be finite and >= 0, got {c}"
                )));
            }
        }
        Ok(())
    }

    /// Resolved scale `c` given the test-set standard deviation of the response.
    pub fn scale(&self, response_sd: f64) -> f64 {
        match self.c {
            CorrectionScale::Auto => response_sd,
            CorrectionScale::Fixed(c) => c,
        }
    }

    /// Additive term `c * n^-gamma`.
    pub fn additive_term(&self, response_sd: f64, n: usize) -> f64 {
        match self.kind.gamma() {
            None => 0.0,
            Some(g) => self.scale(response_sd) * (n as f64).powf(-g),
        }
    }
}

impl fmt::Display for CorrectionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.c {
            CorrectionScale::Auto => write!(f, "{}(c=auto)", self.kind.as_str()),
            CorrectionScale::Fixed(c) => write!(f, "{}(c={})", self.kind.as_str(), format_float(c)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub feature: usize,
    pub estimator: EstimatorKind,
    pub statistic: f64,
    pub se: f64,
    pub threshold: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub correction: CorrectionSpec,
    /// Resolved correction scale `c`.
    pub c: f64,
    /// Set when a negative variance estimate was clipped to zero.
    pub variance_clipped: bool,
}

fn check_size(score: &ImportanceScore) -> Result<()> {
    let ok = match &score.summands {
        Summands::Paired { diffs } => diffs.len() >= 2,
        Summands::Split { restricted, full } => restricted.len() >= 2 && full.len() >= 2,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(
            "variance estimation needs at least 2 test samples (per half for split scores)",
        ))
    }
}

/// Variance of the estimate from the sample variance of its summands.
/// Split scores add the variances of the two independent half means.
pub fn variance_sample(score: &ImportanceScore) -> Result<f64> {
    check_size(score)?;
    Ok(match &score.summands {
        Summands::Paired { diffs } => sample_variance(diffs) / diffs.len() as f64,
        Summands::Split { restricted, full } => {
            sample_variance(restricted) / restricted.len() as f64
                + sample_variance(full) / full.len() as f64
        }
    })
}

fn resampled_mean<R: Rng>(v: &[f64], rng: &mut R) -> f64 {
    (0..v.len())
        .map(|_| v[rng.random_range(0..v.len())])
        .sum::<f64>()
        / v.len() as f64
}

/// Variance of the estimate across bootstrap resamples of the test summands.
pub fn variance_bootstrap(score: &ImportanceScore, reps: usize, seed: RngSeed) -> Result<f64> {
    VarianceSpec::Bootstrap { reps }.validate()?;
    check_size(score)?;
    let mut rng = seed.rng();
    let means: Vec<f64> = (0..reps)
        .map(|_| match &score.summands {
            Summands::Paired { diffs } => resampled_mean(diffs, &mut rng),
            Summands::Split { restricted, full } => {
                resampled_mean(restricted, &mut rng) - resampled_mean(full, &mut rng)
            }
        })
        .collect();
    Ok(sample_variance(&means))
}

fn estimate_variance(score: &ImportanceScore, spec: &VarianceSpec, seed: RngSeed) -> Result<f64> {
    match *spec {
        VarianceSpec::Sample => variance_sample(score),
        VarianceSpec::Bootstrap { reps } => variance_bootstrap(score, reps, seed),
    }
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal is valid")
}

/// One-sided test of `psi_j = 0` against `psi_j > 0`.
///
/// The null is rejected when the statistic reaches `z_alpha * se + c * n^-gamma`.
/// With a zero standard error the statistic is compared to the additive term
/// directly and must exceed it strictly.
pub fn test_importance(
    score: &ImportanceScore,
    var_spec: &VarianceSpec,
    corr: &CorrectionSpec,
    alpha: f64,
    n: usize,
    seed: RngSeed,
) -> Result<TestResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if n == 0 {
        return Err(Error::invalid("effective sample size must be positive"));
    }
    var_spec.validate()?;
    corr.validate()?;
    let raw = estimate_variance(score, var_spec, seed)?;
    if !raw.is_finite() {
        return Err(Error::numerical("variance estimate is not finite"));
    }
    let variance_clipped = raw < 0.0;
    if variance_clipped {
        log::warn!(
            "negative variance estimate {raw} for feature {} clipped to 0",
            score.feature
        );
    }
    let se = raw.max(0.0).sqrt();
    let add = corr.additive_term(score.response_sd, n);
    let normal = standard_normal();
    let z = normal.inverse_cdf(1.0 - alpha);
    let stat = score.estimate;
    let threshold = z * se + add;
    let (reject, p_value) = if se > 0.0 {
        (
            stat >= threshold,
            (1.0 - normal.cdf((stat - add) / se)).clamp(0.0, 1.0),
        )
    } else if stat > add {
        (true, 0.0)
    } else {
        (false, 1.0)
    };
    Ok(TestResult {
        feature: score.feature,
        estimator: score.estimator,
        statistic: stat,
        se,
        threshold,
        p_value,
        reject,
        alpha,
        correction: *corr,
        c: corr.scale(score.response_sd),
        variance_clipped,
    })
}

/// Tests every score with `n = n_test`; results are ordered by feature index.
pub fn run_feature_tests(
    scores: &[ImportanceScore],
    var_spec: &VarianceSpec,
    corr: &CorrectionSpec,
    alpha: f64,
) -> Result<Vec<TestResult>> {
    let mut out = scores
        .iter()
        .map(|s| {
            test_importance(
                s,
                var_spec,
                corr,
                alpha,
                s.n_test,
                s.seed.derive(BOOTSTRAP_STREAM),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by_key(|r| r.feature);
    Ok(out)
}

pub const RESULT_COLUMNS: [&str; 9] = [
    "feature",
    "estimator",
    "estimate",
    "se",
    "threshold",
    "p_value",
    "reject",
    "correction",
    "alpha",
];

/// Writes results as CSV, preceded by optional `# ` comment lines.
pub fn write_results_csv<W: Write>(
    results: &[TestResult],
    mut w: W,
    comment: Option<&str>,
) -> Result<()> {
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(w, "# {line}")?;
        }
    }
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(RESULT_COLUMNS)?;
    for r in results {
        wr.write_record([
            r.feature.to_string(),
            r.estimator.to_string(),
            format_float(r.statistic),
            format_float(r.se),
            format_float(r.threshold),
            format_float(r.p_value),
            r.reject.to_string(),
            format!("{}(c={})", r.correction.kind.as_str(), format_float(r.c)),
            format_float(r.alpha),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
