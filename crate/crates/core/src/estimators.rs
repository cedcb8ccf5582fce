//! Variable-importance estimators. Each returns the per-test-sample loss
//! differences alongside their mean so inference can work on the summands.

use std::fmt;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{drop_column, ensure_finite, mean, sample_variance, split, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::learners::{fit, FittedModel, LearnerSpec};
use crate::rng::RngSeed;
use crate::sampler::ConditionalSampler;

mod stream {
    pub const LOCO_W_TRAIN: u64 = 1;
    pub const LOCO_W_TEST: u64 = 2;
    pub const LOCO_W_FULL: u64 = 3;
    pub const LOCO_W_RESTRICTED: u64 = 4;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Quadratic,
    ZeroOne,
}

/// Pointwise loss. Zero-one loss classifies a prediction as 1 when it is at least 0.5.
pub fn loss(kind: LossKind, pred: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if pred.len() != y.len() {
        return Err(Error::invalid(format!(
            "prediction length {} does not match response length {}",
            pred.len(),
            y.len()
        )));
    }
    match kind {
        LossKind::Quadratic => Ok(pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).collect()),
        LossKind::ZeroOne => {
            check_binary(y)?;
            Ok(pred
                .iter()
                .zip(y)
                .map(|(p, t)| if classify(*p) == *t { 0.0 } else { 1.0 })
                .collect())
        }
    }
}

fn classify(p: f64) -> f64 {
    if p >= 0.5 {
        1.0
    } else {
        0.0
    }
}

fn check_binary(y: &[f64]) -> Result<()> {
    if y.iter().all(|&v| v == 0.0 || v == 1.0) {
        Ok(())
    } else {
        Err(Error::invalid(
            "zero_one loss requires a response in {0, 1}",
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Pfi,
    Cpi,
    SobolCpi,
    Loco,
    LocoW,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Pfi => "pfi",
            EstimatorKind::Cpi => "cpi",
            EstimatorKind::SobolCpi => "sobol_cpi",
            EstimatorKind::Loco => "loco",
            EstimatorKind::LocoW => "loco_w",
        }
    }

    /// Whether the estimator needs a conditional sampler.
    pub fn uses_sampler(self) -> bool {
        matches!(self, EstimatorKind::Cpi | EstimatorKind::SobolCpi)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pfi" => Ok(EstimatorKind::Pfi),
            "cpi" => Ok(EstimatorKind::Cpi),
            "sobol_cpi" => Ok(EstimatorKind::SobolCpi),
            "loco" => Ok(EstimatorKind::Loco),
            "loco_w" => Ok(EstimatorKind::LocoW),
            other => Err(Error::invalid(format!("unknown estimator '{other}'"))),
        }
    }
}

/// Summands whose mean (or difference of means) is the estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Summands {
    /// One loss difference per test row.
    Paired { diffs: Vec<f64> },
    /// Losses of the restricted and full models on disjoint test halves.
    Split {
        restricted: Vec<f64>,
        full: Vec<f64>,
    },
}

impl Summands {
    pub fn estimate(&self) -> f64 {
        match self {
            Summands::Paired { diffs } => mean(diffs),
            Summands::Split { restricted, full } => mean(restricted) - mean(full),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Summands::Paired { diffs } => diffs.len(),
            Summands::Split { restricted, full } => restricted.len() + full.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceScore {
    pub feature: usize,
    pub estimator: EstimatorKind,
    pub n_cal: Option<usize>,
    pub estimate: f64,
    pub n_test: usize,
    pub seed: RngSeed,
    /// Sample standard deviation of the test response.
    pub response_sd: f64,
    pub summands: Summands,
}

impl ImportanceScore {
    fn new(
        feature: usize,
        estimator: EstimatorKind,
        n_cal: Option<usize>,
        summands: Summands,
        test: &Dataset,
        seed: RngSeed,
    ) -> Result<Self> {
        match &summands {
            Summands::Paired { diffs } => ensure_finite(diffs, "loss differences")?,
            Summands::Split { restricted, full } => {
                ensure_finite(restricted, "restricted losses")?;
                ensure_finite(full, "full losses")?;
            }
        }
        Ok(ImportanceScore {
            feature,
            estimator,
            n_cal,
            estimate: summands.estimate(),
            n_test: test.n(),
            seed,
            response_sd: test.response_sd(),
            summands,
        })
    }

    /// Per-row loss differences; `None` for split-sample estimators.
    pub fn per_sample_diffs(&self) -> Option<&[f64]> {
        match &self.summands {
            Summands::Paired { diffs } => Some(diffs),
            Summands::Split { .. } => None,
        }
    }
}

fn check_model(model: &FittedModel, test: &Dataset) -> Result<()> {
    if model.input_dim() != test.p() {
        return Err(Error::invalid(format!(
            "model takes {} inputs but the test set has {} features",
            model.input_dim(),
            test.p()
        )));
    }
    Ok(())
}

fn check_feature(j: usize, p: usize) -> Result<()> {
    if j >= p {
        return Err(Error::invalid(format!(
            "feature index {j} out of range for p = {p}"
        )));
    }
    Ok(())
}

fn differences(
    kind: LossKind,
    restricted: &[f64],
    full: &[f64],
    y: &[f64],
    scale: f64,
) -> Result<Vec<f64>> {
    let lr = loss(kind, restricted, y)?;
    let lf = loss(kind, full, y)?;
    Ok(lr.iter().zip(&lf).map(|(a, b)| scale * (a - b)).collect())
}

/// Permutation feature importance with one uniform permutation of column `j`.
pub fn pfi(
    model: &FittedModel,
    test: &Dataset,
    j: usize,
    loss_kind: LossKind,
    seed: RngSeed,
) -> Result<ImportanceScore> {
    let mut perm: Vec<usize> = (0..test.n()).collect();
    perm.shuffle(&mut seed.rng());
    pfi_with_permutation(model, test, j, loss_kind, &perm, seed)
}

/// PFI with a caller-supplied permutation of the test rows.
pub fn pfi_with_permutation(
    model: &FittedModel,
    test: &Dataset,
    j: usize,
    loss_kind: LossKind,
    perm: &[usize],
    seed: RngSeed,
) -> Result<ImportanceScore> {
    check_model(model, test)?;
    check_feature(j, test.p())?;
    let n = test.n();
    let mut seen = vec![false; n];
    if perm.len() != n
        || !perm
            .iter()
            .all(|&k| k < n && !std::mem::replace(&mut seen[k], true))
    {
        return Err(Error::invalid(
            "permutation must cover every test row exactly once",
        ));
    }
    let x = test.x();
    let mut xp = x.clone();
    for (i, &k) in perm.iter().enumerate() {
        xp[(i, j)] = x[(k, j)];
    }
    let diffs = differences(
        loss_kind,
        &model.predict_unchecked(&xp),
        &model.predict_unchecked(x),
        test.y(),
        1.0,
    )?;
    ImportanceScore::new(
        j,
        EstimatorKind::Pfi,
        None,
        Summands::Paired { diffs },
        test,
        seed,
    )
}

fn check_sampler(model: &FittedModel, sampler: &ConditionalSampler, test: &Dataset) -> Result<()> {
    check_model(model, test)?;
    if sampler.input_dim() != test.p() {
        return Err(Error::invalid(format!(
            "sampler was fitted on {} features but the test set has {}",
            sampler.input_dim(),
            test.p()
        )));
    }
    Ok(())
}

/// Conditional permutation importance from a single conditional draw.
pub fn cpi(
    model: &FittedModel,
    sampler: &ConditionalSampler,
    test: &Dataset,
    loss_kind: LossKind,
    seed: RngSeed,
) -> Result<ImportanceScore> {
    check_sampler(model, sampler, test)?;
    let draws = sampler.draw(test.x(), 1, seed)?;
    let pred = model.predict_unchecked(&draws.slot_matrix(0));
    let diffs = differences(
        loss_kind,
        &pred,
        &model.predict_unchecked(test.x()),
        test.y(),
        1.0,
    )?;
    ImportanceScore::new(
        sampler.feature(),
        EstimatorKind::Cpi,
        Some(1),
        Summands::Paired { diffs },
        test,
        seed,
    )
}

/// Sobol-CPI: compares the loss of the model averaged over `n_cal`
/// conditional draws against the full model, scaled by `n_cal/(n_cal+1)`
/// under the quadratic loss.
pub fn sobol_cpi(
    model: &FittedModel,
    sampler: &ConditionalSampler,
    test: &Dataset,
    n_cal: usize,
    loss_kind: LossKind,
    seed: RngSeed,
) -> Result<ImportanceScore> {
    sobol_cpi_with_correction(model, sampler, test, n_cal, loss_kind, true, seed)
}

/// Sobol-CPI with the finite-`n_cal` scaling switchable.
pub fn sobol_cpi_with_correction(
    model: &FittedModel,
    sampler: &ConditionalSampler,
    test: &Dataset,
    n_cal: usize,
    loss_kind: LossKind,
    correct: bool,
    seed: RngSeed,
) -> Result<ImportanceScore> {
    check_sampler(model, sampler, test)?;
    let draws = sampler.draw(test.x(), n_cal, seed)?;
    let n = test.n();
    let mut avg = vec![0.0; n];
    let mut buf: DMatrix<f64> = draws.base().clone();
    for c in 0..n_cal {
        draws.fill_slot(&mut buf, c);
        for (a, v) in avg.iter_mut().zip(model.predict_unchecked(&buf)) {
            *a += v;
        }
    }
    for a in &mut avg {
        *a /= n_cal as f64;
    }
    let scale = if correct && loss_kind == LossKind::Quadratic {
        n_cal as f64 / (n_cal as f64 + 1.0)
    } else {
        1.0
    };
    let diffs = differences(
        loss_kind,
        &avg,
        &model.predict_unchecked(test.x()),
        test.y(),
        scale,
    )?;
    ImportanceScore::new(
        sampler.feature(),
        EstimatorKind::SobolCpi,
        Some(n_cal),
        Summands::Paired { diffs },
        test,
        seed,
    )
}

/// Leave-one-covariate-out: refits the restricted model without column `j`.
pub fn loco(
    full_model: &FittedModel,
    restricted_spec: &LearnerSpec,
    train: &Dataset,
    test: &Dataset,
    j: usize,
    loss_kind: LossKind,
    seed: RngSeed,
) -> Result<ImportanceScore> {
    check_model(full_model, test)?;
    check_feature(j, test.p())?;
    if train.p() != test.p() {
        return Err(Error::invalid("train and test sets have different widths"));
    }
    let restricted = fit(restricted_spec, &train.x_without(j), train.y(), seed)?;
    let pred_r = restricted.predict_unchecked(&test.x_without(j));
    let diffs = differences(
        loss_kind,
        &pred_r,
        &full_model.predict_unchecked(test.x()),
        test.y(),
        1.0,
    )?;
    ImportanceScore::new(
        j,
        EstimatorKind::Loco,
        None,
        Summands::Paired { diffs },
        test,
        seed,
    )
}

/// Data-splitting LOCO: the full and restricted models are trained and
/// evaluated on disjoint 50/50 halves of the train and test sets.
pub fn loco_w(
    full_spec: &LearnerSpec,
    train: &Dataset,
    test: &Dataset,
    j: usize,
    loss_kind: LossKind,
    seed: RngSeed,
) -> Result<ImportanceScore> {
    let (train_full, train_restricted) = split(
        train,
        &SplitSpec::new(0.5, seed.derive(stream::LOCO_W_TRAIN)),
    )?;
    let (test_full, test_restricted) =
        split(test, &SplitSpec::new(0.5, seed.derive(stream::LOCO_W_TEST)))?;
    loco_w_on_halves(
        full_spec,
        (&train_full, &train_restricted),
        (&test_full, &test_restricted),
        j,
        loss_kind,
        seed,
    )
}

/// Data-splitting LOCO on caller-supplied `(full, restricted)` halves.
pub fn loco_w_on_halves(
    full_spec: &LearnerSpec,
    train: (&Dataset, &Dataset),
    test: (&Dataset, &Dataset),
    j: usize,
    loss_kind: LossKind,
    seed: RngSeed,
) -> Result<ImportanceScore> {
    let p = train.0.p();
    if [train.1.p(), test.0.p(), test.1.p()]
        .iter()
        .any(|&q| q != p)
    {
        return Err(Error::invalid("all halves must have the same width"));
    }
    check_feature(j, p)?;
    let full = fit(
        full_spec,
        train.0.x(),
        train.0.y(),
        seed.derive(stream::LOCO_W_FULL),
    )?;
    let restricted = fit(
        full_spec,
        &drop_column(train.1.x(), j),
        train.1.y(),
        seed.derive(stream::LOCO_W_RESTRICTED),
    )?;
    let lf = loss(loss_kind, &full.predict_unchecked(test.0.x()), test.0.y())?;
    let lr = loss(
        loss_kind,
        &restricted.predict_unchecked(&drop_column(test.1.x(), j)),
        test.1.y(),
    )?;
    let mut s = ImportanceScore::new(
        j,
        EstimatorKind::LocoW,
        None,
        Summands::Split {
            restricted: lr,
            full: lf,
        },
        test.0,
        seed,
    )?;
    s.n_test = test.0.n() + test.1.n();
    let y_all: Vec<f64> = test.0.y().iter().chain(test.1.y()).copied().collect();
    s.response_sd = sample_variance(&y_all).sqrt();
    Ok(s)
}
