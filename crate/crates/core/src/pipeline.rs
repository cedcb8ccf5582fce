//! Fits the shared models once and runs a list of estimators over a set of
//! features. Used by the CLI and the benchmark runner.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{split, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::estimators::{
    cpi, loco, loco_w, pfi, sobol_cpi, EstimatorKind, ImportanceScore, LossKind,
};
use crate::learners::{fit_columns, FittedModel, LearnerSpec};
use crate::rng::RngSeed;
use crate::sampler::{fit_sampler, ResidualScheme};

mod stream {
    pub const MODEL: u64 = 1;
    pub const SAMPLER: u64 = 2;
    pub const ESTIMATE: u64 = 3;
    pub const RESTRICTED: u64 = 4;
    pub const HALVES: u64 = 5;
    pub const HALF_MODEL: u64 = 6;
}

/// One estimator entry; `n_cal` only applies to Sobol-CPI and defaults to 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_cal: Option<usize>,
}

impl EstimatorConfig {
    pub fn new(kind: EstimatorKind) -> Self {
        EstimatorConfig { kind, n_cal: None }
    }

    pub fn sobol_cpi(n_cal: usize) -> Self {
        EstimatorConfig {
            kind: EstimatorKind::SobolCpi,
            n_cal: Some(n_cal),
        }
    }

    pub fn resolved_n_cal(&self) -> Option<usize> {
        match self.kind {
            EstimatorKind::SobolCpi => Some(self.n_cal.unwrap_or(1)),
            EstimatorKind::Cpi => Some(1),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.n_cal) {
            (EstimatorKind::SobolCpi, Some(0)) => Err(Error::invalid("n_cal must be >= 1")),
            (EstimatorKind::SobolCpi, _) | (_, None) => Ok(()),
            (k, Some(_)) => Err(Error::invalid(format!(
                "n_cal does not apply to estimator {k}"
            ))),
        }
    }
}

impl fmt::Display for EstimatorConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            EstimatorKind::SobolCpi => write!(f, "sobol_cpi({})", self.n_cal.unwrap_or(1)),
            k => write!(f, "{k}"),
        }
    }
}

fn ols() -> LearnerSpec {
    LearnerSpec::Ols
}

/// Learners and loss shared by every estimator of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    /// Full model `m`.
    #[serde(default = "ols")]
    pub model: LearnerSpec,
    /// Restricted model for LOCO; defaults to `model`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restricted: Option<LearnerSpec>,
    /// Conditional-mean regression of the sampler.
    #[serde(default = "ols")]
    pub sampler: LearnerSpec,
    #[serde(default)]
    pub residual_scheme: ResidualScheme,
    /// Fit the sampler-based estimators' model and sampler on disjoint halves of the training set.
    #[serde(default)]
    pub split_sampler_training: bool,
    #[serde(default)]
    pub loss: LossKind,
    /// Columns the full model is trained without; it ignores them at prediction time.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub model_excludes: Vec<usize>,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            model: LearnerSpec::Ols,
            restricted: None,
            sampler: LearnerSpec::Ols,
            residual_scheme: ResidualScheme::default(),
            split_sampler_training: false,
            loss: LossKind::default(),
            model_excludes: Vec::new(),
        }
    }
}

impl LearnerConfig {
    pub fn restricted_spec(&self) -> &LearnerSpec {
        self.restricted.as_ref().unwrap_or(&self.model)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.restricted_spec().validate()?;
        self.sampler.validate()
    }
}

/// Scores of every `(estimator, feature)` pair, ordered by estimator then feature.
///
/// All estimators of feature `j` share one seed, so CPI and Sobol-CPI see
/// identical conditional draws.
pub fn estimate_features(
    train: &Dataset,
    test: &Dataset,
    learners: &LearnerConfig,
    estimators: &[EstimatorConfig],
    features: &[usize],
    seed: RngSeed,
) -> Result<Vec<ImportanceScore>> {
    learners.validate()?;
    for e in estimators {
        e.validate()?;
    }
    if train.p() != test.p() {
        return Err(Error::invalid("train and test sets have different widths"));
    }
    let p = train.p();
    if let Some(&j) = features.iter().find(|&&j| j >= p) {
        return Err(Error::invalid(format!(
            "feature index {j} out of range for p = {p}"
        )));
    }
    let kinds: Vec<EstimatorKind> = estimators.iter().map(|e| e.kind).collect();
    let needs_full = kinds
        .iter()
        .any(|k| matches!(k, EstimatorKind::Pfi | EstimatorKind::Loco))
        || (!learners.split_sampler_training && kinds.iter().any(|k| k.uses_sampler()));
    let full: Option<FittedModel> = if needs_full {
        Some(fit_columns(
            &learners.model,
            train.x(),
            train.y(),
            &learners.model_excludes,
            seed.derive(stream::MODEL),
        )?)
    } else {
        None
    };

    let uses_sampler = kinds.iter().any(|k| k.uses_sampler());
    let (sampler_model, sampler_train): (Option<FittedModel>, Option<Dataset>) =
        if uses_sampler && learners.split_sampler_training {
            let (a, b) = split(train, &SplitSpec::new(0.5, seed.derive(stream::HALVES)))?;
            let m = fit_columns(
                &learners.model,
                a.x(),
                a.y(),
                &learners.model_excludes,
                seed.derive(stream::HALF_MODEL),
            )?;
            (Some(m), Some(b))
        } else {
            (None, None)
        };
    let sampler_model = sampler_model.as_ref().or(full.as_ref());
    let sampler_data = sampler_train.as_ref().unwrap_or(train);

    let mut by_estimator: Vec<Vec<ImportanceScore>> =
        vec![Vec::with_capacity(features.len()); estimators.len()];
    for &j in features {
        let s = seed.derive(stream::ESTIMATE).derive(j as u64);
        let sampler = if uses_sampler {
            Some(
                fit_sampler(
                    sampler_data.x(),
                    j,
                    &learners.sampler,
                    seed.derive(stream::SAMPLER).derive(j as u64),
                )?
                .with_scheme(learners.residual_scheme),
            )
        } else {
            None
        };
        for (e, slot) in estimators.iter().zip(by_estimator.iter_mut()) {
            let score = match e.kind {
                EstimatorKind::Pfi => pfi(
                    full.as_ref().expect("full model"),
                    test,
                    j,
                    learners.loss,
                    s,
                )?,
                EstimatorKind::Cpi => cpi(
                    sampler_model.expect("model"),
                    sampler.as_ref().expect("sampler"),
                    test,
                    learners.loss,
                    s,
                )?,
                EstimatorKind::SobolCpi => sobol_cpi(
                    sampler_model.expect("model"),
                    sampler.as_ref().expect("sampler"),
                    test,
                    e.n_cal.unwrap_or(1),
                    learners.loss,
                    s,
                )?,
                EstimatorKind::Loco => loco(
                    full.as_ref().expect("full model"),
                    learners.restricted_spec(),
                    train,
                    test,
                    j,
                    learners.loss,
                    seed.derive(stream::RESTRICTED).derive(j as u64),
                )?,
                EstimatorKind::LocoW => loco_w(&learners.model, train, test, j, learners.loss, s)?,
            };
            slot.push(score);
        }
    }
    Ok(by_estimator.into_iter().flatten().collect())
}
