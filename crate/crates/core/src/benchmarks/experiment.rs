//! Repeated benchmark runs over sweeps of sample size, correlation and `n_cal`.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generators::GeneratorSpec;
use super::metrics::{auc_from_labels, rate};
use crate::data::{format_float, split, SplitSpec};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, ImportanceScore};
use crate::inference::{test_importance, CorrectionSpec, VarianceSpec};
use crate::pipeline::{estimate_features, EstimatorConfig, LearnerConfig};
use crate::rng::RngSeed;

mod stream {
    pub const GENERATE: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const ESTIMATE: u64 = 3;
    pub const BOOTSTRAP: u64 = 4;
}

fn default_alpha() -> f64 {
    0.05
}

fn default_repetitions() -> usize {
    1
}

fn default_train_fraction() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub variance: VarianceSpec,
    pub corrections: Vec<CorrectionSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Total sample sizes, split into train and test by `train_fraction`.
    pub n: Vec<usize>,
    /// Replaces the generator's `rho` when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
    /// Replaces `n_cal` of every Sobol-CPI entry when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_cal: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub learners: LearnerConfig,
    pub estimators: Vec<EstimatorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference: Option<InferenceConfig>,
    pub sweep: SweepConfig,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: RngSeed,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Features to score; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<usize>>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serialises")
    }

    pub fn rhos(&self) -> Vec<f64> {
        self.sweep
            .rho
            .clone()
            .unwrap_or_else(|| vec![self.generator.rho()])
    }

    /// Estimator list after applying the `n_cal` sweep.
    pub fn expanded_estimators(&self) -> Vec<EstimatorConfig> {
        let mut out = Vec::new();
        for e in &self.estimators {
            match (&self.sweep.n_cal, e.kind) {
                (Some(list), EstimatorKind::SobolCpi) => {
                    out.extend(list.iter().map(|&c| EstimatorConfig::sobol_cpi(c)))
                }
                _ => out.push(*e),
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        self.generator.validate()?;
        for rho in self.rhos() {
            self.generator.with_rho(rho).validate()?;
        }
        self.learners.validate()?;
        if self.estimators.is_empty() {
            return cfg("at least one estimator is required".into());
        }
        for e in self.expanded_estimators() {
            e.validate()?;
        }
        if self.sweep.n.is_empty() {
            return cfg("sweep.n must list at least one sample size".into());
        }
        if self.repetitions == 0 {
            return cfg("repetitions must be >= 1".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return cfg(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            ));
        }
        let p = self.generator.p();
        if let Some(f) = &self.features {
            if f.is_empty() {
                return cfg("features must not be empty".into());
            }
            if let Some(j) = f.iter().find(|&&j| j >= p) {
                return cfg(format!("feature {j} out of range for p = {p}"));
            }
        }
        if let Some(inf) = &self.inference {
            if !(inf.alpha > 0.0 && inf.alpha < 1.0) {
                return cfg(format!("alpha must lie in (0, 1), got {}", inf.alpha));
            }
            inf.variance.validate()?;
            for (i, c) in inf.corrections.iter().enumerate() {
                c.validate()?;
                if inf.corrections[..i].iter().any(|d| d.kind == c.kind) {
                    return cfg(format!("correction kind {} listed twice", c.kind.as_str()));
                }
            }
        }
        Ok(())
    }

    fn feature_list(&self) -> Vec<usize> {
        self.features
            .clone()
            .unwrap_or_else(|| (0..self.generator.p()).collect())
    }
}

/// Outcome of one correction for one score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub correction: String,
    pub p_value: f64,
    pub reject: bool,
}

/// One tidy row: repetition x feature x estimator at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub n: usize,
    pub rho: f64,
    pub repetition: usize,
    pub estimator: String,
    pub n_cal: Option<usize>,
    pub feature: usize,
    pub active: bool,
    pub truth: Option<f64>,
    pub estimate: f64,
    pub se: Option<f64>,
    pub tests: Vec<TestOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub n: usize,
    pub rho: f64,
    pub estimator: String,
    pub correction: Option<String>,
    pub repetitions_ok: usize,
    pub auc: Option<f64>,
    pub mean_bias_null: Option<f64>,
    pub mean_bias_active: Option<f64>,
    pub power: Option<f64>,
    pub type1: Option<f64>,
    pub wall_time_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepFailure {
    pub n: usize,
    pub rho: f64,
    pub repetition: usize,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: ExperimentConfig,
    pub rows: Vec<ReportRow>,
    pub summary: Vec<SummaryRow>,
    pub failures: Vec<RepFailure>,
    pub wall_time_seconds: f64,
}

struct Job {
    rho_idx: usize,
    n_idx: usize,
    rep: usize,
}

struct JobOutput {
    rows: Vec<ReportRow>,
    /// Seconds spent per estimator.
    times: Vec<f64>,
}

fn job_seed(master: RngSeed, job: &Job) -> RngSeed {
    master
        .derive(job.rep as u64)
        .derive(((job.rho_idx as u64) << 32) | job.n_idx as u64)
}

fn run_job(
    cfg: &ExperimentConfig,
    estimators: &[EstimatorConfig],
    job: &Job,
    rho: f64,
    n: usize,
) -> Result<JobOutput> {
    let seed = job_seed(cfg.seed, job);
    let gen = cfg.generator.with_rho(rho);
    let (ds, truth) = gen.generate(n, seed.derive(stream::GENERATE))?;
    let (train, test) = split(
        &ds,
        &SplitSpec::new(cfg.train_fraction, seed.derive(stream::SPLIT)),
    )?;
    let features = cfg.feature_list();
    let mut rows = Vec::new();
    let mut times = Vec::with_capacity(estimators.len());
    for e in estimators {
        let start = Instant::now();
        let scores = estimate_features(
            &train,
            &test,
            &cfg.learners,
            &[*e],
            &features,
            seed.derive(stream::ESTIMATE),
        )?;
        for s in &scores {
            rows.push(make_row(cfg, e, s, &truth, rho, n, job.rep)?);
        }
        times.push(start.elapsed().as_secs_f64());
    }
    Ok(JobOutput { rows, times })
}

fn make_row(
    cfg: &ExperimentConfig,
    e: &EstimatorConfig,
    s: &ImportanceScore,
    truth: &super::generators::GroundTruth,
    rho: f64,
    n: usize,
    rep: usize,
) -> Result<ReportRow> {
    let mut se = None;
    let mut tests = Vec::new();
    if let Some(inf) = &cfg.inference {
        let boot = s.seed.derive(stream::BOOTSTRAP);
        for c in &inf.corrections {
            let t = test_importance(s, &inf.variance, c, inf.alpha, s.n_test, boot)?;
            se = Some(t.se);
            tests.push(TestOutcome {
                correction: c.kind.as_str().to_string(),
                p_value: t.p_value,
                reject: t.reject,
            });
        }
    }
    Ok(ReportRow {
        n,
        rho,
        repetition: rep,
        estimator: e.to_string(),
        n_cal: e.resolved_n_cal(),
        feature: s.feature,
        active: truth.active_set[s.feature],
        truth: truth.tsi[s.feature],
        estimate: s.estimate,
        se,
        tests,
    })
}

/// Runs every repetition at every sweep point. Failed repetitions are
/// recorded and skipped; the run fails only when every repetition fails.
pub fn run_experiment(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let start = Instant::now();
    let rhos = cfg.rhos();
    let estimators = cfg.expanded_estimators();
    let mut jobs = Vec::new();
    for rho_idx in 0..rhos.len() {
        for n_idx in 0..cfg.sweep.n.len() {
            for rep in 0..cfg.repetitions {
                jobs.push(Job {
                    rho_idx,
                    n_idx,
                    rep,
                });
            }
        }
    }
    let run = |job: &Job| {
        let (rho, n) = (rhos[job.rho_idx], cfg.sweep.n[job.n_idx]);
        let out = run_job(cfg, &estimators, job, rho, n);
        if let Err(e) = &out {
            log::warn!("repetition {} at n = {n}, rho = {rho} failed: {e}", job.rep);
        }
        out
    };
    let outputs: Vec<Result<JobOutput>> = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| jobs.par_iter().map(run).collect()),
        None => jobs.par_iter().map(run).collect(),
    };

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut times = vec![vec![vec![0.0; estimators.len()]; cfg.sweep.n.len()]; rhos.len()];
    let mut ok_reps = vec![vec![0usize; cfg.sweep.n.len()]; rhos.len()];
    for (job, out) in jobs.iter().zip(outputs) {
        match out {
            Ok(o) => {
                for (t, add) in times[job.rho_idx][job.n_idx].iter_mut().zip(&o.times) {
                    *t += add;
                }
                ok_reps[job.rho_idx][job.n_idx] += 1;
                rows.extend(o.rows);
            }
            Err(e) => failures.push(RepFailure {
                n: cfg.sweep.n[job.n_idx],
                rho: rhos[job.rho_idx],
                repetition: job.rep,
                message: e.to_string(),
            }),
        }
    }
    if failures.len() == jobs.len() {
        return Err(Error::numerical(format!(
            "every repetition failed; first error: {}",
            failures[0].message
        )));
    }

    let mut summary = Vec::new();
    for (ri, &rho) in rhos.iter().enumerate() {
        for (ni, &n) in cfg.sweep.n.iter().enumerate() {
            for (ei, e) in estimators.iter().enumerate() {
                let label = e.to_string();
                let group: Vec<&ReportRow> = rows
                    .iter()
                    .filter(|r| r.n == n && r.rho == rho && r.estimator == label)
                    .collect();
                let base = summarise(&group, cfg.repetitions);
                let corrections: Vec<Option<String>> = match &cfg.inference {
                    Some(inf) if !inf.corrections.is_empty() => inf
                        .corrections
                        .iter()
                        .map(|c| Some(c.kind.as_str().to_string()))
                        .collect(),
                    _ => vec![None],
                };
                for (ci, corr) in corrections.into_iter().enumerate() {
                    let (power, type1) = if corr.is_some() {
                        (
                            rate(
                                group
                                    .iter()
                                    .filter(|r| r.active)
                                    .map(|r| r.tests[ci].reject),
                            ),
                            rate(
                                group
                                    .iter()
                                    .filter(|r| !r.active)
                                    .map(|r| r.tests[ci].reject),
                            ),
                        )
                    } else {
                        (None, None)
                    };
                    summary.push(SummaryRow {
                        n,
                        rho,
                        estimator: label.clone(),
                        correction: corr,
                        repetitions_ok: ok_reps[ri][ni],
                        auc: base.0,
                        mean_bias_null: base.1,
                        mean_bias_active: base.2,
                        power,
                        type1,
                        wall_time_seconds: times[ri][ni][ei],
                    });
                }
            }
        }
    }
    Ok(BenchmarkReport {
        config: cfg.clone(),
        rows,
        summary,
        failures,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

fn mean_of(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut k) = (0.0, 0usize);
    for x in v {
        s += x;
        k += 1;
    }
    (k > 0).then(|| s / k as f64)
}

/// Mean per-repetition AUC, mean null bias and mean active bias of a group.
fn summarise(group: &[&ReportRow], reps: usize) -> (Option<f64>, Option<f64>, Option<f64>) {
    let mut aucs = Vec::new();
    for rep in 0..reps {
        let rows: Vec<&&ReportRow> = group.iter().filter(|r| r.repetition == rep).collect();
        let est: Vec<f64> = rows.iter().map(|r| r.estimate).collect();
        let act: Vec<bool> = rows.iter().map(|r| r.active).collect();
        if let Ok(a) = auc_from_labels(&est, &act) {
            aucs.push(a);
        }
    }
    let auc = mean_of(aucs.into_iter());
    let null = mean_of(
        group
            .iter()
            .filter(|r| !r.active)
            .filter_map(|r| r.truth.map(|t| r.estimate - t)),
    );
    let act = mean_of(
        group
            .iter()
            .filter(|r| r.active)
            .filter_map(|r| r.truth.map(|t| r.estimate - t)),
    );
    (auc, null, act)
}

fn opt(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

impl BenchmarkReport {
    fn correction_labels(&self) -> Vec<String> {
        self.config
            .inference
            .as_ref()
            .map(|inf| {
                inf.corrections
                    .iter()
                    .map(|c| c.kind.as_str().to_string())
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Header comment embedding the resolved config and master seed.
    pub fn header_comment(&self) -> String {
        format!(
            "master seed {}\n{}",
            self.config.seed,
            self.config.to_toml()
        )
    }

    /// Tidy CSV, one row per repetition x feature x estimator.
    pub fn write_csv_to<W: Write>(&self, mut w: W) -> Result<()> {
        for line in self.header_comment().lines() {
            writeln!(w, "# {line}")?;
        }
        let labels = self.correction_labels();
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = [
            "n",
            "rho",
            "repetition",
            "estimator",
            "n_cal",
            "feature",
            "active",
            "truth",
            "estimate",
            "se",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for l in &labels {
            header.push(format!("p_value_{l}"));
            header.push(format!("reject_{l}"));
        }
        wr.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.n.to_string(),
                format_float(r.rho),
                r.repetition.to_string(),
                r.estimator.clone(),
                r.n_cal.map(|c| c.to_string()).unwrap_or_default(),
                r.feature.to_string(),
                r.active.to_string(),
                opt(r.truth),
                format_float(r.estimate),
                opt(r.se),
            ];
            for t in &r.tests {
                rec.push(format_float(t.p_value));
                rec.push(t.reject.to_string());
            }
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    /// JSON summary: config, master seed, aggregated metrics and failures.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "config": self.config,
            "seed": self.config.seed,
            "summary": self.summary,
            "failures": self.failures,
            "wall_time_seconds": self.wall_time_seconds,
        })
    }

    pub fn write_summary_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, &self.summary_json())?;
        Ok(())
    }

    /// One-line digest of the summary.
    pub fn digest(&self) -> String {
        let parts: Vec<String> = self
            .summary
            .iter()
            .map(|s| {
                let mut p = format!("n={} rho={} {}", s.n, format_float(s.rho), s.estimator);
                if let Some(c) = &s.correction {
                    p.push_str(&format!("[{c}]"));
                }
                if let Some(a) = s.auc {
                    p.push_str(&format!(" auc={a:.3}"));
                }
                if let Some(b) = s.mean_bias_null {
                    p.push_str(&format!(" bias0={b:.4}"));
                }
                if let (Some(pw), Some(t1)) = (s.power, s.type1) {
                    p.push_str(&format!(" power={pw:.3} type1={t1:.3}"));
                }
                p
            })
            .collect();
        format!(
            "{} rows, {} failures; {}",
            self.rows.len(),
            self.failures.len(),
            parts.join("; ")
        )
    }
}
