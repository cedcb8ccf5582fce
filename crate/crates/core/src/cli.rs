//! Command-line front end. Every subcommand reads one TOML config, applies
//! `--set` overrides and `--seed`, and writes its outputs under `--out`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::benchmarks::{
    run_experiment, tsi_oracle_montecarlo, ExperimentConfig, GeneratorSpec, OracleSize,
};
use crate::data::{format_float, split, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::estimators::ImportanceScore;
use crate::inference::{test_importance, write_results_csv, CorrectionSpec, VarianceSpec};
use crate::pipeline::{estimate_features, EstimatorConfig, LearnerConfig};
use crate::rng::RngSeed;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "sobolcpi",
    version,
    about = "Conditional variable importance with Sobol-CPI, CPI, PFI and LOCO"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic dataset and its ground truth.
    Generate(CommonArgs),
    /// Score feature importance on a dataset.
    Estimate(CommonArgs),
    /// Test importance scores against the conditional null.
    Test(CommonArgs),
    /// Run a repeated benchmark sweep.
    Benchmark(CommonArgs),
    /// Monte-Carlo total Sobol indices of a generator.
    Oracle(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Master seed, overriding `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override a config value, e.g. `--set generator.rho=0.3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads for repetitions; defaults to the number of logical CPUs.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Only log errors.
    #[arg(long)]
    pub quiet: bool,
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Command::Generate(a)
            | Command::Estimate(a)
            | Command::Test(a)
            | Command::Benchmark(a)
            | Command::Oracle(a) => a,
        }
    }
}

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = if cli.command.args().quiet {
        "error"
    } else {
        "info"
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .try_init();
    match dispatch(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn dispatch(cmd: &Command) -> Result<()> {
    let args = cmd.args();
    let value = load_config(args)?;
    fs::create_dir_all(&args.out)?;
    match cmd {
        Command::Generate(_) => cmd_generate(&value, args),
        Command::Estimate(_) => cmd_estimate(&value, args),
        Command::Test(_) => cmd_test(&value, args),
        Command::Benchmark(_) => cmd_benchmark(&value, args),
        Command::Oracle(_) => cmd_oracle(&value, args),
    }
}

/// Reads the config, applies `--set` overrides and the `--seed` flag.
pub fn load_config(args: &CommonArgs) -> Result<toml::Table> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", args.config.display())))?;
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    for o in &args.overrides {
        apply_override(&mut table, o)?;
    }
    if let Some(s) = args.seed {
        table.insert("seed".into(), toml::Value::Integer(s as i64));
    }
    Ok(table)
}

/// Sets a dotted `key=value` path; the value is parsed as TOML, falling back to a string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form key=value")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("invalid override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_section<T: DeserializeOwned>(table: &toml::Table) -> Result<T> {
    toml::Value::Table(table.clone())
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

fn resolved_comment(table: &toml::Table) -> String {
    format!("config\n{}", toml::to_string(table).unwrap_or_default())
}

#[derive(Debug, Deserialize)]
struct GenerateConfig {
    generator: GeneratorSpec,
    n: usize,
    #[serde(default)]
    seed: RngSeed,
}

#[derive(Serialize)]
struct TruthFile<'a> {
    seed: RngSeed,
    config: &'a toml::Table,
    truth: &'a crate::benchmarks::GroundTruth,
}

fn cmd_generate(table: &toml::Table, args: &CommonArgs) -> Result<()> {
    let cfg: GenerateConfig = parse_section(table)?;
    let (ds, truth) = cfg.generator.generate(cfg.n, cfg.seed)?;
    ds.write_csv(args.out.join("data.csv"), Some(&resolved_comment(table)))?;
    write_json(
        &args.out.join("truth.json"),
        &TruthFile {
            seed: cfg.seed,
            config: table,
            truth: &truth,
        },
    )?;
    log::info!(
        "wrote {} rows x {} features to {}",
        ds.n(),
        ds.p(),
        args.out.display()
    );
    Ok(())
}

fn default_train_fraction() -> f64 {
    0.8
}

#[derive(Debug, Deserialize)]
struct EstimateConfig {
    data: PathBuf,
    #[serde(default = "default_train_fraction")]
    train_fraction: f64,
    #[serde(default)]
    seed: RngSeed,
    #[serde(default)]
    learners: LearnerConfig,
    estimators: Vec<EstimatorConfig>,
    #[serde(default)]
    features: Option<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct ImportanceFile {
    seed: RngSeed,
    config: toml::Table,
    scores: Vec<ImportanceScore>,
}

/// Paths in the config are relative to the config file's directory.
fn resolve(args: &CommonArgs, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        args.config
            .parent()
            .map(|d| d.join(p))
            .unwrap_or_else(|| p.to_path_buf())
    }
}

fn cmd_estimate(table: &toml::Table, args: &CommonArgs) -> Result<()> {
    let cfg: EstimateConfig = parse_section(table)?;
    if cfg.estimators.is_empty() {
        return Err(Error::Config("at least one estimator is required".into()));
    }
    let ds = Dataset::read_csv(resolve(args, &cfg.data))?;
    let (train, test) = split(&ds, &SplitSpec::new(cfg.train_fraction, cfg.seed.derive(1)))?;
    let features = cfg
        .features
        .clone()
        .unwrap_or_else(|| (0..ds.p()).collect());
    let scores = estimate_features(
        &train,
        &test,
        &cfg.learners,
        &cfg.estimators,
        &features,
        cfg.seed.derive(2),
    )?;

    let comment = resolved_comment(table);
    let f = fs::File::create(args.out.join("importance.csv"))?;
    let mut w = std::io::BufWriter::new(f);
    for line in comment.lines() {
        use std::io::Write;
        writeln!(w, "# {line}")?;
    }
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "feature",
        "name",
        "estimator",
        "n_cal",
        "estimate",
        "n_test",
        "seed",
    ])?;
    for (s, e) in scores.iter().zip(
        cfg.estimators
            .iter()
            .flat_map(|e| std::iter::repeat_n(e, features.len())),
    ) {
        wr.write_record([
            s.feature.to_string(),
            ds.feature_name(s.feature),
            e.to_string(),
            s.n_cal.map(|c| c.to_string()).unwrap_or_default(),
            format_float(s.estimate),
            s.n_test.to_string(),
            s.seed.to_string(),
        ])?;
    }
    wr.flush()?;
    write_json(
        &args.out.join("importance.json"),
        &ImportanceFile {
            seed: cfg.seed,
            config: table.clone(),
            scores,
        },
    )?;
    log::info!(
        "scored {} features with {} estimators",
        features.len(),
        cfg.estimators.len()
    );
    Ok(())
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Deserialize)]
struct TestConfig {
    #[serde(default)]
    importance: Option<PathBuf>,
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default)]
    variance: VarianceSpec,
    #[serde(default)]
    correction: CorrectionSpec,
    /// Effective sample size of the correction term; `n_test` when absent.
    #[serde(default)]
    n: Option<usize>,
    #[serde(default)]
    seed: RngSeed,
}

fn cmd_test(table: &toml::Table, args: &CommonArgs) -> Result<()> {
    let cfg: TestConfig = parse_section(table)?;
    let path = match &cfg.importance {
        Some(p) => resolve(args, p),
        None => args.out.join("importance.json"),
    };
    let text = fs::read_to_string(&path).map_err(|e| {
        Error::Config(format!(
            "importance scores with per-sample summands are required at {}: {e}",
            path.display()
        ))
    })?;
    let file: ImportanceFile = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut results = file
        .scores
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let n = cfg.n.unwrap_or(s.n_test);
            test_importance(
                s,
                &cfg.variance,
                &cfg.correction,
                cfg.alpha,
                n,
                cfg.seed.derive(k as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    results.sort_by_key(|t| t.feature);
    let f = std::io::BufWriter::new(fs::File::create(args.out.join("tests.csv"))?);
    write_results_csv(&results, f, Some(&resolved_comment(table)))?;
    let rejected = results.iter().filter(|r| r.reject).count();
    log::info!("{rejected} of {} nulls rejected", results.len());
    Ok(())
}

fn cmd_benchmark(table: &toml::Table, args: &CommonArgs) -> Result<()> {
    let cfg: ExperimentConfig = parse_section(table)?;
    let report = run_experiment(&cfg, args.workers)?;
    report.write_csv(args.out.join("report.csv"))?;
    report.write_summary_json(args.out.join("summary.json"))?;
    for f in &report.failures {
        log::warn!(
            "repetition {} at n = {}, rho = {} failed: {}",
            f.repetition,
            f.n,
            f.rho,
            f.message
        );
    }
    println!("{}", report.digest());
    Ok(())
}

#[derive(Debug, Deserialize)]
struct OracleConfig {
    generator: GeneratorSpec,
    #[serde(default)]
    features: Option<Vec<usize>>,
    #[serde(default)]
    oracle: OracleSize,
    #[serde(default)]
    seed: RngSeed,
}

#[derive(Serialize)]
struct OracleEntry {
    feature: usize,
    tsi_montecarlo: f64,
    tsi_reference: Option<f64>,
}

fn cmd_oracle(table: &toml::Table, args: &CommonArgs) -> Result<()> {
    let cfg: OracleConfig = parse_section(table)?;
    cfg.generator.validate()?;
    let p = cfg.generator.p();
    // A one-row draw fixes the regression function and its reference indices.
    let (_, truth) = cfg.generator.generate(1, cfg.seed)?;
    let cov = crate::data::toeplitz_covariance(p, cfg.generator.rho())?;
    let m = regression_function(&cfg.generator, &truth);
    let features = cfg.features.clone().unwrap_or_else(|| (0..p).collect());
    let mut out = Vec::new();
    for &j in &features {
        if j >= p {
            return Err(Error::invalid(format!(
                "feature {j} out of range for p = {p}"
            )));
        }
        let v = tsi_oracle_montecarlo(
            &*m,
            &cov,
            j,
            cfg.oracle.n_outer,
            cfg.oracle.n_inner,
            cfg.seed.derive(j as u64),
        )?;
        out.push(OracleEntry {
            feature: j,
            tsi_montecarlo: v,
            tsi_reference: truth.tsi[j],
        });
    }
    write_json(
        &args.out.join("oracle.json"),
        &serde_json::json!({ "seed": cfg.seed, "config": table, "oracle": out }),
    )?;
    Ok(())
}

type RegressionFn = Box<dyn Fn(&[f64]) -> f64>;

fn regression_function(g: &GeneratorSpec, truth: &crate::benchmarks::GroundTruth) -> RegressionFn {
    match g {
        GeneratorSpec::Linear { .. } => {
            let beta = truth.beta.clone().unwrap_or_default();
            Box::new(move |x: &[f64]| x.iter().zip(&beta).map(|(a, b)| a * b).sum())
        }
        GeneratorSpec::Nonlinear { .. } => Box::new(crate::benchmarks::nonlinear_m),
        GeneratorSpec::Polynomial { .. } => {
            let monos = truth.monomials.clone().unwrap_or_default();
            Box::new(move |x: &[f64]| monos.iter().map(|m| m.eval(x)).sum())
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = std::io::BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(f, value)?;
    Ok(())
}
