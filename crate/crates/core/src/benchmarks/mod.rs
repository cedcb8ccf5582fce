//! Synthetic benchmarks with known ground truth, oracles, metrics and the
//! repeated-experiment runner.

pub mod experiment;
pub mod generators;
pub mod metrics;
pub mod oracle;

pub use experiment::{
    run_experiment, BenchmarkReport, ExperimentConfig, InferenceConfig, ReportRow, SummaryRow,
    SweepConfig,
};
pub use generators::{
    gen_linear, gen_nonlinear, gen_polynomial, nonlinear_m, nonlinear_tsi, BetaSpec, GeneratorId,
    GeneratorSpec, GroundTruth, Monomial, NoiseSpec,
};
pub use metrics::{median, metric_auc, rate};
pub use oracle::{tsi_oracle_montecarlo, OracleSize};
