//! Experiment orchestration: run configs, the runner that executes
//! them, post-training evaluation statistics, and training-curve
//! charts.

pub mod config;
pub mod plot;
pub mod runner;
pub mod stats;

pub use config::{
    needs_reference_stats, AlgorithmConfig, EvaluatorSpec, RunConfig, TargetConfig,
};
pub use plot::{median_smooth, read_trace_series, render_chart, write_chart, Series};
pub use runner::{
    run_algorithm, run_experiment, run_experiment_in_proc, BackendProvider, InProcProvider,
    ResultRow, RunArtifacts, TcpProvider,
};
pub use stats::{
    compare_reports, evaluate_params, mann_whitney_u, mean_std, Comparison, EvalReport, UTest,
};
