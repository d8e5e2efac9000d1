//! Experiment configuration, orchestration and result files.

mod config;
mod metrics;
pub mod oracle;
mod run;

pub use config::{parse_config, task_env, ExperimentConfig, Method, DEFAULT_N};
pub use metrics::{
    aggregate, aggregate_files, compare, mean_std, read_metrics, render_table, write_aggregate, AggregateRow,
    ComparisonRow, MetricsRow, MetricsWriter, AGGREGATE_HEADER, METRICS_HEADER,
};
pub use run::{eval_rng, evaluate_snapshot, output_root, run, run_in, run_seed, RunOutput, SeedOutput, OUTPUT_ENV};
