//! Seeded experiment runner, metrics and the studies built on them.

pub mod config;
pub mod metrics;
pub mod runner;
pub mod studies;

pub use config::{AlgorithmId, ExperimentConfig, ReplanSchedule};
pub use metrics::{exp_smooth, mean_and_se, wasserstein_1d};
pub use runner::{run_experiment, CsvRow, ExperimentResult, RunLog, SmoothedCurve};
