//! Reproducible experiment runs: config, training loop, metrics,
//! checkpoints and cross-run reports.
//!
//! Every random draw of a run derives from the master seed through
//! [`crate::seeds`], one stream per consumer and epoch, so a config run
//! twice produces identical metrics (apart from wall time) and identical
//! checkpoints.

pub mod checkpoint;
pub mod config;
pub mod report;
pub mod runner;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{parse_config, parse_config_str, DatasetSource, DatasetSpec, Density, ExperimentConfig};
pub use report::{compare_report, subsample_experiment, ComparisonReport, SubsampleGrid, DEFAULT_THRESHOLD};
pub use runner::{read_metrics, run, EpochMetrics, MetricsLog, RunSummary, Trainer};
