//! Library behind the `dal` binary: run configuration, metrics files and the
//! `generate`, `train`, `eval`, `inspect` and `report` subcommands.

pub mod commands;
pub mod config;
pub mod metrics;

pub use commands::{cmd_eval, cmd_generate, cmd_inspect, cmd_report, cmd_train, Inspection, TrainSummary};
pub use config::{Precision, RunConfig};
pub use metrics::{read_metrics, MetricsRow, METRICS_HEADER};
