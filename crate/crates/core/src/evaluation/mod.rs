//! Metrics, throughput measurement and the parameter ablation harness.

mod ablate;
mod bench;
pub mod experiment;
mod metrics;

pub use ablate::{ablate, ablation_csv, ablation_table, reported_acc, trend_holds, with_param, write_ablation_csv, AblationParam, AblationRow};
pub use bench::{bench, hardware_descriptor, BenchReport};
pub use metrics::{confusion, MetricsReport, Rate};
