//! Scenario files, replication driver, metrics and reports.

pub mod experiment;
pub mod metrics;
pub mod report;
pub mod scenario;

pub use experiment::{run_experiment, run_replication, score, Aggregate, ExperimentReport, ReplicationResult};
pub use metrics::{compute_metrics, ArrivalMetrics};
pub use report::{emit_report, format_table, trajectory, Format};
pub use scenario::{load_scenario, parse_scenario, Scenario, ScenarioError};
