//! Metrics, reports and experiment protocols.

pub mod metrics;
pub mod protocols;

pub use metrics::{evaluate_predictions, EvalReport, MetricsRecord, Prediction, ReportKind, SampleOutcome};
pub use protocols::{cross_city, evaluate, evaluate_part, run_ablations, run_variants, transfer, AblationTable, CrossCityRow};
