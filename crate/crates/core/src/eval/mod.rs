//! Perplexity and next-tag accuracy, seed statistics and the experiment harness.

mod harness;
mod metrics;
pub mod stats;

pub use harness::{
    dataset_size_sweep, oracle_curve, run_comparison, AggregateRow, CellResult, CellStatus,
    ExperimentMatrix, ExperimentSpec, OracleCurve, OraclePoint, SweepRow, Variant,
};
pub use metrics::{
    check_compatible, evaluate_plan, perplexity, tag_accuracy, EvalConfig, EvalReport,
};
