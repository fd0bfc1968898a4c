//! Test objectives, experiment execution and trace aggregation.

mod experiment;
mod objective;
mod summary;
mod trace;

pub use experiment::{run_all, run_experiment, run_with};
pub use objective::{Objective, ObjectiveKind};
pub use summary::{compare, quantile_sorted, summarize, Comparison, ComparisonRow, CurvePoint, Quartiles, Summary};
pub use trace::{read_csv, write_csv, write_jsonl, RunTrace, StopReason, TraceRecord, CSV_HEADER};
