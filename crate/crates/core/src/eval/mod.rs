//! Cost accounting, answer scoring and benchmark aggregation.

mod cost;
mod metrics;
mod report;

pub use cost::{weighted_cost, CostReport, StageLatencies, OUTPUT_TOKEN_WEIGHT};
pub use metrics::{em_score, f1_score, normalize_answer, parse_leading_number, Metric};
pub use report::{aggregate_report, BenchFailure, BenchReport, BenchSummary, EvalRecord, PipelineBreakdown};
