use super::{CostReport, Metric};
use crate::planner::PipelineKind;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub query_id: String,
    pub prediction: String,
    pub gold: Vec<String>,
    pub metric: Metric,
    pub score: f64,
    pub cost: CostReport,
    pub pipeline: PipelineKind,
}

/// A record that could not be answered; excluded from score and cost means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchFailure {
    pub query_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineBreakdown {
    pub count: usize,
    pub score: f64,
    pub cost_k: f64,
}

/// Means over scored records: score on a 0-100 scale, weighted cost in
/// thousands of tokens, latencies in seconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub count: usize,
    pub empty: bool,
    pub failures: usize,
    pub score: f64,
    pub cost_k: f64,
    pub latency_secs: f64,
    pub context_processing_secs: f64,
    pub generation_secs: f64,
    pub llm_calls: f64,
    pub per_pipeline: BTreeMap<PipelineKind, PipelineBreakdown>,
}

impl fmt::Display for BenchSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "score {:.1} | cost {:.2}k | latency {:.3}s (context {:.3}s + generation {:.3}s) | n={} failed={}",
            self.score,
            self.cost_k,
            self.latency_secs,
            self.context_processing_secs,
            self.generation_secs,
            self.count,
            self.failures
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub mode: String,
    pub summary: BenchSummary,
    pub records: Vec<EvalRecord>,
    pub failed: Vec<BenchFailure>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn aggregate_report(records: &[EvalRecord], failures: usize) -> BenchSummary {
    if records.is_empty() {
        return BenchSummary {
            empty: true,
            failures,
            ..BenchSummary::default()
        };
    }
    let mut per_pipeline: BTreeMap<PipelineKind, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        per_pipeline.entry(r.pipeline).or_default().push(r);
    }
    BenchSummary {
        count: records.len(),
        empty: false,
        failures,
        score: mean(records.iter().map(|r| r.score)) * 100.0,
        cost_k: mean(records.iter().map(|r| r.cost.weighted_cost as f64)) / 1000.0,
        latency_secs: mean(records.iter().map(|r| r.cost.per_stage_latency.total().as_secs_f64())),
        context_processing_secs: mean(
            records
                .iter()
                .map(|r| r.cost.per_stage_latency.context_processing().as_secs_f64()),
        ),
        generation_secs: mean(
            records
                .iter()
                .map(|r| r.cost.per_stage_latency.generation.as_secs_f64()),
        ),
        llm_calls: mean(records.iter().map(|r| r.cost.num_llm_calls as f64)),
        per_pipeline: per_pipeline
            .into_iter()
            .map(|(k, rs)| {
                (
                    k,
                    PipelineBreakdown {
                        count: rs.len(),
                        score: mean(rs.iter().map(|r| r.score)) * 100.0,
                        cost_k: mean(rs.iter().map(|r| r.cost.weighted_cost as f64)) / 1000.0,
                    },
                )
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(score: f64, cost: u64, pipeline: PipelineKind) -> EvalRecord {
        EvalRecord {
            query_id: "q".into(),
            prediction: String::new(),
            gold: vec![],
            metric: Metric::F1,
            score,
            cost: CostReport {
                weighted_cost: cost,
                ..CostReport::default()
            },
            pipeline,
        }
    }

    #[test]
    fn means_are_scaled() {
        let s = aggregate_report(
            &[
                rec(0.5, 1400, PipelineKind::Direct),
                rec(1.0, 600, PipelineKind::StepWise),
            ],
            0,
        );
        assert!((s.score - 75.0).abs() < 1e-9);
        assert!((s.cost_k - 1.0).abs() < 1e-9);
        assert_eq!(s.per_pipeline[&PipelineKind::StepWise].count, 1);
        assert!(s.to_string().starts_with("score 75.0 | cost 1.00k"));
    }

    #[test]
    fn empty_input_is_flagged() {
        let s = aggregate_report(&[], 2);
        assert!(s.empty);
        assert_eq!((s.count, s.failures, s.score), (0, 2, 0.0));
    }
}
