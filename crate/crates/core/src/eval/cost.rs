use crate::gateway::ChatExchange;
use serde::{Deserialize, Serialize};
use std::time::Duration;

/// Output tokens cost this many input tokens.
pub const OUTPUT_TOKEN_WEIGHT: u64 = 4;

/// Wall-clock time per stage of one query.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageLatencies {
    #[serde(with = "crate::util::serde_secs")]
    pub analysis: Duration,
    #[serde(with = "crate::util::serde_secs")]
    pub indexing: Duration,
    #[serde(with = "crate::util::serde_secs")]
    pub retrieval: Duration,
    #[serde(with = "crate::util::serde_secs")]
    pub generation: Duration,
}

impl StageLatencies {
    /// Everything except generation.
    pub fn context_processing(&self) -> Duration {
        self.analysis + self.indexing + self.retrieval
    }

    pub fn total(&self) -> Duration {
        self.context_processing() + self.generation
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub weighted_cost: u64,
    pub per_stage_latency: StageLatencies,
    pub num_llm_calls: usize,
}

impl CostReport {
    pub fn with_latency(mut self, latency: StageLatencies) -> Self {
        self.per_stage_latency = latency;
        self
    }
}

/// Sums usage over `exchanges` and weights output tokens by
/// [`OUTPUT_TOKEN_WEIGHT`].
pub fn weighted_cost<'a>(exchanges: impl IntoIterator<Item = &'a ChatExchange>) -> CostReport {
    let mut report = CostReport::default();
    for ex in exchanges {
        report.input_tokens += ex.prompt_tokens;
        report.output_tokens += ex.completion_tokens;
        report.num_llm_calls += 1;
    }
    report.weighted_cost = report.input_tokens + OUTPUT_TOKEN_WEIGHT * report.output_tokens;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ex(p: u64, c: u64) -> ChatExchange {
        ChatExchange {
            request_messages: vec![],
            response_text: String::new(),
            prompt_tokens: p,
            completion_tokens: c,
            latency: Duration::ZERO,
            backend_id: "t".into(),
            usage_reported: true,
            default_used: false,
        }
    }

    #[test]
    fn fixtures() {
        assert_eq!(weighted_cost(&[ex(1000, 100)]).weighted_cost, 1400);
        assert_eq!(weighted_cost(&[]).weighted_cost, 0);
        let three = weighted_cost(&[ex(100, 10), ex(100, 10), ex(100, 10)]);
        assert_eq!((three.weighted_cost, three.num_llm_calls), (420, 3));
    }

    proptest! {
        #[test]
        fn cost_is_additive(a in proptest::collection::vec((0u64..10_000, 0u64..2_000), 0..8),
                            b in proptest::collection::vec((0u64..10_000, 0u64..2_000), 0..8)) {
            let ea: Vec<_> = a.iter().map(|&(p, c)| ex(p, c)).collect();
            let eb: Vec<_> = b.iter().map(|&(p, c)| ex(p, c)).collect();
            let joint = weighted_cost(ea.iter().chain(&eb)).weighted_cost;
            prop_assert_eq!(joint, weighted_cost(&ea).weighted_cost + weighted_cost(&eb).weighted_cost);
        }
    }
}
