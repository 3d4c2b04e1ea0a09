//! Query entry point: analysis, planning and execution, or one of the two
//! fixed baselines.

use crate::analyzer::{analyze, AnalysisConfig, AnalyzerBackend, TaskAnalysis};
use crate::executor::{AnalysisTrace, ExecError, Executor, QueryResult};
use crate::planner::{
    make_plan, validate_plan, ExecutionPlan, GenerationPolicy, PipelineKind, PlannerOptions, RuntimeEnv,
};
use crate::retrieval::{FusionWeights, RetrievalConfig, DEFAULT_FUSION_POOL};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Analyze, plan, execute.
    #[default]
    Okra,
    /// Fixed chunking and dense top-k retrieval, one generation call.
    StdRag,
    /// The whole corpus (or its top dense chunks) in one prompt.
    LongContext,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Okra => "okra",
            Mode::StdRag => "std-rag",
            Mode::LongContext => "long-context",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown mode `{0}` (expected okra, std-rag or long-context)")]
pub struct UnknownMode(pub String);

impl FromStr for Mode {
    type Err = UnknownMode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "okra" => Ok(Mode::Okra),
            "std-rag" => Ok(Mode::StdRag),
            "long-context" => Ok(Mode::LongContext),
            _ => Err(UnknownMode(s.to_string())),
        }
    }
}

pub const STD_RAG_GRANULARITY: usize = 512;
pub const STD_RAG_TOP_K: usize = 5;

/// The standard-RAG baseline plan: 512-token chunks, dense top-5.
pub fn std_rag_plan(precise_mode: bool) -> ExecutionPlan {
    ExecutionPlan {
        pipeline: PipelineKind::Direct,
        retrieval: RetrievalConfig {
            granularity: STD_RAG_GRANULARITY,
            top_k: STD_RAG_TOP_K,
            weights: FusionWeights::new(0.0, 1.0).expect("valid"),
            threshold: 0.0,
            fusion_pool: DEFAULT_FUSION_POOL,
        },
        generation: GenerationPolicy {
            precise_mode,
            ..GenerationPolicy::default()
        },
        analysis: None,
    }
}

pub struct OkraEngine {
    executor: Executor,
    analyzer: Arc<dyn AnalyzerBackend>,
    analysis: AnalysisConfig,
    planner: PlannerOptions,
    env: RuntimeEnv,
    mode: Mode,
}

impl OkraEngine {
    pub fn new(executor: Executor, analyzer: Arc<dyn AnalyzerBackend>) -> Self {
        Self {
            executor,
            analyzer,
            analysis: AnalysisConfig::default(),
            planner: PlannerOptions::default(),
            env: RuntimeEnv::default(),
            mode: Mode::Okra,
        }
    }

    pub fn with_planner(mut self, options: PlannerOptions) -> Self {
        self.planner = options;
        self
    }

    pub fn with_analysis_config(mut self, cfg: AnalysisConfig) -> Self {
        self.analysis = cfg;
        self
    }

    /// Sets the caps for planning and for the executor.
    pub fn with_env(mut self, env: RuntimeEnv) -> Self {
        self.env = env;
        self.executor = self.executor.with_env(env);
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn planner(&self) -> &PlannerOptions {
        &self.planner
    }

    pub fn executor(&self) -> &Executor {
        &self.executor
    }

    pub fn answer(&self, query: &str) -> Result<QueryResult, ExecError> {
        self.answer_with(query, self.mode, self.planner.precise_mode)
    }

    pub fn answer_with(&self, query: &str, mode: Mode, precise: bool) -> Result<QueryResult, ExecError> {
        let outcome = match mode {
            Mode::Okra => self.answer_okra(query, precise),
            Mode::StdRag => self.executor.execute(&std_rag_plan(precise), query),
            Mode::LongContext => self.executor.run_long_context(query),
        };
        let stamp = |r: &mut QueryResult| {
            r.mode = mode.as_str().to_string();
            r.refresh_cost();
        };
        match outcome {
            Ok(mut r) => {
                stamp(&mut r);
                Ok(r)
            }
            Err(mut e) => {
                stamp(&mut e.partial);
                Err(e)
            }
        }
    }

    /// Runs the analyzer, degrading to the fallback verdict on failure.
    pub fn run_analysis(&self, query: &str) -> AnalysisTrace {
        match analyze(query, self.executor.engine(), self.analyzer.as_ref(), &self.analysis) {
            Ok(o) => AnalysisTrace {
                analysis: o.analysis,
                granularity: o.granularity,
                context_chunks: o.context_chunks,
                attempts: o.attempts,
                fallback_used: o.fallback_used,
                error: None,
                usage: o.exchanges,
            },
            Err(e) => {
                log::warn!("analysis failed, using fallback verdict: {e}");
                let mut analysis = TaskAnalysis::fallback();
                analysis.backend_id = self.analyzer.id();
                AnalysisTrace {
                    analysis,
                    granularity: self.analysis.retrieval.granularity,
                    context_chunks: Vec::new(),
                    attempts: 0,
                    fallback_used: true,
                    error: Some(e.to_string()),
                    usage: Vec::new(),
                }
            }
        }
    }

    fn answer_okra(&self, query: &str, precise: bool) -> Result<QueryResult, ExecError> {
        let started = Instant::now();
        let trace = self.run_analysis(query);
        let analysis_time = started.elapsed();
        let options = PlannerOptions {
            precise_mode: precise,
            ..self.planner
        };
        let plan = make_plan(&trace.analysis, &self.env, &options);
        if let Err(e) = validate_plan(&plan, &options) {
            log::error!("planner produced an invalid plan: {e}");
        }
        let attach = |r: &mut QueryResult| {
            r.stage_latencies.analysis = analysis_time;
            if let Some(err) = &trace.error {
                r.notes
                    .insert(0, format!("analysis failed ({err}); fallback verdict used"));
            } else if trace.fallback_used {
                r.notes
                    .insert(0, "analyzer output unparseable; fallback verdict used".to_string());
            }
            r.analysis = Some(trace.clone());
        };
        match self.executor.execute(&plan, query) {
            Ok(mut r) => {
                attach(&mut r);
                Ok(r)
            }
            Err(mut e) => {
                attach(&mut e.partial);
                Err(e)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_round_trip() {
        for m in [Mode::Okra, Mode::StdRag, Mode::LongContext] {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert!("fast".parse::<Mode>().is_err());
    }

    #[test]
    fn std_rag_is_dense_top_five_at_512() {
        let p = std_rag_plan(false);
        assert_eq!((p.retrieval.granularity, p.retrieval.top_k), (512, 5));
        assert_eq!(p.retrieval.weights.exact(), 0.0);
        assert!(p.analysis.is_none());
    }
}
