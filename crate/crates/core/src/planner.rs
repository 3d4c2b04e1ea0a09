//! Turns a task analysis into an execution plan.

use crate::analyzer::{InfoPattern, TaskAnalysis, TaskType};
use crate::retrieval::{FusionWeights, RetrievalConfig, DEFAULT_FUSION_POOL};
use serde::{Deserialize, Serialize};
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    Direct,
    SplitAggregate,
    StepWise,
    ContextExtension,
    LongContext,
}

impl PipelineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PipelineKind::Direct => "direct",
            PipelineKind::SplitAggregate => "split_aggregate",
            PipelineKind::StepWise => "step_wise",
            PipelineKind::ContextExtension => "context_extension",
            PipelineKind::LongContext => "long_context",
        }
    }
}

pub const UNANSWERABLE: &str = "unanswerable";
pub const DEFAULT_MAX_STEPS: usize = 5;
pub const DEFAULT_THRESHOLD: f64 = 0.1;

pub const CONTEXTUAL_TOP_K: usize = 8;
pub const FACTOID_TOP_K: usize = 5;
pub const EVIDENCE_GRANULARITY: usize = 150;
pub const CONTEXTUAL_EXPANDED_GRANULARITY: usize = 400;
pub const FACTOID_EXPANDED_GRANULARITY: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationPolicy {
    pub precise_mode: bool,
    pub max_reasoning_steps: usize,
    pub unanswerable_token: String,
}

impl Default for GenerationPolicy {
    fn default() -> Self {
        Self {
            precise_mode: false,
            max_reasoning_steps: DEFAULT_MAX_STEPS,
            unanswerable_token: UNANSWERABLE.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub pipeline: PipelineKind,
    pub retrieval: RetrievalConfig,
    pub generation: GenerationPolicy,
    /// The verdict the plan was derived from; absent for fixed baseline plans.
    pub analysis: Option<TaskAnalysis>,
}

/// Optional limits on a single query. Exceeding either aborts execution
/// with whatever trace has been collected so far.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RuntimeEnv {
    pub budget_weighted_tokens: Option<u64>,
    #[serde(default, with = "crate::util::serde_opt_secs")]
    pub latency_threshold: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("runtime caps must be positive")]
    NonPositiveCap,
    #[error("invalid retrieval config: {0}")]
    Retrieval(String),
    #[error("max_reasoning_steps must be at least 1")]
    NoSteps,
    #[error("plan deviates from the decision table: {0}")]
    Table(String),
}

impl RuntimeEnv {
    pub fn new(budget_weighted_tokens: Option<u64>, latency_threshold: Option<Duration>) -> Result<Self, PlanError> {
        if budget_weighted_tokens == Some(0) || latency_threshold.is_some_and(|d| d.is_zero()) {
            return Err(PlanError::NonPositiveCap);
        }
        Ok(Self {
            budget_weighted_tokens,
            latency_threshold,
        })
    }
}

/// Fusion weights per information pattern.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub exact: FusionWeights,
    pub semantic: FusionWeights,
    pub same: FusionWeights,
}

impl Default for WeightTable {
    fn default() -> Self {
        Self {
            exact: FusionWeights::new(0.6, 0.4).expect("valid"),
            semantic: FusionWeights::new(0.4, 0.6).expect("valid"),
            same: FusionWeights::balanced(),
        }
    }
}

impl WeightTable {
    pub fn get(&self, pattern: InfoPattern) -> FusionWeights {
        match pattern {
            InfoPattern::Exact => self.exact,
            InfoPattern::Semantic => self.semantic,
            InfoPattern::Same => self.same,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerOptions {
    pub precise_mode: bool,
    pub max_steps: usize,
    pub weights: WeightTable,
    pub threshold: f64,
    pub fusion_pool: usize,
}

impl Default for PlannerOptions {
    fn default() -> Self {
        Self {
            precise_mode: false,
            max_steps: DEFAULT_MAX_STEPS,
            weights: WeightTable::default(),
            threshold: DEFAULT_THRESHOLD,
            fusion_pool: DEFAULT_FUSION_POOL,
        }
    }
}

/// Abstractive tasks need broad context; every other type is factoid.
pub fn is_contextual(task: TaskType) -> bool {
    task == TaskType::Abstractive
}

pub fn select_pipeline(analysis: &TaskAnalysis) -> PipelineKind {
    match analysis.task_type {
        TaskType::MultiBridge => PipelineKind::StepWise,
        TaskType::MultiSource => PipelineKind::SplitAggregate,
        TaskType::Arithmetic => PipelineKind::ContextExtension,
        TaskType::Extractive | TaskType::Abstractive => PipelineKind::Direct,
    }
}

fn table_granularity(analysis: &TaskAnalysis) -> usize {
    match (analysis.evidence_present, is_contextual(analysis.task_type)) {
        (true, _) => EVIDENCE_GRANULARITY,
        (false, true) => CONTEXTUAL_EXPANDED_GRANULARITY,
        (false, false) => FACTOID_EXPANDED_GRANULARITY,
    }
}

fn table_top_k(analysis: &TaskAnalysis) -> usize {
    if is_contextual(analysis.task_type) {
        CONTEXTUAL_TOP_K
    } else {
        FACTOID_TOP_K
    }
}

pub fn select_weights(analysis: &TaskAnalysis, table: &WeightTable) -> FusionWeights {
    table.get(analysis.info_pattern)
}

pub fn select_retrieval(analysis: &TaskAnalysis, options: &PlannerOptions) -> RetrievalConfig {
    RetrievalConfig {
        granularity: table_granularity(analysis),
        top_k: table_top_k(analysis),
        weights: select_weights(analysis, &options.weights),
        threshold: options.threshold,
        fusion_pool: options.fusion_pool,
    }
}

/// Composes the pipeline, retrieval and weight selectors. The runtime
/// environment does not alter the plan; its caps are enforced during
/// execution.
pub fn make_plan(analysis: &TaskAnalysis, _env: &RuntimeEnv, options: &PlannerOptions) -> ExecutionPlan {
    ExecutionPlan {
        pipeline: select_pipeline(analysis),
        retrieval: select_retrieval(analysis, options),
        generation: GenerationPolicy {
            precise_mode: options.precise_mode,
            max_reasoning_steps: options.max_steps,
            ..GenerationPolicy::default()
        },
        analysis: Some(analysis.clone()),
    }
}

pub fn validate_retrieval(cfg: &RetrievalConfig) -> Result<(), PlanError> {
    if cfg.top_k == 0 {
        return Err(PlanError::Retrieval("top_k must be at least 1".into()));
    }
    if cfg.granularity == 0 {
        return Err(PlanError::Retrieval("granularity must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&cfg.threshold) {
        return Err(PlanError::Retrieval(format!(
            "threshold {} outside [0, 1)",
            cfg.threshold
        )));
    }
    if cfg.fusion_pool < cfg.top_k {
        return Err(PlanError::Retrieval("fusion_pool smaller than top_k".into()));
    }
    Ok(())
}

/// Checks structural constraints and that the plan agrees with the
/// decision table for its own analysis.
pub fn validate_plan(plan: &ExecutionPlan, options: &PlannerOptions) -> Result<(), PlanError> {
    validate_retrieval(&plan.retrieval)?;
    if plan.generation.max_reasoning_steps == 0 {
        return Err(PlanError::NoSteps);
    }
    let Some(a) = &plan.analysis else {
        return Err(PlanError::Table("plan carries no analysis".into()));
    };
    let mismatch = |what: &str| {
        Err(PlanError::Table(format!(
            "{what} for {}/{}/{}",
            a.task_type, a.info_pattern, a.evidence_present
        )))
    };
    if plan.pipeline != select_pipeline(a) {
        return mismatch("pipeline");
    }
    if plan.retrieval.granularity != table_granularity(a) {
        return mismatch("granularity");
    }
    if plan.retrieval.top_k != table_top_k(a) {
        return mismatch("top_k");
    }
    if plan.retrieval.weights != select_weights(a, &options.weights) {
        return mismatch("weights");
    }
    Ok(())
}
