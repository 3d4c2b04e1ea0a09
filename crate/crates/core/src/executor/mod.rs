//! Runs execution plans: retrieval, context assembly and the chat calls of
//! each pipeline, with a full trace of what happened.

mod context;
pub mod prompts;

pub use context::{is_table_line, process_context, recover_table, ContextBlock, TABLE_CAPTION_LINES};

use crate::analyzer::{TaskAnalysis, CONTEXT_SEPARATOR};
use crate::corpus::ChunkId;
use crate::eval::{normalize_answer, weighted_cost, CostReport, StageLatencies};
use crate::gateway::{ChatBackend, ChatExchange, ChatMessage, GatewayError, GenerationParams};
use crate::planner::{ExecutionPlan, PipelineKind, RuntimeEnv};
use crate::retrieval::{RetrievalConfig, RetrievalEngine, RetrievalError};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackKind {
    /// Precise mode re-ran an unanswerable query over the long context.
    Precise,
    /// The corpus exceeded the long-context limit; only the top dense
    /// chunks were sent.
    LongContext,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step_index: usize,
    pub query_used: String,
    pub retrieved: Vec<ChunkId>,
    pub evidence_extracted: String,
    pub next_query: Option<String>,
    pub terminal_answer: Option<String>,
    /// The turn did not follow the step format; its raw text became the answer.
    pub unparseable: bool,
}

/// Analysis stage as seen by the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisTrace {
    pub analysis: TaskAnalysis,
    pub granularity: usize,
    pub context_chunks: Vec<ChunkId>,
    pub attempts: u32,
    pub fallback_used: bool,
    pub error: Option<String>,
    /// Exchanges of a language-model analyzer; not part of generation cost.
    pub usage: Vec<ChatExchange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query: String,
    pub mode: String,
    pub answer: String,
    pub pipeline: PipelineKind,
    pub analysis: Option<AnalysisTrace>,
    pub plan: Option<ExecutionPlan>,
    pub sub_queries: Vec<String>,
    pub steps: Vec<StepTrace>,
    pub context_granularity: Option<usize>,
    pub context_blocks: Vec<ContextBlock>,
    pub usage: Vec<ChatExchange>,
    pub weighted_cost: u64,
    pub cost: CostReport,
    pub stage_latencies: StageLatencies,
    pub fallback_taken: Option<FallbackKind>,
    pub notes: Vec<String>,
}

impl QueryResult {
    fn new(query: &str) -> Self {
        Self {
            query: query.to_string(),
            mode: String::new(),
            answer: String::new(),
            pipeline: PipelineKind::Direct,
            analysis: None,
            plan: None,
            sub_queries: Vec::new(),
            steps: Vec::new(),
            context_granularity: None,
            context_blocks: Vec::new(),
            usage: Vec::new(),
            weighted_cost: 0,
            cost: CostReport::default(),
            stage_latencies: StageLatencies::default(),
            fallback_taken: None,
            notes: Vec::new(),
        }
    }

    /// Recomputes cost fields from the recorded exchanges and latencies.
    pub fn refresh_cost(&mut self) {
        self.cost = weighted_cost(&self.usage).with_latency(self.stage_latencies);
        self.weighted_cost = self.cost.weighted_cost;
    }

    /// Number of context tokens in the final prompt, by the given counter.
    pub fn context_token_count(&self, count: impl Fn(&str) -> usize) -> usize {
        self.context_blocks.iter().map(|b| count(&b.text)).sum()
    }
}

#[derive(Debug)]
pub enum ExecErrorKind {
    Gateway(GatewayError),
    Retrieval(RetrievalError),
    BudgetExceeded { spent: u64, budget: u64 },
    LatencyExceeded { elapsed: Duration, limit: Duration },
}

impl fmt::Display for ExecErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExecErrorKind::Gateway(e) => write!(f, "generation failed: {e}"),
            ExecErrorKind::Retrieval(e) => write!(f, "retrieval failed: {e}"),
            ExecErrorKind::BudgetExceeded { spent, budget } => {
                write!(f, "token budget exceeded: {spent} weighted tokens spent, cap {budget}")
            }
            ExecErrorKind::LatencyExceeded { elapsed, limit } => {
                write!(
                    f,
                    "latency cap exceeded: {:.3}s elapsed, cap {:.3}s",
                    elapsed.as_secs_f64(),
                    limit.as_secs_f64()
                )
            }
        }
    }
}

/// Execution failure carrying the trace collected up to the failure.
#[derive(Debug, thiserror::Error)]
#[error("{kind}")]
pub struct ExecError {
    pub kind: ExecErrorKind,
    pub partial: Box<QueryResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LongContextConfig {
    /// Corpora up to this many tokens are sent whole.
    pub token_limit: usize,
    pub granularity: usize,
    /// Dense chunks sent when the corpus is over the limit.
    pub top_chunks: usize,
}

impl Default for LongContextConfig {
    fn default() -> Self {
        Self {
            token_limit: 128_000,
            granularity: 512,
            top_chunks: 200,
        }
    }
}

/// Neighbor radius used by the context-extension pipeline.
pub const EXTENSION_RADIUS: usize = 1;

struct Recorder {
    result: QueryResult,
    started: Instant,
    env: RuntimeEnv,
}

impl Recorder {
    fn new(query: &str, env: RuntimeEnv) -> Self {
        Self {
            result: QueryResult::new(query),
            started: Instant::now(),
            env,
        }
    }

    fn note(&mut self, note: impl Into<String>) {
        let note = note.into();
        log::info!("{note}");
        self.result.notes.push(note);
    }

    fn fail(&self, kind: ExecErrorKind) -> ExecError {
        let mut partial = self.result.clone();
        partial.refresh_cost();
        partial.notes.push(format!("aborted: {kind}"));
        ExecError {
            kind,
            partial: Box::new(partial),
        }
    }

    fn check_caps(&self) -> Result<(), ExecError> {
        if let Some(budget) = self.env.budget_weighted_tokens {
            let spent = weighted_cost(&self.result.usage).weighted_cost;
            if spent > budget {
                return Err(self.fail(ExecErrorKind::BudgetExceeded { spent, budget }));
            }
        }
        if let Some(limit) = self.env.latency_threshold {
            let elapsed = self.started.elapsed();
            if elapsed > limit {
                return Err(self.fail(ExecErrorKind::LatencyExceeded { elapsed, limit }));
            }
        }
        Ok(())
    }

    fn finish(mut self) -> QueryResult {
        self.result.refresh_cost();
        self.result
    }
}

fn join_blocks(blocks: &[ContextBlock]) -> String {
    blocks
        .iter()
        .map(|b| b.text.as_str())
        .collect::<Vec<_>>()
        .join(CONTEXT_SEPARATOR)
}

fn with_evidence(evidence: &[String], blocks: &[ContextBlock]) -> String {
    let body = join_blocks(blocks);
    if evidence.is_empty() {
        body
    } else {
        format!("{}{CONTEXT_SEPARATOR}{body}", evidence.join(" "))
    }
}

/// Runs plans against shared retrieval structures and a chat backend.
pub struct Executor {
    engine: Arc<RetrievalEngine>,
    gateway: Arc<dyn ChatBackend>,
    params: GenerationParams,
    env: RuntimeEnv,
    long_context: LongContextConfig,
}

impl Executor {
    pub fn new(engine: Arc<RetrievalEngine>, gateway: Arc<dyn ChatBackend>) -> Self {
        Self {
            engine,
            gateway,
            params: GenerationParams::default(),
            env: RuntimeEnv::default(),
            long_context: LongContextConfig::default(),
        }
    }

    pub fn with_params(mut self, params: GenerationParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_env(mut self, env: RuntimeEnv) -> Self {
        self.env = env;
        self
    }

    pub fn with_long_context(mut self, cfg: LongContextConfig) -> Self {
        self.long_context = cfg;
        self
    }

    pub fn engine(&self) -> &Arc<RetrievalEngine> {
        &self.engine
    }

    pub fn gateway(&self) -> &Arc<dyn ChatBackend> {
        &self.gateway
    }

    /// Runs the plan's pipeline. In precise mode an answer containing the
    /// unanswerable token triggers a second pass over the long context.
    pub fn execute(&self, plan: &ExecutionPlan, query: &str) -> Result<QueryResult, ExecError> {
        let mut rec = Recorder::new(query, self.env);
        rec.result.plan = Some(plan.clone());
        match plan.pipeline {
            PipelineKind::Direct => self.direct(&mut rec, plan, query, 0, false)?,
            PipelineKind::ContextExtension => self.direct(&mut rec, plan, query, EXTENSION_RADIUS, true)?,
            PipelineKind::SplitAggregate => self.split_aggregate(&mut rec, plan, query)?,
            PipelineKind::StepWise => self.step_wise(&mut rec, plan, query)?,
            PipelineKind::LongContext => self.long_context(&mut rec, query)?,
        }
        let token = plan.generation.unanswerable_token.to_lowercase();
        if plan.generation.precise_mode && normalize_answer(&rec.result.answer).contains(&token) {
            rec.note("precise mode: answer was unanswerable, retrying over the long context");
            self.long_context(&mut rec, query)?;
            rec.result.fallback_taken = Some(FallbackKind::Precise);
        }
        Ok(rec.finish())
    }

    /// Answers over the whole corpus, or over the top dense chunks when the
    /// corpus exceeds the configured token limit.
    pub fn run_long_context(&self, query: &str) -> Result<QueryResult, ExecError> {
        let mut rec = Recorder::new(query, self.env);
        self.long_context(&mut rec, query)?;
        Ok(rec.finish())
    }

    fn chat(&self, rec: &mut Recorder, messages: Vec<ChatMessage>) -> Result<String, ExecError> {
        let t = Instant::now();
        let exchange = self
            .gateway
            .complete(&messages, &self.params)
            .map_err(|e| rec.fail(ExecErrorKind::Gateway(e)))?;
        rec.result.stage_latencies.generation += t.elapsed();
        let text = exchange.response_text.trim().to_string();
        rec.result.usage.push(exchange);
        rec.check_caps()?;
        Ok(text)
    }

    /// Fused retrieval; time spent building a missing level counts as indexing.
    fn retrieve(&self, rec: &mut Recorder, query: &str, cfg: &RetrievalConfig) -> Result<Vec<ChunkId>, ExecError> {
        self.ensure_level(rec, cfg.granularity)?;
        let t = Instant::now();
        let retrieved = self
            .engine
            .retrieve(query, cfg)
            .map_err(|e| rec.fail(ExecErrorKind::Retrieval(e)))?;
        rec.result.stage_latencies.retrieval += t.elapsed();
        rec.check_caps()?;
        Ok(retrieved.ranked.chunk_ids())
    }

    fn ensure_level(&self, rec: &mut Recorder, granularity: usize) -> Result<(), ExecError> {
        let t = Instant::now();
        let (_, built) = self
            .engine
            .level(granularity)
            .map_err(|e| rec.fail(ExecErrorKind::Retrieval(e)))?;
        if built {
            rec.result.stage_latencies.indexing += t.elapsed();
            rec.note(format!("built index at granularity {granularity}"));
        } else {
            rec.result.stage_latencies.retrieval += t.elapsed();
        }
        Ok(())
    }

    fn assemble(
        &self,
        rec: &mut Recorder,
        granularity: usize,
        selected: &[ChunkId],
        radius: usize,
        tables: bool,
    ) -> Result<Vec<ContextBlock>, ExecError> {
        let (level, _) = self
            .engine
            .level(granularity)
            .map_err(|e| rec.fail(ExecErrorKind::Retrieval(e)))?;
        let t = Instant::now();
        let blocks = process_context(&level.chunks, self.engine.store(), selected, radius, tables);
        rec.result.stage_latencies.retrieval += t.elapsed();
        rec.result.context_granularity = Some(granularity);
        Ok(blocks)
    }

    fn answer_over(&self, rec: &mut Recorder, query: &str, context: &str) -> Result<(), ExecError> {
        rec.result.answer = self.chat(rec, prompts::qa_messages(query, context))?;
        Ok(())
    }

    fn direct(
        &self,
        rec: &mut Recorder,
        plan: &ExecutionPlan,
        query: &str,
        radius: usize,
        tables: bool,
    ) -> Result<(), ExecError> {
        rec.result.pipeline = if tables {
            PipelineKind::ContextExtension
        } else {
            PipelineKind::Direct
        };
        let selected = self.retrieve(rec, query, &plan.retrieval)?;
        let blocks = self.assemble(rec, plan.retrieval.granularity, &selected, radius, tables)?;
        let context = join_blocks(&blocks);
        rec.result.context_blocks = blocks;
        self.answer_over(rec, query, &context)
    }

    fn split_aggregate(&self, rec: &mut Recorder, plan: &ExecutionPlan, query: &str) -> Result<(), ExecError> {
        rec.result.pipeline = PipelineKind::SplitAggregate;
        let raw = self.chat(rec, prompts::split_messages(query))?;
        let subs = prompts::parse_sub_queries(&raw);
        if subs.is_empty() {
            rec.note("split produced no sub-queries; answering directly");
            return self.direct(rec, plan, query, 0, false);
        }
        rec.result.sub_queries = subs.clone();
        let mut seen = HashSet::new();
        let mut union = Vec::new();
        for sub in &subs {
            for id in self.retrieve(rec, sub, &plan.retrieval)? {
                if seen.insert(id) {
                    union.push(id);
                }
            }
        }
        let blocks = self.assemble(rec, plan.retrieval.granularity, &union, 0, false)?;
        let context = join_blocks(&blocks);
        rec.result.context_blocks = blocks;
        self.answer_over(rec, query, &context)
    }

    fn step_wise(&self, rec: &mut Recorder, plan: &ExecutionPlan, query: &str) -> Result<(), ExecError> {
        rec.result.pipeline = PipelineKind::StepWise;
        let mut evidence: Vec<String> = Vec::new();
        let mut current = query.to_string();
        for step_index in 0..plan.generation.max_reasoning_steps {
            let selected = self.retrieve(rec, &current, &plan.retrieval)?;
            let blocks = self.assemble(rec, plan.retrieval.granularity, &selected, 0, false)?;
            let context = with_evidence(&evidence, &blocks);
            rec.result.context_blocks = blocks;
            let raw = self.chat(rec, prompts::step_messages(query, &context))?;
            let mut trace = StepTrace {
                step_index,
                query_used: current.clone(),
                retrieved: selected,
                evidence_extracted: String::new(),
                next_query: None,
                terminal_answer: None,
                unparseable: false,
            };
            match prompts::parse_step(&raw) {
                None => {
                    trace.terminal_answer = Some(raw.clone());
                    trace.unparseable = true;
                    rec.result.steps.push(trace);
                    rec.note(format!(
                        "step {step_index} output did not follow the step format; using it as the answer"
                    ));
                    rec.result.answer = raw;
                    return Ok(());
                }
                Some(out) => {
                    trace.evidence_extracted = out.evidence.clone();
                    if let Some(answer) = out.answer {
                        trace.terminal_answer = Some(answer.clone());
                        rec.result.steps.push(trace);
                        rec.result.answer = answer;
                        return Ok(());
                    }
                    let next = out.next_query.expect("parse_step yields an answer or a next query");
                    trace.next_query = Some(next.clone());
                    rec.result.steps.push(trace);
                    if !out.evidence.is_empty() {
                        evidence.push(out.evidence);
                    }
                    current = next;
                }
            }
        }
        rec.note(format!(
            "step cap of {} reached; answering over accumulated evidence",
            plan.generation.max_reasoning_steps
        ));
        let context = with_evidence(&evidence, &rec.result.context_blocks);
        self.answer_over(rec, query, &context)
    }

    fn long_context(&self, rec: &mut Recorder, query: &str) -> Result<(), ExecError> {
        rec.result.pipeline = PipelineKind::LongContext;
        let cfg = self.long_context;
        self.ensure_level(rec, cfg.granularity)?;
        let total = self.engine.store().total_tokens();
        let selected: Vec<ChunkId> = if total <= cfg.token_limit {
            let (level, _) = self
                .engine
                .level(cfg.granularity)
                .map_err(|e| rec.fail(ExecErrorKind::Retrieval(e)))?;
            level.chunks.chunks().iter().map(|c| c.chunk_id).collect()
        } else {
            rec.note(format!(
                "corpus has {total} tokens, over the {} limit; using the top {} chunks",
                cfg.token_limit, cfg.top_chunks
            ));
            rec.result.fallback_taken = Some(FallbackKind::LongContext);
            let t = Instant::now();
            let (_, hits, _) = self
                .engine
                .retrieve_semantic(query, cfg.granularity, cfg.top_chunks)
                .map_err(|e| rec.fail(ExecErrorKind::Retrieval(e)))?;
            rec.result.stage_latencies.retrieval += t.elapsed();
            hits.iter().map(|h| h.chunk_id).collect()
        };
        let blocks = self.assemble(rec, cfg.granularity, &selected, 0, false)?;
        let context = join_blocks(&blocks);
        rec.result.context_blocks = blocks;
        self.answer_over(rec, query, &context)
    }
}
