#![allow(dead_code)]

use okra_core::analyzer::{InfoPattern, TaskAnalysis, TaskType};
use okra_core::corpus::{CorpusStore, Document};
use okra_core::executor::{Executor, QueryResult};
use okra_core::gateway::{ChatBackend, ScriptRule, ScriptedBackend};
use okra_core::planner::{make_plan, ExecutionPlan, PlannerOptions, RuntimeEnv};
use okra_core::retrieval::{HashingEmbedder, RetrievalEngine};
use okra_core::tokenizer::{Tokenizer, WhitespacePunctTokenizer};
use std::collections::HashSet;
use std::sync::Arc;

pub fn tok() -> Arc<dyn Tokenizer> {
    Arc::new(WhitespacePunctTokenizer)
}

pub fn store(docs: &[(&str, &str)]) -> Arc<CorpusStore> {
    let docs = docs.iter().map(|(id, text)| Document::new(*id, *text)).collect();
    Arc::new(CorpusStore::new(docs, tok()).unwrap())
}

pub fn retrieval(store: Arc<CorpusStore>) -> Arc<RetrievalEngine> {
    Arc::new(RetrievalEngine::new(store, Arc::new(HashingEmbedder::new(tok()))))
}

pub fn scripted(rules: Vec<ScriptRule>) -> Arc<dyn ChatBackend> {
    Arc::new(ScriptedBackend::new(rules, tok()))
}

pub fn executor(docs: &[(&str, &str)], rules: Vec<ScriptRule>) -> Executor {
    Executor::new(retrieval(store(docs)), scripted(rules))
}

pub fn plan(task: TaskType, info: InfoPattern, evidence: bool, precise: bool) -> ExecutionPlan {
    let options = PlannerOptions {
        precise_mode: precise,
        ..PlannerOptions::default()
    };
    make_plan(
        &TaskAnalysis::new(task, info, evidence),
        &RuntimeEnv::default(),
        &options,
    )
}

/// Independent recomputation of the trace's cost plus structural checks
/// every pipeline result must satisfy.
pub fn check_trace(r: &QueryResult, max_steps: usize) {
    let input: u64 = r.usage.iter().map(|e| e.prompt_tokens).sum();
    let output: u64 = r.usage.iter().map(|e| e.completion_tokens).sum();
    let expected = input + 4 * output;
    assert_eq!(r.weighted_cost, expected, "weighted cost cross-check");
    assert_eq!(r.cost.weighted_cost, expected);
    assert_eq!((r.cost.input_tokens, r.cost.output_tokens), (input, output));
    assert_eq!(r.cost.num_llm_calls, r.usage.len());
    assert!(r.usage.len() <= max_steps + 2, "{} calls", r.usage.len());
    let mut seen = HashSet::new();
    for id in r.context_blocks.iter().flat_map(|b| &b.chunk_ids) {
        assert!(seen.insert(*id), "chunk {id} appears in two context blocks");
    }
}

pub const UNH: &str = "The University of New Haven is a private university in West Haven, Connecticut. \
The campus size of University of New Haven is 82 acres.";
pub const UWF: &str = "The University of West Florida is a public university in Pensacola, Florida. \
The campus size of University of West Florida is 1,600 acres.";

pub fn campus_docs() -> Vec<(&'static str, &'static str)> {
    vec![
        ("unh", UNH),
        ("uwf", UWF),
        (
            "yale",
            "Yale University is located in New Haven, Connecticut, and was founded in 1701.",
        ),
        (
            "fsu",
            "Florida State University is a public research university in Tallahassee.",
        ),
    ]
}

pub const RIFLES_QUESTION: &str = "100 Rifles is a western film, starring an actress of what nationality?";

pub fn rifles_docs() -> Vec<(&'static str, &'static str)> {
    vec![
        (
            "rifles",
            "100 Rifles is a 1969 western film directed by Tom Gries and starring Jim Brown and Raquel Welch.",
        ),
        ("welch", "Raquel Welch was an American actress and singer."),
        ("brown", "Jim Brown was an American football fullback and actor."),
    ]
}
