//! Task-state analysis: task taxonomy, information pattern and evidence
//! presence, produced by a pluggable backend from the query plus a small
//! preliminary retrieval.

mod heuristic;
mod remote;

pub use heuristic::HeuristicAnalyzer;
pub use remote::RemoteLmAnalyzer;

use crate::corpus::ChunkId;
use crate::gateway::{ChatExchange, GatewayError};
use crate::retrieval::{FusionWeights, RetrievalConfig, RetrievalEngine, RetrievalError, DEFAULT_FUSION_POOL};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    Arithmetic,
    Extractive,
    Abstractive,
    MultiSource,
    MultiBridge,
}

impl TaskType {
    pub const ALL: [TaskType; 5] = [
        TaskType::Arithmetic,
        TaskType::Extractive,
        TaskType::Abstractive,
        TaskType::MultiSource,
        TaskType::MultiBridge,
    ];

    /// Label used in analyzer prompts and replies.
    pub fn label(self) -> &'static str {
        match self {
            TaskType::Arithmetic => "arithmetic",
            TaskType::Extractive => "extractive",
            TaskType::Abstractive => "abstractive",
            TaskType::MultiSource => "multi-source",
            TaskType::MultiBridge => "multi-bridge",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfoPattern {
    Exact,
    Semantic,
    Same,
}

impl InfoPattern {
    pub const ALL: [InfoPattern; 3] = [InfoPattern::Exact, InfoPattern::Semantic, InfoPattern::Same];

    pub fn label(self) -> &'static str {
        match self {
            InfoPattern::Exact => "exact",
            InfoPattern::Semantic => "semantic",
            InfoPattern::Same => "same",
        }
    }
}

fn normalize_label(s: &str) -> String {
    s.trim().to_lowercase().replace(['_', ' '], "-")
}

impl FromStr for TaskType {
    type Err = ParseAnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize_label(s).as_str() {
            "arithmetic" | "arithemtic" => Ok(TaskType::Arithmetic),
            "extractive" => Ok(TaskType::Extractive),
            "abstractive" => Ok(TaskType::Abstractive),
            "multi-source" | "multisource" => Ok(TaskType::MultiSource),
            "multi-bridge" | "multibridge" => Ok(TaskType::MultiBridge),
            _ => Err(ParseAnalysisError::UnknownVariant {
                key: KEY_TASK,
                value: s.to_string(),
            }),
        }
    }
}

impl FromStr for InfoPattern {
    type Err = ParseAnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize_label(s).as_str() {
            "exact" => Ok(InfoPattern::Exact),
            "semantic" => Ok(InfoPattern::Semantic),
            "same" => Ok(InfoPattern::Same),
            _ => Err(ParseAnalysisError::UnknownVariant {
                key: KEY_INFO,
                value: s.to_string(),
            }),
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl fmt::Display for InfoPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// The analyzer's verdict. All three fields are always populated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskAnalysis {
    pub task_type: TaskType,
    pub info_pattern: InfoPattern,
    pub evidence_present: bool,
    pub backend_id: String,
    pub raw_output: String,
}

impl TaskAnalysis {
    pub fn new(task_type: TaskType, info_pattern: InfoPattern, evidence_present: bool) -> Self {
        Self {
            task_type,
            info_pattern,
            evidence_present,
            backend_id: String::new(),
            raw_output: String::new(),
        }
    }

    /// Verdict used when the backend cannot produce a parseable answer:
    /// widest context, balanced weights, evidence treated as absent.
    pub fn fallback() -> Self {
        Self::new(TaskType::Abstractive, InfoPattern::Same, false)
    }

    /// Canonical reply mapping, e.g.
    /// `{"question-type": "extractive", "info-type": "exact", "containing": "yes"}`.
    pub fn render(&self) -> String {
        format!(
            "{{\"{KEY_TASK}\": \"{}\", \"{KEY_INFO}\": \"{}\", \"{KEY_EVIDENCE}\": \"{}\"}}",
            self.task_type.label(),
            self.info_pattern.label(),
            if self.evidence_present { "yes" } else { "no" }
        )
    }

    pub fn same_verdict(&self, other: &TaskAnalysis) -> bool {
        (self.task_type, self.info_pattern, self.evidence_present)
            == (other.task_type, other.info_pattern, other.evidence_present)
    }
}

pub const ANALYZER_SYSTEM_PROMPT: &str = "Given a question and the document context, please answer three questions:\n\
1. What type of question is being asked? The types include: extractive, abstractive, arithmetic, multi-bridge, and multi-source. Extractive means the query is directly factoid; abstractive means the query needs large context and refinement; arithemtic means the query needs numerical calculation; multi-bridge means the answer requires multiple bridging steps to get the answer;multi-source means the answer requires information from multiple facts (e.g. comparison questions).\n\
2. Is the key information of the question more exact or semantic (according to both the question and the context)? The answer should be \"exact\", \"semantic\" or \"same\".\n\
3. Does the provided context contain the enough information to answer the question? The answer should be either \"yes\" or \"no\".\n\
The final answer should be in the format of a dictionary:\n\
{\"question-type\": \"extractive\", \"info-type\": \"exact\", \"containing\": \"yes\"}. \n\
Please strictly follow the format and no explanation is needed.";

/// Appended to the user message when the first reply could not be parsed.
pub const RETRY_INSTRUCTION: &str = "Please strictly follow the format.";

const KEY_TASK: &str = "question-type";
const KEY_INFO: &str = "info-type";
const KEY_EVIDENCE: &str = "containing";

/// Separator between context chunks in prompts.
pub const CONTEXT_SEPARATOR: &str = "\n\n";

/// Returns `(system, user)` messages for the analyzer.
pub fn build_analysis_prompt(query: &str, context_chunks: &[&str]) -> (String, String) {
    let context = context_chunks.join(CONTEXT_SEPARATOR);
    (
        ANALYZER_SYSTEM_PROMPT.to_string(),
        format!("### Context: {context} ### Question: {query} ### Answer:"),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseAnalysisError {
    #[error("no key-value mapping found in analyzer output")]
    NoMapping,
    #[error("analyzer mapping is not valid: {0}")]
    BadMapping(String),
    #[error("analyzer mapping lacks key `{0}`")]
    MissingKey(&'static str),
    #[error("unknown value {value:?} for `{key}`")]
    UnknownVariant { key: &'static str, value: String },
}

/// Extracts the first `{...}` mapping from analyzer output. Keys are
/// `question-type`, `info-type` and `containing`; values match
/// case-insensitively. Single-quoted mappings are accepted.
pub fn parse_analysis(raw: &str) -> Result<TaskAnalysis, ParseAnalysisError> {
    let start = raw.find('{').ok_or(ParseAnalysisError::NoMapping)?;
    let len = raw[start..].find('}').ok_or(ParseAnalysisError::NoMapping)?;
    let body = &raw[start..=start + len];
    let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(body)
        .or_else(|_| serde_json::from_str(&body.replace('\'', "\"")))
        .map_err(|e| ParseAnalysisError::BadMapping(e.to_string()))?;

    let lookup = |key: &'static str| -> Result<&serde_json::Value, ParseAnalysisError> {
        map.iter()
            .find(|(k, _)| normalize_label(k) == key)
            .map(|(_, v)| v)
            .ok_or(ParseAnalysisError::MissingKey(key))
    };
    let as_text = |key: &'static str, v: &serde_json::Value| -> Result<String, ParseAnalysisError> {
        v.as_str()
            .map(str::to_string)
            .ok_or_else(|| ParseAnalysisError::UnknownVariant {
                key,
                value: v.to_string(),
            })
    };

    let task_type: TaskType = as_text(KEY_TASK, lookup(KEY_TASK)?)?.parse()?;
    let info_pattern: InfoPattern = as_text(KEY_INFO, lookup(KEY_INFO)?)?.parse()?;
    let evidence_value = lookup(KEY_EVIDENCE)?;
    let evidence_present = match evidence_value {
        serde_json::Value::Bool(b) => *b,
        v => match as_text(KEY_EVIDENCE, v)?.trim().to_lowercase().as_str() {
            "yes" => true,
            "no" => false,
            _ => {
                return Err(ParseAnalysisError::UnknownVariant {
                    key: KEY_EVIDENCE,
                    value: v.to_string(),
                })
            }
        },
    };
    Ok(TaskAnalysis {
        task_type,
        info_pattern,
        evidence_present,
        backend_id: String::new(),
        raw_output: raw.to_string(),
    })
}

/// Input handed to an analyzer backend.
#[derive(Debug, Clone)]
pub struct AnalysisRequest<'a> {
    pub query: &'a str,
    pub context: &'a [&'a str],
    pub system: &'a str,
    pub user: &'a str,
}

#[derive(Debug, Clone)]
pub struct BackendReply {
    pub text: String,
    /// Present when the backend went through a chat gateway.
    pub exchange: Option<ChatExchange>,
}

pub trait AnalyzerBackend: Send + Sync {
    fn id(&self) -> String;
    fn respond(&self, request: &AnalysisRequest<'_>) -> Result<BackendReply, GatewayError>;
}

/// Preliminary retrieval used for analysis. The relative threshold is off so
/// the backend always sees `top_k` chunks when the corpus has them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisConfig {
    pub retrieval: RetrievalConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            retrieval: RetrievalConfig {
                granularity: 150,
                top_k: 3,
                weights: FusionWeights::balanced(),
                threshold: 0.0,
                fusion_pool: DEFAULT_FUSION_POOL,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnalysisOutcome {
    pub analysis: TaskAnalysis,
    pub granularity: usize,
    pub context_chunks: Vec<ChunkId>,
    pub attempts: u32,
    pub fallback_used: bool,
    pub index_built: bool,
    pub exchanges: Vec<ChatExchange>,
}

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("analysis retrieval failed: {0}")]
    Retrieval(#[from] RetrievalError),
    #[error("analyzer backend failed after {attempts} attempts: {source}")]
    Backend {
        attempts: u32,
        #[source]
        source: GatewayError,
    },
}

const MAX_ATTEMPTS: u32 = 2;

/// Retrieves the analysis context, queries the backend and parses its
/// verdict. An unparseable reply is retried once with a format reminder;
/// a second unparseable reply yields [`TaskAnalysis::fallback`].
pub fn analyze(
    query: &str,
    engine: &RetrievalEngine,
    backend: &dyn AnalyzerBackend,
    config: &AnalysisConfig,
) -> Result<AnalysisOutcome, AnalysisError> {
    let retrieved = engine.retrieve(query, &config.retrieval)?;
    let chunk_ids = retrieved.ranked.chunk_ids();
    let texts: Vec<&str> = chunk_ids
        .iter()
        .filter_map(|id| retrieved.level.chunks.chunk(*id))
        .map(|c| c.text.as_str())
        .collect();
    let (system, user) = build_analysis_prompt(query, &texts);
    let retry_user = format!("{user}\n{RETRY_INSTRUCTION}");

    let mut exchanges = Vec::new();
    let mut last_raw = String::new();
    let mut last_transport: Option<GatewayError> = None;
    let mut parse_failed = false;
    for attempt in 1..=MAX_ATTEMPTS {
        let request = AnalysisRequest {
            query,
            context: &texts,
            system: &system,
            user: if parse_failed { &retry_user } else { &user },
        };
        match backend.respond(&request) {
            Ok(reply) => {
                exchanges.extend(reply.exchange);
                last_transport = None;
                match parse_analysis(&reply.text) {
                    Ok(mut analysis) => {
                        analysis.backend_id = backend.id();
                        return Ok(AnalysisOutcome {
                            analysis,
                            granularity: config.retrieval.granularity,
                            context_chunks: chunk_ids,
                            attempts: attempt,
                            fallback_used: false,
                            index_built: retrieved.built,
                            exchanges,
                        });
                    }
                    Err(e) => {
                        log::debug!("analyzer reply unparseable ({e}): {:?}", reply.text);
                        parse_failed = true;
                        last_raw = reply.text;
                    }
                }
            }
            Err(e) => {
                log::warn!("analyzer backend error: {e}");
                last_transport = Some(e);
            }
        }
    }
    if let Some(source) = last_transport {
        return Err(AnalysisError::Backend {
            attempts: MAX_ATTEMPTS,
            source,
        });
    }
    let mut analysis = TaskAnalysis::fallback();
    analysis.backend_id = backend.id();
    analysis.raw_output = last_raw;
    Ok(AnalysisOutcome {
        analysis,
        granularity: config.retrieval.granularity,
        context_chunks: chunk_ids,
        attempts: MAX_ATTEMPTS,
        fallback_used: true,
        index_built: retrieved.built,
        exchanges,
    })
}
