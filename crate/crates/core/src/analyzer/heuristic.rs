use super::{AnalysisRequest, AnalyzerBackend, BackendReply, InfoPattern, TaskAnalysis, TaskType};
use crate::gateway::GatewayError;
use crate::tokenizer::Tokenizer;
use regex::Regex;
use std::collections::HashSet;
use std::sync::{Arc, OnceLock};

/// Share of non-stopword query terms that must occur in the context for
/// evidence to count as present.
pub const EVIDENCE_COVERAGE: f64 = 0.4;

const STOPWORDS: &[&str] = &[
    "a", "about", "an", "and", "are", "as", "at", "be", "been", "by", "can", "did", "do", "does", "for", "from", "had",
    "has", "have", "he", "her", "his", "how", "i", "in", "is", "it", "its", "of", "on", "or", "she", "that", "the",
    "their", "them", "there", "they", "this", "to", "was", "were", "what", "when", "where", "which", "who", "whom",
    "whose", "why", "will", "with", "would", "you",
];

/// Words that may sit inside a multi-word name ("University of New Haven").
const NAME_CONNECTORS: &[&str] = &["of", "the", "de", "la", "von", "van"];

fn arithmetic_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"\b(how many|how much|difference|total|average|more than|less than|fewer than|sum of|percentage|percent|ratio|increase|decrease)\b",
        )
        .unwrap()
    })
}

fn bridge_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\bof (the|a|an) [\w' -]{1,60}? (that|which|who|whose|where)\b").unwrap())
}

fn comparison_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\bcompare|\bwhich\b.*\bor\b|\bwho\b.*\bor\b").unwrap())
}

fn abstractive_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(summari[sz]e|summary|describe|discuss|explain|overview)\b").unwrap())
}

fn possessive_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\w['’]s\b").unwrap())
}

/// Counts runs of capitalized words, ignoring the sentence-initial word.
fn named_entities(query: &str) -> usize {
    let words: Vec<&str> = query
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric() && c != '&'))
        .collect();
    let mut runs = 0;
    let mut in_run = false;
    for (i, w) in words.iter().enumerate() {
        let capitalized = i > 0 && w.chars().next().is_some_and(char::is_uppercase);
        if capitalized {
            if !in_run {
                runs += 1;
                in_run = true;
            }
        } else if !(in_run && NAME_CONNECTORS.contains(&w.to_lowercase().as_str())) {
            in_run = false;
        }
    }
    runs
}

pub(crate) fn classify_task(query: &str) -> TaskType {
    let q = query.to_lowercase();
    if arithmetic_re().is_match(&q) {
        TaskType::Arithmetic
    } else if bridge_re().is_match(&q) || possessive_re().find_iter(&q).count() >= 2 {
        TaskType::MultiBridge
    } else if comparison_re().is_match(&q) && named_entities(query) >= 2 {
        TaskType::MultiSource
    } else if abstractive_re().is_match(&q) {
        TaskType::Abstractive
    } else {
        TaskType::Extractive
    }
}

pub(crate) fn classify_info(query: &str) -> InfoPattern {
    let quoted = query.matches('"').count() >= 2 || query.contains('“');
    let numeral = query.chars().any(|c| c.is_ascii_digit());
    let acronym = query.split_whitespace().any(|w| {
        let w = w.trim_matches(|c: char| !c.is_alphanumeric());
        w.chars().filter(|c| c.is_uppercase()).count() >= 2 && w.chars().all(|c| c.is_uppercase() || c.is_ascii_digit())
    });
    if quoted || numeral || acronym {
        InfoPattern::Exact
    } else {
        InfoPattern::Same
    }
}

pub(crate) fn evidence_present(tokenizer: &dyn Tokenizer, query: &str, context: &[&str]) -> bool {
    let wanted: HashSet<String> = tokenizer
        .terms(query)
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect();
    if wanted.is_empty() {
        return false;
    }
    let seen: HashSet<String> = context.iter().flat_map(|c| tokenizer.terms(c)).collect();
    let hit = wanted.iter().filter(|t| seen.contains(*t)).count();
    hit as f64 / wanted.len() as f64 >= EVIDENCE_COVERAGE
}

/// Deterministic rule-based analyzer for offline runs and tests. It answers
/// in the same mapping format a language model is asked for, so replies go
/// through the regular parser.
pub struct HeuristicAnalyzer {
    tokenizer: Arc<dyn Tokenizer>,
}

impl HeuristicAnalyzer {
    pub fn new(tokenizer: Arc<dyn Tokenizer>) -> Self {
        Self { tokenizer }
    }

    pub fn judge(&self, query: &str, context: &[&str]) -> TaskAnalysis {
        TaskAnalysis::new(
            classify_task(query),
            classify_info(query),
            evidence_present(self.tokenizer.as_ref(), query, context),
        )
    }
}

impl AnalyzerBackend for HeuristicAnalyzer {
    fn id(&self) -> String {
        "heuristic".to_string()
    }

    fn respond(&self, request: &AnalysisRequest<'_>) -> Result<BackendReply, GatewayError> {
        Ok(BackendReply {
            text: self.judge(request.query, request.context).render(),
            exchange: None,
        })
    }
}
