//! Pluggable tokenization.
//!
//! Every token-count constant in the engine (chunk granularity, the
//! long-context limit, cost accounting when a backend omits usage) is
//! interpreted in the units of the active [`Tokenizer`].

use std::ops::Range;

/// Splits text into tokens and reports their byte ranges.
pub trait Tokenizer: Send + Sync {
    /// Stable identifier, recorded in persisted index manifests.
    fn id(&self) -> &str;

    /// Byte ranges of every token in `text`, in order and non-overlapping.
    fn token_spans(&self, text: &str) -> Vec<Range<usize>>;

    fn count_tokens(&self, text: &str) -> usize {
        self.token_spans(text).len()
    }

    /// Lowercased word-like tokens used for lexical matching.
    fn terms(&self, text: &str) -> Vec<String> {
        self.token_spans(text)
            .into_iter()
            .map(|r| &text[r])
            .filter(|t| t.chars().any(char::is_alphanumeric))
            .map(str::to_lowercase)
            .collect()
    }
}

/// Deterministic whitespace-plus-punctuation splitter.
///
/// A token is either a maximal run of alphanumeric characters or a single
/// non-whitespace, non-alphanumeric character. Whitespace is never part of
/// a token, so `count(x + " " + y) == count(x) + count(y)` always holds.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespacePunctTokenizer;

impl WhitespacePunctTokenizer {
    pub const ID: &'static str = "ws-punct-v1";
}

impl Tokenizer for WhitespacePunctTokenizer {
    fn id(&self) -> &str {
        Self::ID
    }

    fn token_spans(&self, text: &str) -> Vec<Range<usize>> {
        let mut spans = Vec::new();
        let mut word_start: Option<usize> = None;
        for (i, c) in text.char_indices() {
            if c.is_alphanumeric() {
                if word_start.is_none() {
                    word_start = Some(i);
                }
                continue;
            }
            if let Some(start) = word_start.take() {
                spans.push(start..i);
            }
            if !c.is_whitespace() {
                spans.push(i..i + c.len_utf8());
            }
        }
        if let Some(start) = word_start {
            spans.push(start..text.len());
        }
        spans
    }
}

/// Resolves a tokenizer by id. Only the built-in splitter is known.
pub fn tokenizer_by_id(id: &str) -> Option<std::sync::Arc<dyn Tokenizer>> {
    match id {
        WhitespacePunctTokenizer::ID => Some(std::sync::Arc::new(WhitespacePunctTokenizer)),
        _ => None,
    }
}
