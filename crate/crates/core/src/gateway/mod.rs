//! Chat-completion backends: an OpenAI-compatible HTTP client and a
//! scripted mock for hermetic tests.

mod openai;
mod scripted;

pub use openai::{OpenAiChatClient, OpenAiConfig, API_KEY_ENV};
pub use scripted::{ScriptError, ScriptRule, ScriptedBackend};

use crate::tokenizer::Tokenizer;
use crate::util::serde_secs;
use serde::{Deserialize, Serialize};
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

impl ChatRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ChatRole::System => "system",
            ChatRole::User => "user",
            ChatRole::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f32,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 512,
        }
    }
}

/// One request/response round with a backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub request_messages: Vec<ChatMessage>,
    pub response_text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    #[serde(with = "serde_secs")]
    pub latency: Duration,
    pub backend_id: String,
    /// True when the token counts came from the backend rather than the local tokenizer.
    pub usage_reported: bool,
    /// Scripted backends only: no rule matched and the default response was used.
    #[serde(default)]
    pub default_used: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("request rejected: {0}")]
    InvalidRequest(String),
    #[error("backend returned non-retryable status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("malformed backend response: {0}")]
    Shape(String),
    #[error("backend failure: {0}")]
    Backend(String),
}

/// A chat-completion backend. Handles are shared across threads.
pub trait ChatBackend: Send + Sync {
    fn id(&self) -> String;

    fn complete(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<ChatExchange, GatewayError>;
}

/// Token count of `text` under the active tokenizer.
pub fn count_tokens(tokenizer: &dyn Tokenizer, text: &str) -> usize {
    tokenizer.count_tokens(text)
}

/// Prompt-side token estimate used when a backend omits usage.
pub fn estimate_prompt_tokens(tokenizer: &dyn Tokenizer, messages: &[ChatMessage]) -> u64 {
    messages.iter().map(|m| tokenizer.count_tokens(&m.content) as u64).sum()
}

fn validate(messages: &[ChatMessage]) -> Result<(), GatewayError> {
    if messages.is_empty() {
        return Err(GatewayError::InvalidRequest("no messages".into()));
    }
    if let Some(m) = messages
        .iter()
        .find(|m| m.role != ChatRole::Assistant && m.content.is_empty())
    {
        return Err(GatewayError::InvalidRequest(format!(
            "empty {} message",
            m.role.as_str()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::WhitespacePunctTokenizer;

    #[test]
    fn default_tokenizer_counts() {
        let t = WhitespacePunctTokenizer;
        assert_eq!(count_tokens(&t, ""), 0);
        assert_eq!(count_tokens(&t, "a b c"), 3);
        let (x, y) = ("How many acres?", "About 82.");
        assert_eq!(
            count_tokens(&t, &format!("{x} {y}")),
            count_tokens(&t, x) + count_tokens(&t, y)
        );
    }

    #[test]
    fn empty_requests_are_rejected() {
        assert!(validate(&[]).is_err());
        assert!(validate(&[ChatMessage::user("")]).is_err());
        assert!(validate(&[ChatMessage::user("q"), ChatMessage::assistant("")]).is_ok());
    }
}
