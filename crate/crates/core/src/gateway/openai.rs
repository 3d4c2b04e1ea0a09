use super::{estimate_prompt_tokens, validate, ChatBackend, ChatExchange, ChatMessage, GatewayError, GenerationParams};
use crate::tokenizer::Tokenizer;
use serde::Deserialize;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "OKRA_API_KEY";

#[derive(Debug, Clone)]
pub struct OpenAiConfig {
    /// Base URL; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    /// Retries after the first attempt for transient failures.
    pub max_retries: u32,
    pub backoff_base: Duration,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl OpenAiConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            max_retries: 2,
            backoff_base: Duration::from_millis(500),
            timeout: Duration::from_secs(120),
            max_in_flight: 4,
        }
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

/// Counting semaphore bounding concurrent requests.
struct InFlight {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.permits.lock().expect("semaphore poisoned");
        while *n == 0 {
            n = self.freed.wait(n).expect("semaphore poisoned");
        }
        *n -= 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("semaphore poisoned") += 1;
        self.0.freed.notify_one();
    }
}

enum Attempt {
    Done(ChatExchange),
    Retry(String),
    Fatal(GatewayError),
}

/// Blocking client for OpenAI-compatible `/chat/completions` endpoints.
pub struct OpenAiChatClient {
    config: OpenAiConfig,
    http: reqwest::blocking::Client,
    tokenizer: Arc<dyn Tokenizer>,
    in_flight: InFlight,
}

impl OpenAiChatClient {
    pub fn new(config: OpenAiConfig, tokenizer: Arc<dyn Tokenizer>) -> Result<Self, GatewayError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::InvalidRequest(format!("cannot build http client: {e}")))?;
        let permits = config.max_in_flight.max(1);
        Ok(Self {
            config,
            http,
            tokenizer,
            in_flight: InFlight {
                permits: Mutex::new(permits),
                freed: Condvar::new(),
            },
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, messages: &[ChatMessage], params: &GenerationParams) -> Attempt {
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": messages
                .iter()
                .map(|m| serde_json::json!({"role": m.role.as_str(), "content": m.content}))
                .collect::<Vec<_>>(),
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        let mut req = self.http.post(self.endpoint()).json(&body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let started = Instant::now();
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        if status.as_u16() == 429 || status.is_server_error() {
            return Attempt::Retry(format!("status {}: {}", status.as_u16(), text));
        }
        if !status.is_success() {
            return Attempt::Fatal(GatewayError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        let parsed: CompletionResponse = match serde_json::from_str(&text) {
            Ok(p) => p,
            Err(e) => return Attempt::Fatal(GatewayError::Shape(e.to_string())),
        };
        let Some(content) = parsed.choices.into_iter().next().and_then(|c| c.message.content) else {
            return Attempt::Fatal(GatewayError::Shape("missing choices[0].message.content".into()));
        };
        let (prompt_tokens, completion_tokens, usage_reported) = match parsed.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens, true),
            None => (
                estimate_prompt_tokens(self.tokenizer.as_ref(), messages),
                self.tokenizer.count_tokens(&content) as u64,
                false,
            ),
        };
        Attempt::Done(ChatExchange {
            request_messages: messages.to_vec(),
            response_text: content,
            prompt_tokens,
            completion_tokens,
            latency: started.elapsed(),
            backend_id: self.id(),
            usage_reported,
            default_used: false,
        })
    }
}

impl ChatBackend for OpenAiChatClient {
    fn id(&self) -> String {
        format!("openai:{}", self.config.model)
    }

    fn complete(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<ChatExchange, GatewayError> {
        validate(messages)?;
        let _permit = self.in_flight.acquire();
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff_base * 2u32.pow(attempt - 1));
            }
            match self.attempt(messages, params) {
                Attempt::Done(ex) => return Ok(ex),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(why) => {
                    log::warn!("chat attempt {} failed: {}", attempt + 1, why);
                    last = why;
                }
            }
        }
        Err(GatewayError::RetriesExhausted { attempts, last })
    }
}
