use super::{estimate_prompt_tokens, validate, ChatBackend, ChatExchange, ChatMessage, GatewayError, GenerationParams};
use crate::tokenizer::Tokenizer;
use regex::Regex;
use serde::Deserialize;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

#[derive(Debug, Clone)]
enum Matcher {
    Substring(String),
    Pattern(Regex),
}

impl Matcher {
    fn matches(&self, haystack: &str) -> bool {
        match self {
            Matcher::Substring(s) => haystack.contains(s.as_str()),
            Matcher::Pattern(re) => re.is_match(haystack),
        }
    }
}

#[derive(Debug, Clone)]
enum Reply {
    Text(String),
    Error(String),
}

/// One ordered rule of a script.
#[derive(Debug, Clone)]
pub struct ScriptRule {
    matcher: Matcher,
    reply: Reply,
    usage: Option<(u64, u64)>,
    once: bool,
}

impl ScriptRule {
    /// Fires when the concatenated message contents contain `needle`.
    pub fn contains(needle: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            matcher: Matcher::Substring(needle.into()),
            reply: Reply::Text(response.into()),
            usage: None,
            once: false,
        }
    }

    /// Fires when the concatenated message contents match `pattern`.
    pub fn pattern(pattern: &str, response: impl Into<String>) -> Result<Self, ScriptError> {
        let re = Regex::new(pattern).map_err(|e| ScriptError::Invalid {
            line: 0,
            reason: e.to_string(),
        })?;
        Ok(Self {
            matcher: Matcher::Pattern(re),
            reply: Reply::Text(response.into()),
            usage: None,
            once: false,
        })
    }

    /// Fails the call instead of answering.
    pub fn failing(needle: impl Into<String>, error: impl Into<String>) -> Self {
        Self {
            matcher: Matcher::Substring(needle.into()),
            reply: Reply::Error(error.into()),
            usage: None,
            once: false,
        }
    }

    pub fn with_usage(mut self, prompt_tokens: u64, completion_tokens: u64) -> Self {
        self.usage = Some((prompt_tokens, completion_tokens));
        self
    }

    /// The rule is consumed after it fires once.
    pub fn once(mut self) -> Self {
        self.once = true;
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("cannot read script {0}: {1}")]
    Io(String, std::io::Error),
    #[error("invalid script record at line {line}: {reason}")]
    Invalid { line: usize, reason: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleRecord {
    #[serde(default, rename = "match")]
    match_: Option<String>,
    #[serde(default)]
    pattern: Option<String>,
    #[serde(default)]
    response: Option<String>,
    #[serde(default)]
    error: Option<String>,
    #[serde(default)]
    usage: Option<UsageRecord>,
    #[serde(default)]
    once: bool,
    #[serde(default)]
    default: Option<String>,
}

#[derive(Deserialize)]
struct UsageRecord {
    prompt_tokens: u64,
    completion_tokens: u64,
}

/// Deterministic chat backend driven by ordered match rules.
///
/// Matching runs against all message contents joined by newlines; the first
/// live rule wins. `once` rules are consumed when they fire, which lets one
/// script describe a multi-turn dialogue. Without a match the default
/// response is returned and the exchange is flagged `default_used`.
pub struct ScriptedBackend {
    rules: Mutex<Vec<(ScriptRule, bool)>>,
    default_response: String,
    tokenizer: Arc<dyn Tokenizer>,
    name: String,
}

impl ScriptedBackend {
    pub const DEFAULT_RESPONSE: &'static str = "unanswerable";

    pub fn new(rules: Vec<ScriptRule>, tokenizer: Arc<dyn Tokenizer>) -> Self {
        Self {
            rules: Mutex::new(rules.into_iter().map(|r| (r, false)).collect()),
            default_response: Self::DEFAULT_RESPONSE.to_string(),
            tokenizer,
            name: "scripted".to_string(),
        }
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.default_response = response.into();
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Loads a line-delimited script. Each record is either a rule
    /// (`match` or `pattern`, plus `response` or `error`, optional `usage`
    /// and `once`) or `{"default": "..."}`.
    pub fn from_file(path: &Path, tokenizer: Arc<dyn Tokenizer>) -> Result<Self, ScriptError> {
        let raw = std::fs::read_to_string(path).map_err(|e| ScriptError::Io(path.display().to_string(), e))?;
        let mut me = Self::parse(&raw, tokenizer)?;
        me.name = format!(
            "scripted:{}",
            path.file_name()
                .map_or_else(String::new, |n| n.to_string_lossy().into_owned())
        );
        Ok(me)
    }

    pub fn parse(raw: &str, tokenizer: Arc<dyn Tokenizer>) -> Result<Self, ScriptError> {
        let mut rules = Vec::new();
        let mut default = None;
        for (i, line) in raw.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let invalid = |reason: String| ScriptError::Invalid { line: line_no, reason };
            let rec: RuleRecord = serde_json::from_str(line).map_err(|e| invalid(e.to_string()))?;
            if let Some(d) = rec.default {
                default = Some(d);
                continue;
            }
            let matcher = match (rec.match_, rec.pattern) {
                (Some(s), None) => Matcher::Substring(s),
                (None, Some(p)) => Matcher::Pattern(Regex::new(&p).map_err(|e| invalid(e.to_string()))?),
                _ => return Err(invalid("exactly one of `match` or `pattern` is required".into())),
            };
            let reply = match (rec.response, rec.error) {
                (Some(r), None) => Reply::Text(r),
                (None, Some(e)) => Reply::Error(e),
                _ => return Err(invalid("exactly one of `response` or `error` is required".into())),
            };
            rules.push(ScriptRule {
                matcher,
                reply,
                usage: rec.usage.map(|u| (u.prompt_tokens, u.completion_tokens)),
                once: rec.once,
            });
        }
        let mut me = Self::new(rules, tokenizer);
        if let Some(d) = default {
            me.default_response = d;
        }
        Ok(me)
    }
}

impl ChatBackend for ScriptedBackend {
    fn id(&self) -> String {
        self.name.clone()
    }

    fn complete(&self, messages: &[ChatMessage], _params: &GenerationParams) -> Result<ChatExchange, GatewayError> {
        validate(messages)?;
        let started = Instant::now();
        let haystack = messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");

        let fired = {
            let mut rules = self.rules.lock().expect("script rules poisoned");
            rules
                .iter_mut()
                .find(|(rule, consumed)| !*consumed && rule.matcher.matches(&haystack))
                .map(|(rule, consumed)| {
                    if rule.once {
                        *consumed = true;
                    }
                    (rule.reply.clone(), rule.usage)
                })
        };

        let (text, usage, default_used) = match fired {
            Some((Reply::Error(e), _)) => return Err(GatewayError::Backend(e)),
            Some((Reply::Text(t), usage)) => (t, usage, false),
            None => (self.default_response.clone(), None, true),
        };
        let (prompt_tokens, completion_tokens, usage_reported) = match usage {
            Some((p, c)) => (p, c, true),
            None => (
                estimate_prompt_tokens(self.tokenizer.as_ref(), messages),
                self.tokenizer.count_tokens(&text) as u64,
                false,
            ),
        };
        Ok(ChatExchange {
            request_messages: messages.to_vec(),
            response_text: text,
            prompt_tokens,
            completion_tokens,
            latency: started.elapsed().max(Duration::from_nanos(1)),
            backend_id: self.id(),
            usage_reported,
            default_used,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::WhitespacePunctTokenizer;

    fn tok() -> Arc<dyn Tokenizer> {
        Arc::new(WhitespacePunctTokenizer)
    }

    fn ask(b: &ScriptedBackend, q: &str) -> Result<ChatExchange, GatewayError> {
        b.complete(&[ChatMessage::user(q)], &GenerationParams::default())
    }

    #[test]
    fn scripted_lookup() {
        let b = ScriptedBackend::new(
            vec![ScriptRule::contains(
                "campus size of University of New Haven",
                "82 acres",
            )],
            tok(),
        );
        let ex = ask(&b, "What is the campus size of University of New Haven?").unwrap();
        assert_eq!(ex.response_text, "82 acres");
        assert!(!ex.default_used);
        assert_eq!(ex.prompt_tokens, 11);
        assert_eq!(ex.completion_tokens, 2);
    }

    #[test]
    fn default_response_is_flagged() {
        let b = ScriptedBackend::new(vec![], tok()).with_default("no idea");
        let ex = ask(&b, "anything").unwrap();
        assert_eq!(ex.response_text, "no idea");
        assert!(ex.default_used);
    }

    #[test]
    fn first_matching_rule_wins_and_once_rules_are_consumed() {
        let b = ScriptedBackend::new(
            vec![
                ScriptRule::contains("step", "first").once(),
                ScriptRule::contains("step", "second"),
                ScriptRule::contains("step", "never"),
            ],
            tok(),
        );
        assert_eq!(ask(&b, "step").unwrap().response_text, "first");
        assert_eq!(ask(&b, "step").unwrap().response_text, "second");
        assert_eq!(ask(&b, "step").unwrap().response_text, "second");
    }

    #[test]
    fn reported_usage_is_authoritative() {
        let b = ScriptedBackend::new(vec![ScriptRule::contains("x", "y").with_usage(1000, 100)], tok());
        let ex = ask(&b, "x").unwrap();
        assert_eq!((ex.prompt_tokens, ex.completion_tokens), (1000, 100));
        assert!(ex.usage_reported);
    }

    #[test]
    fn identical_requests_give_identical_responses() {
        let b = ScriptedBackend::new(
            vec![ScriptRule::pattern(r"(?i)capital of \w+", "Paris").unwrap()],
            tok(),
        );
        let a = ask(&b, "What is the Capital of France?").unwrap();
        let c = ask(&b, "What is the Capital of France?").unwrap();
        assert_eq!(a.response_text, c.response_text);
        assert_eq!(
            (a.prompt_tokens, a.completion_tokens),
            (c.prompt_tokens, c.completion_tokens)
        );
    }

    #[test]
    fn parses_script_file_format() {
        let raw = r#"{"default": "fallback"}
{"match": "boom", "error": "simulated outage"}
{"pattern": "^hello", "response": "hi", "usage": {"prompt_tokens": 3, "completion_tokens": 1}, "once": true}
"#;
        let b = ScriptedBackend::parse(raw, tok()).unwrap();
        assert!(matches!(ask(&b, "boom"), Err(GatewayError::Backend(e)) if e == "simulated outage"));
        let hi = ask(&b, "hello there").unwrap();
        assert_eq!(hi.response_text, "hi");
        assert_eq!(hi.prompt_tokens, 3);
        assert_eq!(ask(&b, "hello there").unwrap().response_text, "fallback");
    }

    #[test]
    fn rejects_ambiguous_records() {
        let err = ScriptedBackend::parse(r#"{"match": "a", "pattern": "b", "response": "c"}"#, tok());
        assert!(matches!(err, Err(ScriptError::Invalid { line: 1, .. })));
        let err = ScriptedBackend::parse(r#"{"match": "a"}"#, tok());
        assert!(err.is_err());
    }
}
