//! Chat-completions generation backends and the retrying request driver.
//!
//! A backend performs one attempt and returns the raw response body; the
//! driver in [`generate`] owns retries, backoff, response parsing and the
//! verbatim exchange log.

mod http;
mod scripted;

pub use http::HttpBackend;
pub use scripted::{
    CorruptingBackend, EchoBackend, EmptyBackend, FlakyBackend, ReferenceEchoBackend, ScriptStep,
    ScriptedBackend,
};

use crate::registry::Registry;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;
use std::time::Duration;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    #[serde(default)]
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<WireToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        Self {
            role: role.to_string(),
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: None,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new("system", content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new("user", content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new("assistant", content)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireToolCall {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(rename = "type", default = "function_type")]
    pub kind: String,
    pub function: WireFunction,
}

fn function_type() -> String {
    "function".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireFunction {
    pub name: String,
    /// Some servers send an object instead of a JSON string; both are kept
    /// as text.
    #[serde(default, deserialize_with = "string_or_json")]
    pub arguments: String,
}

fn string_or_json<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    Ok(match Value::deserialize(d)? {
        Value::String(s) => s,
        Value::Null => String::new(),
        other => other.to_string(),
    })
}

/// A tool call as emitted by the model, before any validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawToolCall {
    pub id: Option<String>,
    pub name: String,
    pub arguments: String,
}

impl From<&WireToolCall> for RawToolCall {
    fn from(w: &WireToolCall) -> Self {
        Self {
            id: w.id.clone(),
            name: w.function.name.clone(),
            arguments: w.function.arguments.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tools: Option<Vec<Value>>,
}

#[derive(Debug, Clone, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Debug, Clone, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Clone, Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    tool_calls: Option<Vec<WireToolCall>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
}

impl Usage {
    pub fn add(&mut self, other: Usage) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_new_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_new_tokens: 512,
        }
    }
}

/// Per-item facts a backend may use. Real backends ignore the reference;
/// the oracle test backends read it.
#[derive(Debug, Clone, Copy)]
pub struct RequestContext<'a> {
    pub item_id: &'a str,
    pub reference: Option<&'a str>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    #[error("transient: {0}")]
    Transient(String),
    #[error("HTTP {status}: {body}")]
    Permanent { status: u16, body: String },
}

/// One attempt, kept verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub attempt: u32,
    pub request: String,
    pub response: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
pub enum GenerateError {
    #[error("permanent failure, HTTP {status}: {body}")]
    Permanent { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("backend does not support tool schemas")]
    ToolsUnsupported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutput {
    pub content: String,
    pub tool_calls: Vec<RawToolCall>,
    pub usage: Usage,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationFailure {
    pub error: GenerateError,
    pub exchanges: Vec<Exchange>,
}

pub trait GenerationBackend: Send + Sync {
    fn id(&self) -> &str;
    fn model(&self) -> &str;
    fn max_in_flight(&self) -> usize {
        1
    }
    fn supports_tools(&self) -> bool {
        true
    }
    /// Perform one attempt with the serialized request body.
    fn send(
        &self,
        body: &str,
        request: &ChatRequest,
        ctx: &RequestContext<'_>,
    ) -> Result<String, TransportError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            base_delay_ms: 500,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `n + 1` after `n` failures: base × 2^(n−1),
    /// capped.
    pub fn delay(&self, failures: u32) -> Duration {
        let exp = failures.saturating_sub(1).min(30);
        let ms = self
            .base_delay_ms
            .saturating_mul(1u64 << exp)
            .min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

fn parse_response(body: &str) -> Result<GenerationOutput, GenerateError> {
    let parsed: ChatResponse =
        serde_json::from_str(body).map_err(|e| GenerateError::Malformed(e.to_string()))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GenerateError::Malformed("response has no choices".into()))?;
    Ok(GenerationOutput {
        content: choice.message.content.unwrap_or_default(),
        tool_calls: choice
            .message
            .tool_calls
            .unwrap_or_default()
            .iter()
            .map(RawToolCall::from)
            .collect(),
        usage: parsed.usage.unwrap_or_default(),
        attempts: 0,
    })
}

/// Send `request` with retries. Every attempt is appended to `exchanges`
/// whether or not it succeeds.
pub fn generate(
    backend: &dyn GenerationBackend,
    request: &ChatRequest,
    retry: &RetryPolicy,
    ctx: &RequestContext<'_>,
    exchanges: &mut Vec<Exchange>,
) -> Result<GenerationOutput, GenerateError> {
    if request.tools.is_some() && !backend.supports_tools() {
        return Err(GenerateError::ToolsUnsupported);
    }
    let body =
        serde_json::to_string(request).map_err(|e| GenerateError::Malformed(e.to_string()))?;
    let attempts = retry.max_attempts.max(1);
    let mut last = String::new();
    for attempt in 1..=attempts {
        if attempt > 1 {
            std::thread::sleep(retry.delay(attempt - 1));
        }
        match backend.send(&body, request, ctx) {
            Ok(text) => {
                let result = parse_response(&text);
                exchanges.push(Exchange {
                    attempt,
                    request: body.clone(),
                    error: result.as_ref().err().map(|e| e.to_string()),
                    response: Some(text),
                });
                return result.map(|mut out| {
                    out.attempts = attempt;
                    out
                });
            }
            Err(err) => {
                exchanges.push(Exchange {
                    attempt,
                    request: body.clone(),
                    response: None,
                    error: Some(err.to_string()),
                });
                match err {
                    TransportError::Permanent { status, body } => {
                        return Err(GenerateError::Permanent { status, body })
                    }
                    TransportError::Transient(msg) => {
                        tracing::debug!(attempt, item = ctx.item_id, "transient failure: {msg}");
                        last = msg;
                    }
                }
            }
        }
    }
    Err(GenerateError::Exhausted { attempts, last })
}

/// Body of a successful chat-completions response, as the scripted
/// backends emit it.
pub fn completion_body(content: &str, tool_calls: &[RawToolCall]) -> String {
    let calls: Vec<Value> = tool_calls
        .iter()
        .map(|c| {
            let mut v = serde_json::json!({
                "type": "function",
                "function": {"name": c.name, "arguments": c.arguments},
            });
            if let Some(id) = &c.id {
                v["id"] = Value::String(id.clone());
            }
            v
        })
        .collect();
    let mut message = serde_json::json!({"role": "assistant", "content": content});
    if !calls.is_empty() {
        message["tool_calls"] = Value::Array(calls);
    }
    let words = content.split_whitespace().count();
    serde_json::json!({
        "choices": [{"index": 0, "message": message, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 0, "completion_tokens": words},
    })
    .to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    /// Registry name: `http`, `echo`, `reference-echo`, `corrupting`,
    /// `empty` or `scripted`.
    pub kind: String,
    pub endpoint: Option<String>,
    pub model: String,
    /// Environment variable holding a bearer token.
    pub api_key_env: Option<String>,
    pub timeout_s: u64,
    pub max_in_flight: usize,
    /// Steps replayed per item by the `scripted` backend.
    pub script: Vec<ScriptStep>,
    /// Transient failures injected before each item's first success.
    pub transient_failures: u32,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: "http".into(),
            endpoint: None,
            model: "default".into(),
            api_key_env: None,
            timeout_s: 300,
            max_in_flight: 1,
            script: Vec::new(),
            transient_failures: 0,
        }
    }
}

pub type BackendRegistry = Registry<dyn GenerationBackend, BackendConfig>;

fn flaky(c: &BackendConfig, inner: Box<dyn GenerationBackend>) -> Box<dyn GenerationBackend> {
    if c.transient_failures > 0 {
        Box::new(FlakyBackend::new(inner, c.transient_failures))
    } else {
        inner
    }
}

pub fn default_backends() -> BackendRegistry {
    let mut reg = BackendRegistry::new("backend");
    reg.register("http", |c: &BackendConfig| {
        HttpBackend::new(c).map(|b| Box::new(b) as Box<dyn GenerationBackend>)
    });
    reg.register("echo", |c: &BackendConfig| {
        Ok(flaky(c, Box::new(EchoBackend::new(&c.model))))
    });
    reg.register("reference-echo", |c: &BackendConfig| {
        Ok(flaky(c, Box::new(ReferenceEchoBackend::new(&c.model))))
    });
    reg.register("corrupting", |c: &BackendConfig| {
        Ok(flaky(c, Box::new(CorruptingBackend::new(&c.model))))
    });
    reg.register("empty", |c: &BackendConfig| {
        Ok(flaky(c, Box::new(EmptyBackend::new(&c.model))))
    });
    reg.register("scripted", |c: &BackendConfig| {
        if c.script.is_empty() {
            return Err("scripted backend needs a non-empty script".into());
        }
        Ok(flaky(
            c,
            Box::new(ScriptedBackend::new(&c.model, c.script.clone())),
        ))
    });
    reg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(text: &str) -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            messages: vec![ChatMessage::user(text)],
            temperature: 0.0,
            max_tokens: 16,
            tools: None,
        }
    }

    fn ctx() -> RequestContext<'static> {
        RequestContext {
            item_id: "q1",
            reference: Some("the gold answer"),
        }
    }

    fn fast() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 0,
            max_delay_ms: 0,
        }
    }

    #[test]
    fn echo_returns_last_user_message() {
        let mut log = Vec::new();
        let out = generate(
            &EchoBackend::new("m"),
            &request("hello there"),
            &fast(),
            &ctx(),
            &mut log,
        )
        .unwrap();
        assert_eq!(out.content, "hello there");
        assert_eq!(out.attempts, 1);
        assert_eq!(log.len(), 1);
        assert_eq!(
            log[0].request,
            serde_json::to_string(&request("hello there")).unwrap()
        );
    }

    #[test]
    fn empty_choices_is_malformed() {
        let b = ScriptedBackend::new(
            "m",
            vec![ScriptStep::Raw {
                body: r#"{"choices": []}"#.into(),
            }],
        );
        let mut log = Vec::new();
        let err = generate(&b, &request("x"), &fast(), &ctx(), &mut log).unwrap_err();
        assert!(matches!(err, GenerateError::Malformed(_)));
        assert_eq!(log.len(), 1);
    }

    #[test]
    fn one_transient_then_success() {
        let b = FlakyBackend::new(Box::new(EchoBackend::new("m")), 1);
        let mut log = Vec::new();
        let out = generate(&b, &request("x"), &fast(), &ctx(), &mut log).unwrap();
        assert_eq!(out.attempts, 2);
        assert_eq!(log.len(), 2);
        assert!(log[0].response.is_none());
    }

    #[test]
    fn attempts_are_bounded() {
        let b = FlakyBackend::new(Box::new(EchoBackend::new("m")), 10);
        let mut log = Vec::new();
        let err = generate(&b, &request("x"), &fast(), &ctx(), &mut log).unwrap_err();
        assert!(matches!(err, GenerateError::Exhausted { attempts: 3, .. }));
        assert_eq!(log.len(), 3);
    }

    #[test]
    fn permanent_is_not_retried() {
        let b = ScriptedBackend::new(
            "m",
            vec![ScriptStep::Permanent {
                status: 400,
                body: "bad".into(),
            }],
        );
        let mut log = Vec::new();
        let err = generate(&b, &request("x"), &fast(), &ctx(), &mut log).unwrap_err();
        assert!(matches!(err, GenerateError::Permanent { status: 400, .. }));
        assert_eq!(log.len(), 1);
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_attempts: 5,
            base_delay_ms: 100,
            max_delay_ms: 350,
        };
        let ms: Vec<u128> = (1..=4).map(|n| p.delay(n).as_millis()).collect();
        assert_eq!(ms, [100, 200, 350, 350]);
    }

    #[test]
    fn tool_call_arguments_accept_objects() {
        let body = r#"{"choices":[{"message":{"content":null,"tool_calls":[{"function":{"name":"search","arguments":{"query":"x"}}}]}}]}"#;
        let out = parse_response(body).unwrap();
        assert_eq!(out.tool_calls[0].name, "search");
        assert_eq!(out.tool_calls[0].arguments, r#"{"query":"x"}"#);
        assert_eq!(out.content, "");
    }

    #[test]
    fn registry_names() {
        let reg = default_backends();
        let names: Vec<&str> = reg.names().collect();
        assert_eq!(
            names,
            [
                "corrupting",
                "echo",
                "empty",
                "http",
                "reference-echo",
                "scripted"
            ]
        );
        assert!(reg.build("http", &BackendConfig::default()).is_err());
        let cfg = BackendConfig {
            kind: "echo".into(),
            ..Default::default()
        };
        assert_eq!(reg.build("echo", &cfg).unwrap().id(), "echo");
    }
}
