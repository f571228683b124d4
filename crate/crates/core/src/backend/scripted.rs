//! Offline backends used as oracles in tests and for dry runs.

use super::{
    completion_body, ChatRequest, GenerationBackend, RawToolCall, RequestContext, TransportError,
};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Mutex;

fn missing_reference() -> TransportError {
    TransportError::Permanent {
        status: 400,
        body: "no reference answer in request context".into(),
    }
}

/// Returns the last user message.
pub struct EchoBackend {
    model: String,
}

impl EchoBackend {
    pub fn new(model: &str) -> Self {
        Self {
            model: model.into(),
        }
    }
}

impl GenerationBackend for EchoBackend {
    fn id(&self) -> &str {
        "echo"
    }
    fn model(&self) -> &str {
        &self.model
    }
    fn max_in_flight(&self) -> usize {
        usize::MAX
    }
    fn send(
        &self,
        _: &str,
        req: &ChatRequest,
        _: &RequestContext<'_>,
    ) -> Result<String, TransportError> {
        let last = req
            .messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .unwrap_or("");
        Ok(completion_body(last, &[]))
    }
}

/// Returns the gold answer verbatim.
pub struct ReferenceEchoBackend {
    model: String,
}

impl ReferenceEchoBackend {
    pub fn new(model: &str) -> Self {
        Self {
            model: model.into(),
        }
    }
}

impl GenerationBackend for ReferenceEchoBackend {
    fn id(&self) -> &str {
        "reference-echo"
    }
    fn model(&self) -> &str {
        &self.model
    }
    fn max_in_flight(&self) -> usize {
        usize::MAX
    }
    fn send(
        &self,
        _: &str,
        _: &ChatRequest,
        ctx: &RequestContext<'_>,
    ) -> Result<String, TransportError> {
        let reference = ctx.reference.ok_or_else(missing_reference)?;
        Ok(completion_body(reference, &[]))
    }
}

/// The gold answer with its last word (the last whitespace-separated
/// piece containing a letter or digit) removed.
pub fn drop_last_word(text: &str) -> String {
    let mut words: Vec<&str> = text.split_whitespace().collect();
    while let Some(w) = words.pop() {
        if w.chars().any(char::is_alphanumeric) {
            break;
        }
    }
    words.join(" ")
}

/// Returns the gold answer minus its last word.
pub struct CorruptingBackend {
    model: String,
}

impl CorruptingBackend {
    pub fn new(model: &str) -> Self {
        Self {
            model: model.into(),
        }
    }
}

impl GenerationBackend for CorruptingBackend {
    fn id(&self) -> &str {
        "corrupting"
    }
    fn model(&self) -> &str {
        &self.model
    }
    fn max_in_flight(&self) -> usize {
        usize::MAX
    }
    fn send(
        &self,
        _: &str,
        _: &ChatRequest,
        ctx: &RequestContext<'_>,
    ) -> Result<String, TransportError> {
        let reference = ctx.reference.ok_or_else(missing_reference)?;
        Ok(completion_body(&drop_last_word(reference), &[]))
    }
}

/// Always answers with empty content.
pub struct EmptyBackend {
    model: String,
}

impl EmptyBackend {
    pub fn new(model: &str) -> Self {
        Self {
            model: model.into(),
        }
    }
}

impl GenerationBackend for EmptyBackend {
    fn id(&self) -> &str {
        "empty"
    }
    fn model(&self) -> &str {
        &self.model
    }
    fn max_in_flight(&self) -> usize {
        usize::MAX
    }
    fn send(
        &self,
        _: &str,
        _: &ChatRequest,
        _: &RequestContext<'_>,
    ) -> Result<String, TransportError> {
        Ok(completion_body("", &[]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScriptStep {
    /// Plain text reply.
    Reply {
        content: String,
    },
    /// Reply with the gold answer.
    Reference,
    /// Structured call in the response's `tool_calls` field.
    ToolCall {
        name: String,
        arguments: String,
    },
    /// Call written into the text inside `<tool_call>` tags.
    TextCall {
        name: String,
        arguments: String,
    },
    Transient {
        message: String,
    },
    Permanent {
        status: u16,
        body: String,
    },
    /// Response body sent as is.
    Raw {
        body: String,
    },
}

/// Replays a fixed script for every item; each item keeps its own
/// position, and the last step repeats once the script runs out.
pub struct ScriptedBackend {
    model: String,
    script: Vec<ScriptStep>,
    position: Mutex<HashMap<String, usize>>,
}

impl ScriptedBackend {
    pub fn new(model: &str, script: Vec<ScriptStep>) -> Self {
        assert!(!script.is_empty(), "script must not be empty");
        Self {
            model: model.into(),
            script,
            position: Mutex::new(HashMap::new()),
        }
    }
}

impl GenerationBackend for ScriptedBackend {
    fn id(&self) -> &str {
        "scripted"
    }
    fn model(&self) -> &str {
        &self.model
    }
    fn max_in_flight(&self) -> usize {
        usize::MAX
    }
    fn send(
        &self,
        _: &str,
        _: &ChatRequest,
        ctx: &RequestContext<'_>,
    ) -> Result<String, TransportError> {
        let step = {
            let mut pos = self.position.lock().expect("script position lock");
            let n = pos.entry(ctx.item_id.to_string()).or_insert(0);
            let step = self.script[(*n).min(self.script.len() - 1)].clone();
            *n += 1;
            step
        };
        match step {
            ScriptStep::Reply { content } => Ok(completion_body(&content, &[])),
            ScriptStep::Reference => Ok(completion_body(
                ctx.reference.ok_or_else(missing_reference)?,
                &[],
            )),
            ScriptStep::ToolCall { name, arguments } => Ok(completion_body(
                "",
                &[RawToolCall {
                    id: Some("call_0".into()),
                    name,
                    arguments,
                }],
            )),
            ScriptStep::TextCall { name, arguments } => {
                let block = serde_json::json!({"name": name, "arguments": arguments});
                Ok(completion_body(
                    &format!("<tool_call>{block}</tool_call>"),
                    &[],
                ))
            }
            ScriptStep::Transient { message } => Err(TransportError::Transient(message)),
            ScriptStep::Permanent { status, body } => {
                Err(TransportError::Permanent { status, body })
            }
            ScriptStep::Raw { body } => Ok(body),
        }
    }
}

/// Fails the first `failures` attempts of every item with a transient
/// error, then delegates.
pub struct FlakyBackend {
    inner: Box<dyn GenerationBackend>,
    failures: u32,
    seen: Mutex<HashMap<String, u32>>,
}

impl FlakyBackend {
    pub fn new(inner: Box<dyn GenerationBackend>, failures: u32) -> Self {
        Self {
            inner,
            failures,
            seen: Mutex::new(HashMap::new()),
        }
    }
}

impl GenerationBackend for FlakyBackend {
    fn id(&self) -> &str {
        self.inner.id()
    }
    fn model(&self) -> &str {
        self.inner.model()
    }
    fn max_in_flight(&self) -> usize {
        self.inner.max_in_flight()
    }
    fn supports_tools(&self) -> bool {
        self.inner.supports_tools()
    }
    fn send(
        &self,
        body: &str,
        req: &ChatRequest,
        ctx: &RequestContext<'_>,
    ) -> Result<String, TransportError> {
        let fail = {
            let mut seen = self.seen.lock().expect("flaky counter lock");
            let n = seen.entry(ctx.item_id.to_string()).or_insert(0);
            *n += 1;
            *n <= self.failures
        };
        if fail {
            return Err(TransportError::Transient("injected failure".into()));
        }
        self.inner.send(body, req, ctx)
    }
}
