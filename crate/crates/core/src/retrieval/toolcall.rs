use crate::backend::RawToolCall;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Edit distances up to this are reported as near misses.
pub const NEAR_MISS_DISTANCE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ToolCallKind {
    Valid,
    Malformed,
    NoCall,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCallOutcome {
    pub kind: ToolCallKind,
    pub requested_name: String,
    pub nearest_registered: String,
    pub edit_distance: usize,
    /// Arguments exactly as emitted by the model.
    pub arguments: String,
}

impl ToolCallOutcome {
    fn no_call() -> Self {
        Self {
            kind: ToolCallKind::NoCall,
            requested_name: String::new(),
            nearest_registered: String::new(),
            edit_distance: 0,
            arguments: String::new(),
        }
    }

    pub fn is_near_miss(&self) -> bool {
        self.kind == ToolCallKind::Malformed && self.edit_distance <= NEAR_MISS_DISTANCE
    }

    /// Run `f` with the tool name and parsed arguments, only for a valid
    /// call. Malformed calls are never dispatched, however close the name.
    pub fn dispatch<T>(&self, f: impl FnOnce(&str, &Value) -> T) -> Option<T> {
        if self.kind != ToolCallKind::Valid {
            return None;
        }
        let args: Value = serde_json::from_str(&self.arguments).ok()?;
        Some(f(&self.requested_name, &args))
    }
}

fn nearest<'a>(name: &str, registered: &[&'a str]) -> (&'a str, usize) {
    registered
        .iter()
        .map(|r| (*r, strsim::levenshtein(name, r)))
        .min_by_key(|(_, d)| *d)
        .unwrap_or(("", name.chars().count()))
}

fn classify(name: &str, arguments: String, registered: &[&str]) -> ToolCallOutcome {
    let (near, distance) = nearest(name, registered);
    let args_ok = matches!(
        serde_json::from_str::<Value>(&arguments),
        Ok(Value::Object(_))
    );
    let kind = if distance == 0 && registered.contains(&name) && args_ok {
        ToolCallKind::Valid
    } else {
        ToolCallKind::Malformed
    };
    if kind == ToolCallKind::Malformed {
        tracing::warn!(
            requested = name,
            nearest = near,
            distance,
            "malformed tool call"
        );
    }
    ToolCallOutcome {
        kind,
        requested_name: name.to_string(),
        nearest_registered: near.to_string(),
        edit_distance: distance,
        arguments,
    }
}

/// Pull `name` and raw `arguments` out of a JSON call object. Accepts
/// `{"name", "arguments"|"parameters"}` and `{"function": {...}}`.
fn call_from_json(v: &Value) -> Option<(String, String)> {
    let obj = v.as_object()?;
    if let Some(inner) = obj.get("function").filter(|f| f.is_object()) {
        return call_from_json(inner);
    }
    let name = obj.get("name")?.as_str()?.to_string();
    let args = match obj.get("arguments").or_else(|| obj.get("parameters")) {
        None => "{}".to_string(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
    };
    Some((name, args))
}

/// Best-effort `"name": "..."` scan for blocks that are not valid JSON.
fn scan_name(block: &str) -> String {
    let Some(pos) = block.find("\"name\"") else {
        return String::new();
    };
    let rest = block[pos + 6..].trim_start();
    let Some(rest) = rest.strip_prefix(':') else {
        return String::new();
    };
    let rest = rest.trim_start();
    match rest.strip_prefix('"') {
        Some(r) => r.split('"').next().unwrap_or("").to_string(),
        None => String::new(),
    }
}

/// First tagged (`<tool_call>...</tool_call>`) or fenced JSON block.
fn find_block(text: &str) -> Option<&str> {
    let mut best: Option<(usize, &str)> = None;
    if let Some(start) = text.find("<tool_call>") {
        let body = &text[start + "<tool_call>".len()..];
        let end = body.find("</tool_call>").unwrap_or(body.len());
        best = Some((start, &body[..end]));
    }
    let mut from = 0;
    while let Some(off) = text[from..].find("```") {
        let start = from + off;
        if best.is_some_and(|(b, _)| b < start) {
            break;
        }
        let after = &text[start + 3..];
        let line_end = after.find('\n').unwrap_or(after.len());
        let lang = after[..line_end].trim();
        let body_start = (line_end + 1).min(after.len());
        let body = &after[body_start..];
        let end = body.find("```").unwrap_or(body.len());
        let content = &body[..end];
        let looks_like_call = content.trim_start().starts_with('{') && content.contains("\"name\"");
        if (lang.is_empty() || lang.eq_ignore_ascii_case("json")) && looks_like_call {
            best = Some((start, content));
            break;
        }
        from = start + 3 + body_start + end + if end < body.len() { 3 } else { 0 };
        if from >= text.len() {
            break;
        }
    }
    best.map(|(_, b)| b)
}

/// Classify the first call block in free text.
pub fn parse_tool_call(model_output: &str, registered: &[&str]) -> ToolCallOutcome {
    let Some(block) = find_block(model_output) else {
        return ToolCallOutcome::no_call();
    };
    match serde_json::from_str::<Value>(block.trim())
        .ok()
        .as_ref()
        .and_then(call_from_json)
    {
        Some((name, args)) => classify(&name, args, registered),
        None => {
            let mut outcome = classify(&scan_name(block), block.trim().to_string(), registered);
            outcome.kind = ToolCallKind::Malformed;
            outcome
        }
    }
}

/// Structured calls from the response field take precedence over text.
pub fn classify_response(
    field_calls: &[RawToolCall],
    text: &str,
    registered: &[&str],
) -> ToolCallOutcome {
    match field_calls.first() {
        Some(call) => classify(&call.name, call.arguments.clone(), registered),
        None => parse_tool_call(text, registered),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const REG: &[&str] = &["ESGRetriever"];

    fn tagged(name: &str) -> String {
        format!(
            "<tool_call>{{\"name\": \"{name}\", \"arguments\": {{\"query\": \"x\"}}}}</tool_call>"
        )
    }

    #[test]
    fn exact_name_is_valid() {
        let o = parse_tool_call(&tagged("ESGRetriever"), REG);
        assert_eq!(o.kind, ToolCallKind::Valid);
        assert_eq!(
            o.dispatch(|n, a| (n.to_string(), a["query"].clone()))
                .unwrap()
                .0,
            "ESGRetriever"
        );
    }

    #[test]
    fn misspelled_name_is_malformed_near_miss() {
        let o = parse_tool_call(&tagged("ESGRetriver"), REG);
        assert_eq!(o.kind, ToolCallKind::Malformed);
        assert_eq!(o.nearest_registered, "ESGRetriever");
        assert_eq!(o.edit_distance, 1);
        assert!(o.is_near_miss());
        assert!(o.dispatch(|_, _| ()).is_none());
    }

    #[test]
    fn prose_is_no_call() {
        let o = parse_tool_call("Scope 1 covers direct emissions.", REG);
        assert_eq!(o.kind, ToolCallKind::NoCall);
        let code = "Example:\n```python\nprint(1)\n```\n";
        assert_eq!(parse_tool_call(code, REG).kind, ToolCallKind::NoCall);
    }

    #[test]
    fn fenced_json_and_string_arguments() {
        let text = "Let me look.\n```json\n{\"name\": \"search\", \"arguments\": \"{\\\"query\\\": \\\"water\\\"}\"}\n```";
        let o = parse_tool_call(text, &["search"]);
        assert_eq!(o.kind, ToolCallKind::Valid);
        assert_eq!(o.arguments, "{\"query\": \"water\"}");
    }

    #[test]
    fn bad_json_and_bad_arguments() {
        let o = parse_tool_call(
            "<tool_call>{\"name\": \"search\", oops</tool_call>",
            &["search"],
        );
        assert_eq!(o.kind, ToolCallKind::Malformed);
        assert_eq!(o.requested_name, "search");
        let o = parse_tool_call(
            "<tool_call>{\"name\": \"search\", \"arguments\": \"nope\"}</tool_call>",
            &["search"],
        );
        assert_eq!((o.kind, o.edit_distance), (ToolCallKind::Malformed, 0));
    }

    #[test]
    fn field_takes_precedence() {
        let field = [RawToolCall {
            id: None,
            name: "search".into(),
            arguments: "{}".into(),
        }];
        let o = classify_response(&field, &tagged("other"), &["search"]);
        assert_eq!(o.kind, ToolCallKind::Valid);
    }
}
