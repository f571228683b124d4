//! Agentic knowledge-base access: the model gets a retrieval tool and
//! decides when to call it.

use super::prompt::escape_block;
use super::toolcall::{classify_response, ToolCallKind, ToolCallOutcome};
use super::{KbIndex, RetrievalError, RetrievalHit};
use crate::backend::{
    generate, ChatMessage, ChatRequest, Exchange, GenerateError, GenerationBackend,
    GenerationParams, RequestContext, RetryPolicy, Usage, WireFunction, WireToolCall,
};
use crate::embedding::EmbeddingProvider;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;

/// Generic tool name exposed in nKB mode.
pub const DEFAULT_TOOL_NAME: &str = "search";

pub fn tool_schema(name: &str) -> Value {
    serde_json::json!({
        "type": "function",
        "function": {
            "name": name,
            "description": "Search the ESG knowledge base and return the most relevant passages.",
            "parameters": {
                "type": "object",
                "properties": {"query": {"type": "string", "description": "Search query"}},
                "required": ["query"],
            },
        },
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub step: usize,
    pub outcome: ToolCallOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NkbResult {
    pub answer: String,
    pub steps: usize,
    pub outcomes: Vec<StepOutcome>,
    /// Hits injected by dispatched calls, in dispatch order.
    pub hits: Vec<RetrievalHit>,
    pub truncated: bool,
    pub usage: Usage,
}

#[derive(Debug, thiserror::Error)]
pub enum NkbError {
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

pub struct NkbEnv<'a> {
    pub index: &'a KbIndex,
    pub contexts: &'a BTreeMap<String, String>,
    pub embedder: &'a dyn EmbeddingProvider,
    pub backend: &'a dyn GenerationBackend,
    pub params: GenerationParams,
    pub retry: RetryPolicy,
    pub k: usize,
    pub max_steps: usize,
    pub tool_name: &'a str,
}

fn format_hits(
    hits: &[RetrievalHit],
    contexts: &BTreeMap<String, String>,
) -> Result<String, RetrievalError> {
    let mut out = String::new();
    for (rank, h) in hits.iter().enumerate() {
        let text = contexts
            .get(&h.doc_id)
            .ok_or_else(|| RetrievalError::MissingContext(h.doc_id.clone()))?;
        out.push_str(&format!(
            "<<<PASSAGE {} {}>>>\n{}\n<<<END>>>\n",
            rank + 1,
            escape_block(&h.doc_id),
            escape_block(text)
        ));
    }
    Ok(out)
}

/// ReAct-style loop: generate with the tool schema, dispatch valid calls to
/// retrieval, feed results back, and stop on a reply without a call or
/// after `max_steps` generations.
pub fn run_nkb_loop(
    prompt: &str,
    env: &NkbEnv<'_>,
    ctx: &RequestContext<'_>,
    exchanges: &mut Vec<Exchange>,
) -> Result<NkbResult, NkbError> {
    let registered = [env.tool_name];
    let mut messages = vec![ChatMessage::user(prompt)];
    let mut result = NkbResult {
        answer: String::new(),
        steps: 0,
        outcomes: Vec::new(),
        hits: Vec::new(),
        truncated: false,
        usage: Usage::default(),
    };
    for step in 1..=env.max_steps.max(1) {
        let request = ChatRequest {
            model: env.backend.model().to_string(),
            messages: messages.clone(),
            temperature: env.params.temperature,
            max_tokens: env.params.max_new_tokens,
            tools: Some(vec![tool_schema(env.tool_name)]),
        };
        let out = generate(env.backend, &request, &env.retry, ctx, exchanges)?;
        result.steps = step;
        result.usage.add(out.usage);
        result.answer = out.content.clone();
        let outcome = classify_response(&out.tool_calls, &out.content, &registered);
        result.outcomes.push(StepOutcome {
            step,
            outcome: outcome.clone(),
        });
        if outcome.kind == ToolCallKind::NoCall {
            return Ok(result);
        }

        let call_id = out.tool_calls.first().and_then(|c| c.id.clone());
        let mut assistant = ChatMessage::assistant(out.content.clone());
        assistant.tool_calls = out
            .tool_calls
            .iter()
            .map(|c| WireToolCall {
                id: c.id.clone(),
                kind: "function".into(),
                function: WireFunction {
                    name: c.name.clone(),
                    arguments: c.arguments.clone(),
                },
            })
            .collect();
        messages.push(assistant);

        let feedback = match outcome.dispatch(|_, args| {
            args.get("query")
                .and_then(Value::as_str)
                .map(str::to_string)
        }) {
            Some(Some(query)) => {
                let hits = env.index.retrieve(&query, env.k, env.embedder)?;
                let text = format_hits(&hits, env.contexts)?;
                result.hits.extend(hits);
                text
            }
            Some(None) => format!(
                "Invalid arguments for `{}`: expected {{\"query\": string}}.",
                env.tool_name
            ),
            None => format!(
                "Unknown tool `{}`. Available tools: {}.",
                outcome.requested_name, env.tool_name
            ),
        };
        let mut reply = match &call_id {
            Some(_) => ChatMessage::new("tool", feedback),
            None => ChatMessage::user(feedback),
        };
        reply.tool_call_id = call_id;
        messages.push(reply);
    }
    result.truncated = true;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ScriptStep, ScriptedBackend};
    use crate::embedding::HashingEmbedder;
    use crate::retrieval::build_index;

    struct Fixture {
        index: KbIndex,
        contexts: BTreeMap<String, String>,
        embedder: HashingEmbedder,
    }

    fn fixture() -> Fixture {
        let embedder = HashingEmbedder::new(32);
        let corpus: Vec<(String, String)> = [
            "water stewardship",
            "board independence",
            "scope 3 emissions",
            "pay equity",
        ]
        .iter()
        .enumerate()
        .map(|(i, t)| (format!("c{i}"), t.to_string()))
        .collect();
        Fixture {
            index: build_index(&corpus, &embedder, 8).unwrap(),
            contexts: corpus.into_iter().collect(),
            embedder,
        }
    }

    fn run(script: Vec<ScriptStep>, max_steps: usize) -> NkbResult {
        let f = fixture();
        let backend = ScriptedBackend::new("m", script);
        let env = NkbEnv {
            index: &f.index,
            contexts: &f.contexts,
            embedder: &f.embedder,
            backend: &backend,
            params: GenerationParams::default(),
            retry: RetryPolicy::default(),
            k: 2,
            max_steps,
            tool_name: DEFAULT_TOOL_NAME,
        };
        let ctx = RequestContext {
            item_id: "q",
            reference: Some("gold"),
        };
        run_nkb_loop("question?", &env, &ctx, &mut Vec::new()).unwrap()
    }

    #[test]
    fn immediate_answer_is_one_step() {
        let r = run(
            vec![ScriptStep::Reply {
                content: "done".into(),
            }],
            4,
        );
        assert_eq!(r.steps, 1);
        assert_eq!(r.outcomes.len(), 1);
        assert_eq!(r.outcomes[0].outcome.kind, ToolCallKind::NoCall);
        assert_eq!(r.answer, "done");
        assert!(r.hits.is_empty());
    }

    #[test]
    fn one_search_then_answer() {
        let r = run(
            vec![
                ScriptStep::ToolCall {
                    name: "search".into(),
                    arguments: r#"{"query": "emissions"}"#.into(),
                },
                ScriptStep::Reference,
            ],
            4,
        );
        assert_eq!(r.steps, 2);
        let valid = r
            .outcomes
            .iter()
            .filter(|o| o.outcome.kind == ToolCallKind::Valid)
            .count();
        assert_eq!(valid, 1);
        assert_eq!(r.hits.len(), 2);
        assert_eq!(r.answer, "gold");
        assert!(!r.truncated);
    }

    #[test]
    fn misspelled_calls_are_logged_not_dispatched() {
        let typo = ScriptStep::TextCall {
            name: "serch".into(),
            arguments: r#"{"query": "x"}"#.into(),
        };
        let r = run(
            vec![
                typo.clone(),
                typo.clone(),
                typo,
                ScriptStep::Reply {
                    content: "answer".into(),
                },
            ],
            5,
        );
        let malformed: Vec<_> = r
            .outcomes
            .iter()
            .filter(|o| o.outcome.kind == ToolCallKind::Malformed)
            .collect();
        assert_eq!(malformed.len(), 3);
        assert!(malformed.iter().all(|o| o.outcome.edit_distance == 1));
        assert!(r.hits.is_empty());
        assert_eq!(r.steps, 4);
    }

    #[test]
    fn step_budget_truncates() {
        let r = run(
            vec![ScriptStep::ToolCall {
                name: "search".into(),
                arguments: r#"{"query": "pay"}"#.into(),
            }],
            3,
        );
        assert!(r.truncated);
        assert_eq!(r.steps, 3);
        assert_eq!(r.hits.len(), 6);
    }
}
