//! Knowledge-base access strategies, selected by name at run time.

use super::Mode;
use crate::backend::{
    generate, ChatMessage, ChatRequest, Exchange, GenerateError, GenerationBackend,
    GenerationParams, RequestContext, RetryPolicy, Usage,
};
use crate::dataset::QaTriplet;
use crate::embedding::EmbeddingProvider;
use crate::registry::Registry;
use crate::retrieval::{
    assemble_ekb_prompt, run_nkb_loop, KbIndex, NkbEnv, NkbError, RetrievalError, RetrievalHit,
    StepOutcome, Template,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
pub enum ItemError {
    #[error("generation failed: {0}")]
    Generate(GenerateError),
    #[error("retrieval failed: {0}")]
    Retrieval(String),
    #[error("scoring failed: {0}")]
    Scoring(String),
}

impl From<GenerateError> for ItemError {
    fn from(e: GenerateError) -> Self {
        ItemError::Generate(e)
    }
}

impl From<RetrievalError> for ItemError {
    fn from(e: RetrievalError) -> Self {
        ItemError::Retrieval(e.to_string())
    }
}

impl From<NkbError> for ItemError {
    fn from(e: NkbError) -> Self {
        match e {
            NkbError::Generate(g) => ItemError::Generate(g),
            NkbError::Retrieval(r) => r.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeOutput {
    pub prompt: String,
    pub hits: Vec<RetrievalHit>,
    pub tool_calls: Vec<StepOutcome>,
    pub raw_output: String,
    pub steps: usize,
    pub truncated: bool,
    pub usage: Usage,
}

/// Everything a strategy may touch while answering one item.
pub struct ModeEnv<'a> {
    pub backend: &'a dyn GenerationBackend,
    pub embedder: &'a dyn EmbeddingProvider,
    pub index: Option<&'a KbIndex>,
    pub contexts: &'a BTreeMap<String, String>,
    pub params: GenerationParams,
    pub retry: RetryPolicy,
    pub k: usize,
    pub max_steps: usize,
    pub tool_name: &'a str,
}

impl ModeEnv<'_> {
    fn index(&self) -> Result<&KbIndex, ItemError> {
        self.index
            .ok_or_else(|| ItemError::Retrieval("this mode needs a knowledge-base index".into()))
    }

    fn single_turn(
        &self,
        prompt: String,
        ctx: &RequestContext<'_>,
        exchanges: &mut Vec<Exchange>,
    ) -> Result<ModeOutput, ItemError> {
        let request = ChatRequest {
            model: self.backend.model().to_string(),
            messages: vec![ChatMessage::user(prompt.clone())],
            temperature: self.params.temperature,
            max_tokens: self.params.max_new_tokens,
            tools: None,
        };
        let out = generate(self.backend, &request, &self.retry, ctx, exchanges)?;
        Ok(ModeOutput {
            prompt,
            hits: Vec::new(),
            tool_calls: Vec::new(),
            raw_output: out.content,
            steps: 1,
            truncated: false,
            usage: out.usage,
        })
    }
}

pub trait ModeStrategy: Send + Sync {
    fn mode(&self) -> Mode;
    fn template(&self) -> &'static Template;
    fn answer(
        &self,
        item: &QaTriplet,
        env: &ModeEnv<'_>,
        ctx: &RequestContext<'_>,
        exchanges: &mut Vec<Exchange>,
    ) -> Result<ModeOutput, ItemError>;
}

/// The question alone, no retrieval.
pub struct ZeroShot {
    template: &'static Template,
}

impl ModeStrategy for ZeroShot {
    fn mode(&self) -> Mode {
        Mode::ZeroShot
    }
    fn template(&self) -> &'static Template {
        self.template
    }
    fn answer(
        &self,
        item: &QaTriplet,
        env: &ModeEnv<'_>,
        ctx: &RequestContext<'_>,
        exchanges: &mut Vec<Exchange>,
    ) -> Result<ModeOutput, ItemError> {
        let prompt = self.template.render(&[("question", &item.question)])?;
        env.single_turn(prompt, ctx, exchanges)
    }
}

/// Retrieve with the raw question and inject the passages into the prompt.
pub struct ExternalKb {
    template: &'static Template,
}

impl ModeStrategy for ExternalKb {
    fn mode(&self) -> Mode {
        Mode::Ekb
    }
    fn template(&self) -> &'static Template {
        self.template
    }
    fn answer(
        &self,
        item: &QaTriplet,
        env: &ModeEnv<'_>,
        ctx: &RequestContext<'_>,
        exchanges: &mut Vec<Exchange>,
    ) -> Result<ModeOutput, ItemError> {
        let hits = env.index()?.retrieve(&item.question, env.k, env.embedder)?;
        let prompt = assemble_ekb_prompt(self.template, &item.question, &hits, env.contexts)?;
        let mut out = env.single_turn(prompt, ctx, exchanges)?;
        out.hits = hits;
        Ok(out)
    }
}

/// Give the model a generically named retrieval tool and let it decide.
pub struct NativeKb {
    template: &'static Template,
}

impl ModeStrategy for NativeKb {
    fn mode(&self) -> Mode {
        Mode::Nkb
    }
    fn template(&self) -> &'static Template {
        self.template
    }
    fn answer(
        &self,
        item: &QaTriplet,
        env: &ModeEnv<'_>,
        ctx: &RequestContext<'_>,
        exchanges: &mut Vec<Exchange>,
    ) -> Result<ModeOutput, ItemError> {
        let prompt = self
            .template
            .render(&[("question", &item.question), ("tool", env.tool_name)])?;
        let nkb = NkbEnv {
            index: env.index()?,
            contexts: env.contexts,
            embedder: env.embedder,
            backend: env.backend,
            params: env.params,
            retry: env.retry,
            k: env.k,
            max_steps: env.max_steps,
            tool_name: env.tool_name,
        };
        let r = run_nkb_loop(&prompt, &nkb, ctx, exchanges)?;
        Ok(ModeOutput {
            prompt,
            hits: r.hits,
            tool_calls: r.outcomes,
            raw_output: r.answer,
            steps: r.steps,
            truncated: r.truncated,
            usage: r.usage,
        })
    }
}

/// Template version the strategies are built with.
#[derive(Debug, Clone)]
pub struct ModeSpec {
    pub template_version: String,
}

pub type ModeRegistry = Registry<dyn ModeStrategy, ModeSpec>;

pub fn default_modes() -> ModeRegistry {
    fn tpl(name: &str, spec: &ModeSpec) -> Result<&'static Template, String> {
        Template::get(name, &spec.template_version).map_err(|e| e.to_string())
    }
    let mut reg = ModeRegistry::new("mode");
    reg.register(Mode::ZeroShot.as_str(), |s: &ModeSpec| {
        Ok(Box::new(ZeroShot {
            template: tpl("zero_shot", s)?,
        }))
    });
    reg.register(Mode::Ekb.as_str(), |s: &ModeSpec| {
        Ok(Box::new(ExternalKb {
            template: tpl("ekb", s)?,
        }))
    });
    reg.register(Mode::Nkb.as_str(), |s: &ModeSpec| {
        Ok(Box::new(NativeKb {
            template: tpl("nkb", s)?,
        }))
    });
    reg
}

/// Remove every `open ... close` block; an unclosed block runs to the end.
pub fn strip_reasoning(text: &str, open: &str, close: &str) -> String {
    if open.is_empty() {
        return text.trim().to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find(open) {
        out.push_str(&rest[..start]);
        let after = &rest[start + open.len()..];
        rest = match after.find(close) {
            Some(end) if !close.is_empty() => &after[end + close.len()..],
            _ => "",
        };
    }
    out.push_str(rest);
    out.trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strip_blocks() {
        assert_eq!(
            strip_reasoning("<think>hmm</think> Answer.", "<think>", "</think>"),
            "Answer."
        );
        assert_eq!(
            strip_reasoning("A <think>x</think>B<think>y", "<think>", "</think>"),
            "A B"
        );
        assert_eq!(strip_reasoning(" plain ", "<think>", "</think>"), "plain");
    }

    #[test]
    fn registry_has_three_modes() {
        let reg = default_modes();
        let spec = ModeSpec {
            template_version: "v1".into(),
        };
        for m in Mode::ALL {
            assert_eq!(reg.build(m.as_str(), &spec).unwrap().mode(), m);
        }
        let bad = ModeSpec {
            template_version: "v9".into(),
        };
        assert!(reg.build("ekb", &bad).is_err());
    }
}
