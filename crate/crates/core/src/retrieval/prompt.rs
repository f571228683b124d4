//! Versioned prompt templates and the eKB passage-block format.
//!
//! Passage and question blocks are delimited by `<<<...>>>` markers. Inserted
//! text is escaped with backslashes so it can never form a marker: `\`
//! becomes `\\`, and a `<` (or `>`) is escaped when the next character is
//! the same bracket or when it ends the text.

use super::{RetrievalError, RetrievalHit};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub name: &'static str,
    pub version: &'static str,
    pub text: &'static str,
}

pub const TEMPLATES: [Template; 3] = [
    Template {
        name: "zero_shot",
        version: "v1",
        text: include_str!("../../templates/zero_shot.v1.txt"),
    },
    Template {
        name: "ekb",
        version: "v1",
        text: include_str!("../../templates/ekb.v1.txt"),
    },
    Template {
        name: "nkb",
        version: "v1",
        text: include_str!("../../templates/nkb.v1.txt"),
    },
];

impl Template {
    pub fn get(name: &str, version: &str) -> Result<&'static Template, RetrievalError> {
        TEMPLATES
            .iter()
            .find(|t| t.name == name && t.version == version)
            .ok_or_else(|| RetrievalError::UnknownTemplate(format!("{name}.{version}")))
    }

    pub fn id(&self) -> String {
        format!("{}.{}", self.name, self.version)
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.text.as_bytes()))
    }

    /// Substitute `{{key}}` placeholders in one pass; inserted values are
    /// not rescanned. Unknown or unterminated placeholders are errors.
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String, RetrievalError> {
        let mut out = String::with_capacity(self.text.len());
        let mut rest = self.text;
        while let Some(open) = rest.find("{{") {
            out.push_str(&rest[..open]);
            let after = &rest[open + 2..];
            let close = after.find("}}").ok_or_else(|| {
                RetrievalError::UnknownTemplate(format!("{}: unterminated placeholder", self.id()))
            })?;
            let key = &after[..close];
            let value = vars
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| {
                    RetrievalError::UnknownTemplate(format!("{}: no value for `{key}`", self.id()))
                })?;
            out.push_str(value);
            rest = &after[close + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

pub fn escape_block(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    for (i, &c) in chars.iter().enumerate() {
        let escape = match c {
            '\\' => true,
            '<' | '>' => chars.get(i + 1).is_none_or(|&n| n == c),
            _ => false,
        };
        if escape {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

pub fn unescape_block(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            if let Some(n) = chars.next() {
                out.push(n);
                continue;
            }
        }
        out.push(c);
    }
    out
}

/// Render retrieved passages, in hit order, with the eKB template.
pub fn assemble_ekb_prompt(
    template: &Template,
    question: &str,
    hits: &[RetrievalHit],
    contexts: &BTreeMap<String, String>,
) -> Result<String, RetrievalError> {
    if hits.is_empty() {
        return Err(RetrievalError::Malformed(
            "eKB prompt needs at least one hit".into(),
        ));
    }
    let mut passages = String::new();
    for (rank, hit) in hits.iter().enumerate() {
        let text = contexts
            .get(&hit.doc_id)
            .ok_or_else(|| RetrievalError::MissingContext(hit.doc_id.clone()))?;
        passages.push_str(&format!(
            "<<<PASSAGE {} {}>>>\n{}\n<<<END>>>\n",
            rank + 1,
            escape_block(&hit.doc_id),
            escape_block(text)
        ));
    }
    template.render(&[
        ("passages", &passages),
        ("question", &escape_block(question)),
    ])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPassage {
    pub rank: usize,
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrompt {
    pub passages: Vec<ParsedPassage>,
    pub question: Option<String>,
}

enum Segment {
    Text(String),
    Marker(String),
}

fn segments(prompt: &str) -> Result<Vec<Segment>, RetrievalError> {
    let chars: Vec<char> = prompt.chars().collect();
    let mut out = Vec::new();
    let mut text = String::new();
    let mut i = 0;
    let starts = |i: usize, c: char| i + 2 < chars.len() && chars[i..i + 3].iter().all(|&x| x == c);
    while i < chars.len() {
        if chars[i] == '\\' && i + 1 < chars.len() {
            text.push(chars[i]);
            text.push(chars[i + 1]);
            i += 2;
            continue;
        }
        if starts(i, '<') {
            out.push(Segment::Text(std::mem::take(&mut text)));
            i += 3;
            let mut marker = String::new();
            loop {
                if i >= chars.len() {
                    return Err(RetrievalError::Malformed("unterminated marker".into()));
                }
                if chars[i] == '\\' && i + 1 < chars.len() {
                    marker.push(chars[i]);
                    marker.push(chars[i + 1]);
                    i += 2;
                } else if starts(i, '>') {
                    i += 3;
                    break;
                } else {
                    marker.push(chars[i]);
                    i += 1;
                }
            }
            out.push(Segment::Marker(marker));
            continue;
        }
        text.push(chars[i]);
        i += 1;
    }
    out.push(Segment::Text(text));
    Ok(out)
}

fn block_body(raw: &str) -> String {
    let s = raw.strip_prefix('\n').unwrap_or(raw);
    let s = s.strip_suffix('\n').unwrap_or(s);
    unescape_block(s)
}

/// Recover the passages and question from a prompt built by
/// [`assemble_ekb_prompt`].
pub fn parse_ekb_prompt(prompt: &str) -> Result<ParsedPrompt, RetrievalError> {
    let segs = segments(prompt)?;
    let mut parsed = ParsedPrompt {
        passages: Vec::new(),
        question: None,
    };
    let mut i = 0;
    while i < segs.len() {
        if let Segment::Marker(m) = &segs[i] {
            let body = match (segs.get(i + 1), segs.get(i + 2)) {
                (Some(Segment::Text(t)), Some(Segment::Marker(end))) if end == "END" => {
                    block_body(t)
                }
                _ => {
                    return Err(RetrievalError::Malformed(format!(
                        "block `{m}` is not closed"
                    )))
                }
            };
            if let Some(head) = m.strip_prefix("PASSAGE ") {
                let (rank, id) = head.split_once(' ').ok_or_else(|| {
                    RetrievalError::Malformed(format!("bad passage header `{m}`"))
                })?;
                parsed.passages.push(ParsedPassage {
                    rank: rank
                        .parse()
                        .map_err(|_| RetrievalError::Malformed(format!("bad rank `{rank}`")))?,
                    doc_id: unescape_block(id),
                    text: body,
                });
            } else if m == "QUESTION" {
                parsed.question = Some(body);
            } else {
                return Err(RetrievalError::Malformed(format!("unknown block `{m}`")));
            }
            i += 3;
        } else {
            i += 1;
        }
    }
    Ok(parsed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hit(id: &str, score: f64) -> RetrievalHit {
        RetrievalHit {
            doc_id: id.into(),
            score,
        }
    }

    fn fixture() -> (Vec<RetrievalHit>, BTreeMap<String, String>) {
        let hits = vec![hit("c2", 0.9), hit("c1", 0.5), hit("c3", 0.1)];
        let ctx = [
            ("c1", "Water withdrawal fell 12%."),
            (
                "c2",
                "Tricky <<<END>>> and <<<PASSAGE 9 x>>> text \\ with <<<<< brackets >>>>",
            ),
            ("c3", "Ends with <"),
        ]
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        (hits, ctx)
    }

    #[test]
    fn three_blocks_round_trip_with_delimiters() {
        let (hits, ctx) = fixture();
        let t = Template::get("ekb", "v1").unwrap();
        let q = "What <<<is>>> scope 3?";
        let prompt = assemble_ekb_prompt(t, q, &hits, &ctx).unwrap();
        let parsed = parse_ekb_prompt(&prompt).unwrap();
        assert_eq!(parsed.passages.len(), 3);
        for (i, (p, h)) in parsed.passages.iter().zip(&hits).enumerate() {
            assert_eq!(p.rank, i + 1);
            assert_eq!(p.doc_id, h.doc_id);
            assert_eq!(&p.text, &ctx[&h.doc_id]);
        }
        assert_eq!(parsed.question.as_deref(), Some(q));
        assert_eq!(prompt, assemble_ekb_prompt(t, q, &hits, &ctx).unwrap());
    }

    #[test]
    fn missing_context_is_an_error() {
        let (hits, mut ctx) = fixture();
        ctx.remove("c1");
        let t = Template::get("ekb", "v1").unwrap();
        assert!(matches!(
            assemble_ekb_prompt(t, "q", &hits, &ctx),
            Err(RetrievalError::MissingContext(id)) if id == "c1"
        ));
        assert!(assemble_ekb_prompt(t, "q", &[], &ctx).is_err());
    }

    #[test]
    fn render_is_single_pass() {
        let t = Template::get("zero_shot", "v1").unwrap();
        let out = t.render(&[("question", "{{question}}")]).unwrap();
        assert!(out.contains("{{question}}"));
        assert!(t.render(&[]).is_err());
    }

    #[test]
    fn escape_round_trip() {
        for s in ["", "<", "<<", "a<<<b", "\\", ">>>", "x\\<<<"] {
            let e = escape_block(s);
            assert!(!e.contains("<<<") || e.contains("\\<"));
            assert_eq!(unescape_block(&e), s);
        }
    }
}
