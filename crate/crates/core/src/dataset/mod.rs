//! ESG-QA triplet loading and pillar-stratified partitioning.

mod split;

pub use split::{split_counts, stratified_split, write_split, Partition, SplitManifest, SplitSpec};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {detail}")]
    Malformed { line: usize, detail: String },
    #[error("line {line}: unknown pillar label `{label}`")]
    UnknownPillar { line: usize, label: String },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("cannot split an empty dataset")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pillar {
    Environmental,
    Social,
    Governance,
}

impl Pillar {
    pub const ALL: [Pillar; 3] = [Pillar::Environmental, Pillar::Social, Pillar::Governance];

    pub fn as_str(self) -> &'static str {
        match self {
            Pillar::Environmental => "Environmental",
            Pillar::Social => "Social",
            Pillar::Governance => "Governance",
        }
    }
}

impl std::fmt::Display for Pillar {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaTriplet {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub context: String,
    pub pillar: Pillar,
}

/// Which JSON keys hold each triplet field, plus pillar label aliases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMap {
    pub id: Option<String>,
    pub question: String,
    pub answer: String,
    pub context: String,
    pub pillar: String,
    /// Extra lowercase label → pillar entries, consulted before the defaults.
    pub aliases: BTreeMap<String, Pillar>,
}

impl Default for FieldMap {
    fn default() -> Self {
        Self {
            id: Some("id".into()),
            question: "question".into(),
            answer: "answer".into(),
            context: "context".into(),
            pillar: "pillar".into(),
            aliases: BTreeMap::new(),
        }
    }
}

impl FieldMap {
    /// Case-insensitive pillar lookup: configured aliases first, then the
    /// built-in names and initials.
    pub fn resolve_pillar(&self, label: &str) -> Option<Pillar> {
        let key = label.trim().to_lowercase();
        if let Some(p) = self
            .aliases
            .iter()
            .find(|(k, _)| k.to_lowercase() == key)
            .map(|(_, p)| *p)
        {
            return Some(p);
        }
        match key.as_str() {
            "e" | "env" | "environment" | "environmental" => Some(Pillar::Environmental),
            "s" | "soc" | "social" => Some(Pillar::Social),
            "g" | "gov" | "governance" => Some(Pillar::Governance),
            _ => None,
        }
    }
}

fn field_text(
    obj: &serde_json::Map<String, serde_json::Value>,
    key: &str,
    line: usize,
) -> Result<String, DatasetError> {
    match obj.get(key) {
        Some(serde_json::Value::String(s)) => Ok(s.clone()),
        Some(serde_json::Value::Number(n)) => Ok(n.to_string()),
        Some(other) => Err(DatasetError::Malformed {
            line,
            detail: format!("field `{key}` is not text: {other}"),
        }),
        None => Err(DatasetError::Malformed {
            line,
            detail: format!("missing field `{key}`"),
        }),
    }
}

/// Parse line-delimited JSON. Blank lines are skipped; line numbers in
/// errors are 1-based. A missing id becomes the 0-based line index.
pub fn parse_triplets(
    reader: impl BufRead,
    fields: &FieldMap,
) -> Result<Vec<QaTriplet>, DatasetError> {
    let mut out = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line_no = index + 1;
        let line = line.map_err(|e| DatasetError::Malformed {
            line: line_no,
            detail: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| DatasetError::Malformed {
                line: line_no,
                detail: e.to_string(),
            })?;
        let serde_json::Value::Object(obj) = value else {
            return Err(DatasetError::Malformed {
                line: line_no,
                detail: "expected a JSON object".into(),
            });
        };
        let id = match fields.id.as_deref().and_then(|k| obj.get(k).map(|_| k)) {
            Some(key) => field_text(&obj, key, line_no)?,
            None => index.to_string(),
        };
        let question = field_text(&obj, &fields.question, line_no)?;
        let answer = field_text(&obj, &fields.answer, line_no)?;
        let context = field_text(&obj, &fields.context, line_no)?;
        for (name, text) in [
            ("question", &question),
            ("answer", &answer),
            ("context", &context),
        ] {
            if text.trim().is_empty() {
                return Err(DatasetError::Malformed {
                    line: line_no,
                    detail: format!("{name} is empty"),
                });
            }
        }
        let label = field_text(&obj, &fields.pillar, line_no)?;
        let pillar = fields
            .resolve_pillar(&label)
            .ok_or(DatasetError::UnknownPillar {
                line: line_no,
                label,
            })?;
        out.push(QaTriplet {
            id,
            question,
            answer,
            context,
            pillar,
        });
    }
    Ok(out)
}

pub fn load_triplets(
    path: impl AsRef<Path>,
    fields: &FieldMap,
) -> Result<Vec<QaTriplet>, DatasetError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_triplets(std::io::BufReader::new(file), fields)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_lines_three_triplets() {
        let text = r#"{"id":"a","question":"q1","answer":"a1","context":"c1","pillar":"Environmental"}
{"id":"b","question":"q2","answer":"a2","context":"c2","pillar":"social"}

{"question":"q3","answer":"a3","context":"c3","pillar":"G"}
"#;
        let items = parse_triplets(text.as_bytes(), &FieldMap::default()).unwrap();
        assert_eq!(items.len(), 3);
        assert_eq!(items[1].pillar, Pillar::Social);
        assert_eq!(items[2].id, "3");
        assert_eq!(items[2].pillar, Pillar::Governance);
    }

    #[test]
    fn custom_field_names_and_alias() {
        let mut fields = FieldMap {
            id: None,
            question: "Q".into(),
            answer: "A".into(),
            context: "ctx".into(),
            pillar: "label".into(),
            ..Default::default()
        };
        fields.aliases.insert("E".into(), Pillar::Environmental);
        fields
            .aliases
            .insert("climate".into(), Pillar::Environmental);
        let text = r#"{"Q":"q","A":"a","ctx":"c","label":"E"}
{"Q":"q","A":"a","ctx":"c","label":"Climate"}"#;
        let items = parse_triplets(text.as_bytes(), &fields).unwrap();
        assert!(items.iter().all(|t| t.pillar == Pillar::Environmental));
        assert_eq!(items[0].id, "0");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"question\":\"q\",\"answer\":\"a\",\"context\":\"c\",\"pillar\":\"E\"}\n{not json}\n";
        match parse_triplets(text.as_bytes(), &FieldMap::default()) {
            Err(DatasetError::Malformed { line: 2, .. }) => {}
            other => panic!("expected malformed line 2, got {other:?}"),
        }
    }

    #[test]
    fn unknown_pillar_is_an_error() {
        let text = r#"{"question":"q","answer":"a","context":"c","pillar":"X"}"#;
        assert!(matches!(
            parse_triplets(text.as_bytes(), &FieldMap::default()),
            Err(DatasetError::UnknownPillar { line: 1, .. })
        ));
    }

    #[test]
    fn empty_answer_is_rejected() {
        let text = r#"{"question":"q","answer":"  ","context":"c","pillar":"S"}"#;
        assert!(matches!(
            parse_triplets(text.as_bytes(), &FieldMap::default()),
            Err(DatasetError::Malformed { line: 1, .. })
        ));
    }
}
