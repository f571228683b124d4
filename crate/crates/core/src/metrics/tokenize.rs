use std::ops::Deref;

/// Normalized tokens: lowercase, punctuation-free, whitespace-free.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        TokenSeq(
            tokens
                .into_iter()
                .flat_map(|t| normalize_tokenize(t.as_ref()).0)
                .collect(),
        )
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }
}

impl Deref for TokenSeq {
    type Target = [String];

    fn deref(&self) -> &[String] {
        &self.0
    }
}

/// Lowercase, turn every non-alphanumeric character into a separator, split
/// on whitespace. Articles are kept.
pub fn normalize_tokenize(text: &str) -> TokenSeq {
    let cleaned: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    TokenSeq(cleaned.split_whitespace().map(str::to_string).collect())
}
