use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, Token};

/// Index of the reserved unknown-token row.
pub const UNK: usize = 0;
pub const UNK_TOKEN: &str = "<unk>";

/// Lowercased token vocabulary. Row 0 is reserved for unknown tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// `<unk>` followed by the given keys in sorted order.
    pub fn from_keys<I, S>(keys: I) -> Vocab
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = keys.into_iter().map(|k| Vocab::key(k.as_ref())).collect();
        let mut tokens = vec![UNK_TOKEN.to_string()];
        tokens.extend(set.into_iter().filter(|t| t != UNK_TOKEN));
        Vocab::from(tokens)
    }

    pub fn from_corpus(sentences: &[AnnotatedSentence]) -> Vocab {
        Vocab::from_keys(sentences.iter().flat_map(|s| s.tokens.iter().map(|t| t.text.as_str())))
    }

    pub fn key(text: &str) -> String {
        text.to_lowercase()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, text: &str) -> usize {
        self.index.get(&Vocab::key(text)).copied().unwrap_or(UNK)
    }

    pub fn ids(&self, tokens: &[Token]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(&t.text)).collect()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_maps_to_reserved_row() {
        let v = Vocab::from_keys(["Python", "jura", "python"]);
        assert_eq!(v.len(), 3);
        assert_eq!(v.token(0), Some(UNK_TOKEN));
        assert_eq!(v.id("PYTHON"), v.id("python"));
        assert_ne!(v.id("python"), UNK);
        assert_eq!(v.id("haskell"), UNK);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, r#"["<unk>","jura","python"]"#);
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
    }
}
