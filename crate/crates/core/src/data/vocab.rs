use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
const SPECIALS: [&str; 3] = ["<pad>", "<s>", "</s>"];
const BLANK_TOKEN: &str = "<blank>";

/// Bijective token/id mapping. Ids 0..3 are pad, sentence-begin and
/// sentence-end; the CTC blank is always the highest id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from content tokens; reserved symbols are added around them.
    pub fn new<S: AsRef<str>>(content: &[S]) -> Result<Self> {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(content.iter().map(|s| s.as_ref().to_string()));
        tokens.push(BLANK_TOKEN.to_string());
        Self::from_tokens(tokens)
    }

    /// `n` content tokens named `{prefix}{k}`.
    pub fn synthetic(prefix: &str, n: usize) -> Self {
        let content: Vec<String> = (0..n).map(|k| format!("{prefix}{k}")).collect();
        Self::new(&content).expect("synthetic tokens are unique")
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() + 1
            || tokens[..SPECIALS.len()] != SPECIALS
            || tokens.last().map(String::as_str) != Some(BLANK_TOKEN)
        {
            return Err(Error::Parse("vocabulary lacks reserved symbols".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.chars().any(char::is_whitespace) || t.is_empty() {
                return Err(Error::Parse(format!("invalid token {t:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Parse(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Number of ids, blank included.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn blank(&self) -> usize {
        self.tokens.len() - 1
    }

    /// Size of decoder output distributions: every id but the blank.
    pub fn output_size(&self) -> usize {
        self.tokens.len() - 1
    }

    /// Number of ordinary tokens.
    pub fn content_len(&self) -> usize {
        self.tokens.len() - SPECIALS.len() - 1
    }

    /// Id of the `k`-th ordinary token.
    pub fn content_id(&self, k: usize) -> usize {
        SPECIALS.len() + k
    }

    /// Index among ordinary tokens, if `id` is one.
    pub fn content_index(&self, id: usize) -> Option<usize> {
        (!self.is_reserved(id) && id < self.len()).then(|| id - SPECIALS.len())
    }

    pub fn is_reserved(&self, id: usize) -> bool {
        id < SPECIALS.len() || id == self.blank()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Space-joined tokens, reserved ids skipped.
    pub fn render(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| !self.is_reserved(i))
            .filter_map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Parses whitespace-separated tokens.
    pub fn parse(&self, line: &str) -> Result<Vec<usize>> {
        line.split_whitespace()
            .map(|t| self.id(t).ok_or_else(|| Error::Parse(format!("unknown token {t:?}"))))
            .collect()
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Vocabulary::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        let v = Vocabulary::synthetic("s", 4);
        assert_eq!(v.len(), 8);
        assert_eq!(v.blank(), 7);
        assert_eq!(v.output_size(), 7);
        assert_eq!(v.content_id(0), 3);
        assert_eq!(v.token(3), Some("s0"));
        assert!(v.is_reserved(PAD) && v.is_reserved(BOS) && v.is_reserved(EOS) && v.is_reserved(7));
        assert!(!v.is_reserved(4));
        assert_eq!(v.content_index(6), Some(3));
        assert_eq!(v.content_index(7), None);
    }

    #[test]
    fn bijective_round_trip() {
        let v = Vocabulary::synthetic("t", 5);
        for id in 0..v.len() {
            assert_eq!(v.id(v.token(id).unwrap()), Some(id));
        }
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(v.parse(&v.render(&[1, 3, 4, 2])).unwrap(), vec![3, 4]);
    }

    #[test]
    fn duplicates_rejected() {
        assert!(Vocabulary::new(&["a", "a"]).is_err());
        assert!(serde_json::from_str::<Vocabulary>(r#"["a","b"]"#).is_err());
    }
}
