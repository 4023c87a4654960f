use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_INDEX: usize = 0;
pub const OOV_INDEX: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const OOV_TOKEN: &str = "<unk>";

/// Token to index map. Index 0 is padding, index 1 is out-of-vocabulary, and
/// real tokens occupy `2..len()` in descending frequency, ties broken
/// lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps the `size - 2` most frequent tokens. A corpus with fewer distinct
    /// tokens simply yields a smaller vocabulary.
    pub fn build<S: AsRef<str>>(docs: &[Vec<S>], size: usize) -> Result<Self> {
        if size < 3 {
            return Err(Error::InvalidParameter(format!("vocabulary size must be >= 3, got {size}")));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for doc in docs {
            for t in doc {
                *counts.entry(t.as_ref()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(size - 2);
        let mut tokens = vec![PAD_TOKEN.to_string(), OOV_TOKEN.to_string()];
        tokens.extend(ranked.into_iter().map(|(t, _)| t.to_string()));
        Self::from_tokens(tokens)
    }

    /// Rebuilds from the full index-ordered token list, including the
    /// padding and out-of-vocabulary placeholders.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_INDEX] != PAD_TOKEN || tokens[OOV_INDEX] != OOV_TOKEN {
            return Err(Error::Data("vocabulary must start with the padding and unknown placeholders".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate().skip(2) {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.get(token).unwrap_or(OOV_INDEX)
    }

    /// Fraction of token occurrences in `docs` that are in the vocabulary.
    pub fn coverage<S: AsRef<str>, D: AsRef<[S]>>(&self, docs: &[D]) -> f64 {
        let (mut hit, mut total) = (0usize, 0usize);
        for t in docs.iter().flat_map(|d| d.as_ref()) {
            total += 1;
            if self.index.contains_key(t.as_ref()) {
                hit += 1;
            }
        }
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;
    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// First `n` token indices (unknown tokens map to 1), right-padded with 0.
pub fn encode_pad<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, n: usize) -> Vec<usize> {
    let mut out: Vec<usize> = tokens.iter().take(n).map(|t| vocab.index_of(t.as_ref())).collect();
    out.resize(n, PAD_INDEX);
    out
}
