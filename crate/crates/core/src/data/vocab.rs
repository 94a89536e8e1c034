use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Id shared by padding and every out-of-vocabulary token.
pub const UNKNOWN_ID: usize = 0;
pub const UNKNOWN_TOKEN: &str = "<unk>";

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Token ↔ id table. Id 0 is reserved for unknown/padding; retained tokens
/// get dense ids from 1 ordered by (frequency desc, token asc).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    ids: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
    counts: Vec<u64>,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        let ids = r
            .tokens
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            tokens: r.tokens,
            counts: r.counts,
            ids,
        }
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            tokens: v.tokens,
            counts: v.counts,
        }
    }
}

impl Vocabulary {
    /// Counts `tokens` and keeps those seen at least `min_count` times.
    pub fn from_tokens<I, S>(tokens: I, min_count: u64) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut freq: HashMap<String, u64> = HashMap::new();
        for t in tokens {
            *freq.entry(t.as_ref().to_string()).or_default() += 1;
        }
        let mut kept: Vec<(String, u64)> =
            freq.into_iter().filter(|(_, c)| *c >= min_count).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut tokens = vec![UNKNOWN_TOKEN.to_string()];
        let mut counts = vec![0];
        for (t, c) in kept {
            tokens.push(t);
            counts.push(c);
        }
        VocabularyRepr { tokens, counts }.into()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNKNOWN_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts.get(id).copied().unwrap_or(0)
    }

    /// Number of ids, including the reserved unknown id.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    /// Tokens in id order (index 0 is the unknown token).
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Word dictionary over news titles, dropping words seen fewer than
/// `min_freq` times.
pub fn build_vocabulary<S: AsRef<str>>(titles: &[S], min_freq: u64) -> Result<Vocabulary> {
    if titles.is_empty() {
        return Err(Error::Ingestion(
            "cannot build a vocabulary from an empty corpus".into(),
        ));
    }
    Ok(Vocabulary::from_tokens(
        titles.iter().flat_map(|t| tokenize(t.as_ref())),
        min_freq,
    ))
}
