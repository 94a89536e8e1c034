use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::records::RawNews;
use super::vocab::{tokenize, Vocabulary, UNKNOWN_ID};
use crate::error::{Error, Result};
use crate::seed::rng_for;

pub const MAX_TITLE_WORDS: usize = 30;
pub const MAX_ENTITIES: usize = 5;

/// A news article ready for the encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewsArticle {
    pub id: String,
    /// Word ids, `1 ≤ len ≤ max_title_words`.
    pub tokens: Vec<usize>,
    /// Entity ids, `len ≤ max_entities`.
    pub entities: Vec<usize>,
    pub publish_time: i64,
    pub topic: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSettings {
    pub max_title_words: usize,
    pub max_entities: usize,
    /// Root seed for entity down-sampling.
    pub seed: u64,
}

impl Default for PreprocessSettings {
    fn default() -> Self {
        PreprocessSettings {
            max_title_words: MAX_TITLE_WORDS,
            max_entities: MAX_ENTITIES,
            seed: 0,
        }
    }
}

/// Maps a raw article onto vocabulary ids. Titles keep their first
/// `max_title_words` words; when an article carries more than
/// `max_entities` entities a seeded uniform subset is kept (in original
/// order). The subset depends only on the seed and the article id.
pub fn preprocess_news(
    raw: &RawNews,
    vocab: &Vocabulary,
    entity_vocab: &Vocabulary,
    settings: &PreprocessSettings,
) -> Result<NewsArticle> {
    if raw.publish_ts <= 0 {
        return Err(Error::Ingestion(format!(
            "news {} has non-positive publish time {}",
            raw.id, raw.publish_ts
        )));
    }
    let mut tokens: Vec<usize> = tokenize(&raw.title)
        .iter()
        .take(settings.max_title_words)
        .map(|w| vocab.id(w))
        .collect();
    if tokens.is_empty() {
        tokens.push(UNKNOWN_ID);
    }

    let entities = if raw.entities.len() > settings.max_entities {
        let mut rng = rng_for(settings.seed, &format!("entities/{}", raw.id));
        let mut picked = sample(&mut rng, raw.entities.len(), settings.max_entities).into_vec();
        picked.sort_unstable();
        picked
            .into_iter()
            .map(|i| entity_vocab.id(&raw.entities[i]))
            .collect()
    } else {
        raw.entities.iter().map(|e| entity_vocab.id(e)).collect()
    };

    Ok(NewsArticle {
        id: raw.id.clone(),
        tokens,
        entities,
        publish_time: raw.publish_ts,
        topic: raw.topic.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(title: &str, entities: usize) -> RawNews {
        RawNews {
            id: "n1".into(),
            title: title.into(),
            entities: (0..entities).map(|i| format!("Q{i}")).collect(),
            publish_ts: 1_000,
            topic: "t".into(),
        }
    }

    fn vocabs() -> (Vocabulary, Vocabulary) {
        let words: Vec<String> = (0..50).flat_map(|i| vec![format!("w{i}"); 3]).collect();
        let ents: Vec<String> = (0..8).map(|i| format!("Q{i}")).collect();
        (
            Vocabulary::from_tokens(words, 3),
            Vocabulary::from_tokens(ents, 1),
        )
    }

    #[test]
    fn long_titles_truncate_to_thirty_words() {
        let (v, e) = vocabs();
        let title: Vec<String> = (0..45).map(|i| format!("w{i}")).collect();
        let a = preprocess_news(
            &raw(&title.join(" "), 0),
            &v,
            &e,
            &PreprocessSettings::default(),
        )
        .unwrap();
        assert_eq!(a.tokens.len(), 30);
        assert_eq!(a.tokens[0], v.id("w0"));
        assert_eq!(a.tokens[29], v.id("w29"));
        assert!(a.entities.is_empty());
    }

    #[test]
    fn entity_sampling_is_seeded() {
        let (v, e) = vocabs();
        let s = PreprocessSettings {
            seed: 17,
            ..Default::default()
        };
        let a = preprocess_news(&raw("w1 w2", 8), &v, &e, &s).unwrap();
        let b = preprocess_news(&raw("w1 w2", 8), &v, &e, &s).unwrap();
        assert_eq!(a.entities.len(), 5);
        assert_eq!(a.entities, b.entities);
        let mut uniq = a.entities.clone();
        uniq.dedup();
        assert_eq!(uniq.len(), 5);
    }

    #[test]
    fn empty_title_becomes_unknown_token() {
        let (v, e) = vocabs();
        let a = preprocess_news(&raw("", 2), &v, &e, &PreprocessSettings::default()).unwrap();
        assert_eq!(a.tokens, vec![UNKNOWN_ID]);
        assert_eq!(a.entities.len(), 2);
    }

    #[test]
    fn rejects_non_positive_publish_time() {
        let (v, e) = vocabs();
        let mut r = raw("w1", 0);
        r.publish_ts = 0;
        assert!(preprocess_news(&r, &v, &e, &PreprocessSettings::default()).is_err());
    }
}
