//! Corpus directories and model-ready impression samples.
//!
//! Directory layout:
//!
//! ```text
//! <root>/news.jsonl
//! <root>/clicks.tsv
//! <root>/{train,valid,test}/impressions.jsonl
//! ```

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ctr::{CtrIndex, CtrSettings};
use super::history::{build_user_history, ClickLog};
use super::preprocess::{preprocess_news, NewsArticle, PreprocessSettings};
use super::quantize::{quantize_popularity, quantize_recency};
use super::records::{
    read_clicks, read_impressions, read_news, write_clicks, write_jsonl, ClickEvent, RawImpression,
    RawNews,
};
use super::vocab::{build_vocabulary, Vocabulary};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub news: Vec<RawNews>,
    pub train: Vec<RawImpression>,
    pub valid: Vec<RawImpression>,
    pub test: Vec<RawImpression>,
    pub clicks: Vec<ClickEvent>,
}

pub fn impressions_path(root: &Path, split: Split) -> PathBuf {
    root.join(split.name()).join("impressions.jsonl")
}

impl Corpus {
    /// Loads a corpus directory. `news.jsonl` and the train split are
    /// required; a missing valid/test split or click log reads as empty.
    pub fn load(root: &Path) -> Result<Self> {
        let news_path = root.join("news.jsonl");
        if !news_path.exists() {
            return Err(Error::Ingestion(format!(
                "no news.jsonl under {}",
                root.display()
            )));
        }
        let train_path = impressions_path(root, Split::Train);
        if !train_path.exists() {
            return Err(Error::Ingestion(format!("no {} ", train_path.display())));
        }
        let optional = |split| {
            let p = impressions_path(root, split);
            if p.exists() {
                read_impressions(&p)
            } else {
                Ok(Vec::new())
            }
        };
        let clicks_path = root.join("clicks.tsv");
        Ok(Corpus {
            news: read_news(&news_path)?,
            train: read_impressions(&train_path)?,
            valid: optional(Split::Valid)?,
            test: optional(Split::Test)?,
            clicks: if clicks_path.exists() {
                read_clicks(&clicks_path)?
            } else {
                Vec::new()
            },
        })
    }

    /// Corpus files present under `root`, in a fixed order.
    pub fn files(root: &Path) -> Vec<PathBuf> {
        std::iter::once(root.join("news.jsonl"))
            .chain(Split::ALL.iter().map(|&s| impressions_path(root, s)))
            .chain(std::iter::once(root.join("clicks.tsv")))
            .filter(|p| p.exists())
            .collect()
    }

    /// Writes every file and returns their paths.
    pub fn save(&self, root: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        let news = root.join("news.jsonl");
        write_jsonl(&news, &self.news)?;
        written.push(news);
        for split in Split::ALL {
            let p = impressions_path(root, split);
            write_jsonl(&p, self.split(split))?;
            written.push(p);
        }
        let clicks = root.join("clicks.tsv");
        write_clicks(&clicks, &self.clicks)?;
        written.push(clicks);
        Ok(written)
    }

    pub fn split(&self, split: Split) -> &[RawImpression] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn all_impressions(&self) -> impl Iterator<Item = &RawImpression> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }
}

/// Which moment's CTR sets the popularity bin of a clicked news in a history.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PopularityTime {
    #[default]
    ClickTime,
    ImpressionTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSettings {
    pub ctr: CtrSettings,
    pub recency_max_hours: usize,
    pub popularity_bins: usize,
    pub max_history: usize,
    pub popularity_time: PopularityTime,
}

impl Default for FeatureSettings {
    fn default() -> Self {
        FeatureSettings {
            ctr: CtrSettings::default(),
            recency_max_hours: super::quantize::MAX_RECENCY_HOURS,
            popularity_bins: super::quantize::POPULARITY_BINS,
            max_history: super::history::MAX_HISTORY,
            popularity_time: PopularityTime::ClickTime,
        }
    }
}

/// Preprocessed articles addressable by dense index.
#[derive(Clone, Debug, Default)]
pub struct NewsCatalog {
    articles: Vec<NewsArticle>,
    index: HashMap<String, usize>,
}

impl NewsCatalog {
    pub fn build(
        news: &[RawNews],
        vocab: &Vocabulary,
        entity_vocab: &Vocabulary,
        settings: &PreprocessSettings,
    ) -> Result<Self> {
        let mut catalog = NewsCatalog::default();
        for raw in news {
            if catalog.index.contains_key(&raw.id) {
                return Err(Error::Ingestion(format!("duplicate news id {}", raw.id)));
            }
            catalog.index.insert(raw.id.clone(), catalog.articles.len());
            catalog
                .articles
                .push(preprocess_news(raw, vocab, entity_vocab, settings)?);
        }
        Ok(catalog)
    }

    pub fn from_articles(articles: Vec<NewsArticle>) -> Self {
        let index = articles
            .iter()
            .enumerate()
            .map(|(i, a)| (a.id.clone(), i))
            .collect();
        NewsCatalog { articles, index }
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn article(&self, i: usize) -> &NewsArticle {
        &self.articles[i]
    }

    pub fn articles(&self) -> &[NewsArticle] {
        &self.articles
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub news: usize,
    pub clicked: bool,
    /// Smoothed near-real-time CTR at the impression time.
    pub ctr: f64,
    pub recency: usize,
    pub lifetime_views: u64,
    pub recent_views: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryItem {
    pub news: usize,
    pub click_time: i64,
    pub ctr: f64,
    pub popularity_bin: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpressionSample {
    pub user: String,
    pub time: i64,
    pub candidates: Vec<Candidate>,
    /// Oldest first; every click strictly precedes `time`.
    pub history: Vec<HistoryItem>,
}

impl ImpressionSample {
    pub fn positives(&self) -> usize {
        self.candidates.iter().filter(|c| c.clicked).count()
    }

    pub fn negatives(&self) -> usize {
        self.candidates.len() - self.positives()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.candidates.iter().map(|c| c.clicked).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildStats {
    pub impressions: usize,
    pub unknown_candidates: usize,
    pub unknown_history_clicks: usize,
    pub dropped_impressions: usize,
}

/// Everything needed to turn raw impressions into samples.
pub struct FeatureBuilder<'a> {
    pub catalog: &'a NewsCatalog,
    pub ctr_index: &'a CtrIndex,
    pub click_log: &'a ClickLog,
    pub settings: FeatureSettings,
}

impl FeatureBuilder<'_> {
    pub fn sample(&self, imp: &RawImpression, stats: &mut BuildStats) -> Option<ImpressionSample> {
        let s = &self.settings;
        let snap = self.ctr_index.snapshot(imp.ts, s.ctr);
        let mut candidates = Vec::with_capacity(imp.items.len());
        for (id, clicked) in &imp.items {
            let Some(news) = self.catalog.index_of(id) else {
                stats.unknown_candidates += 1;
                continue;
            };
            let w = snap.stats(id);
            candidates.push(Candidate {
                news,
                clicked: *clicked == 1,
                ctr: super::ctr::smoothed_ctr(w.clicks, w.impressions, &s.ctr),
                recency: quantize_recency(
                    self.catalog.article(news).publish_time,
                    imp.ts,
                    s.recency_max_hours,
                ),
                lifetime_views: w.lifetime_views,
                recent_views: w.recent_views,
            });
        }
        if candidates.is_empty() {
            stats.dropped_impressions += 1;
            return None;
        }

        let raw_history = build_user_history(self.click_log, &imp.user, imp.ts, s.max_history);
        let mut history = Vec::with_capacity(raw_history.len());
        for click in &raw_history.clicks {
            let Some(news) = self.catalog.index_of(&click.news_id) else {
                stats.unknown_history_clicks += 1;
                continue;
            };
            let at = match s.popularity_time {
                PopularityTime::ClickTime => click.ts,
                PopularityTime::ImpressionTime => imp.ts,
            };
            let ctr = self.ctr_index.snapshot(at, s.ctr).ctr(&click.news_id);
            history.push(HistoryItem {
                news,
                click_time: click.ts,
                ctr,
                popularity_bin: quantize_popularity(ctr, s.popularity_bins),
            });
        }
        stats.impressions += 1;
        Some(ImpressionSample {
            user: imp.user.clone(),
            time: imp.ts,
            candidates,
            history,
        })
    }

    pub fn samples(&self, impressions: &[RawImpression]) -> (Vec<ImpressionSample>, BuildStats) {
        let mut stats = BuildStats::default();
        let samples = impressions
            .iter()
            .filter_map(|imp| self.sample(imp, &mut stats))
            .collect();
        (samples, stats)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareSettings {
    pub min_word_freq: u64,
    pub preprocess: PreprocessSettings,
    pub features: FeatureSettings,
}

impl Default for PrepareSettings {
    fn default() -> Self {
        PrepareSettings {
            min_word_freq: 3,
            preprocess: PreprocessSettings::default(),
            features: FeatureSettings::default(),
        }
    }
}

/// A corpus turned into vocabularies, a catalog and per-split samples.
#[derive(Clone, Debug)]
pub struct PreparedCorpus {
    pub vocab: Vocabulary,
    pub entity_vocab: Vocabulary,
    pub catalog: NewsCatalog,
    pub train: Vec<ImpressionSample>,
    pub valid: Vec<ImpressionSample>,
    pub test: Vec<ImpressionSample>,
    pub stats: HashMap<Split, BuildStats>,
}

pub fn build_entity_vocabulary(news: &[RawNews]) -> Vocabulary {
    Vocabulary::from_tokens(news.iter().flat_map(|n| n.entities.iter()), 1)
}

impl PreparedCorpus {
    /// Builds vocabularies from the corpus titles unless `vocabs` supplies
    /// them (e.g. from a checkpoint).
    pub fn prepare(
        corpus: &Corpus,
        settings: &PrepareSettings,
        vocabs: Option<(Vocabulary, Vocabulary)>,
    ) -> Result<Self> {
        let (vocab, entity_vocab) = match vocabs {
            Some(v) => v,
            None => {
                let titles: Vec<&str> = corpus.news.iter().map(|n| n.title.as_str()).collect();
                (
                    build_vocabulary(&titles, settings.min_word_freq)?,
                    build_entity_vocabulary(&corpus.news),
                )
            }
        };
        let catalog =
            NewsCatalog::build(&corpus.news, &vocab, &entity_vocab, &settings.preprocess)?;
        let ctr_index = CtrIndex::from_impressions(corpus.all_impressions());
        let click_log = ClickLog::new(&corpus.clicks);
        let builder = FeatureBuilder {
            catalog: &catalog,
            ctr_index: &ctr_index,
            click_log: &click_log,
            settings: settings.features,
        };
        let mut stats = HashMap::new();
        let mut built = Vec::new();
        for split in Split::ALL {
            let (samples, s) = builder.samples(corpus.split(split));
            stats.insert(split, s);
            built.push(samples);
        }
        let test = built.pop().unwrap_or_default();
        let valid = built.pop().unwrap_or_default();
        let train = built.pop().unwrap_or_default();
        Ok(PreparedCorpus {
            vocab,
            entity_vocab,
            catalog,
            train,
            valid,
            test,
            stats,
        })
    }

    pub fn split(&self, split: Split) -> &[ImpressionSample] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Corpus {
        let news = (0..4)
            .map(|i| RawNews {
                id: format!("n{i}"),
                title: format!("alpha beta gamma story{i}"),
                entities: vec![format!("Q{i}")],
                publish_ts: 1_000,
                topic: if i % 2 == 0 { "a".into() } else { "b".into() },
            })
            .collect();
        let imp = |ts, items: &[(&str, u8)]| RawImpression {
            user: "u".into(),
            ts,
            items: items.iter().map(|(a, b)| (a.to_string(), *b)).collect(),
        };
        let train = vec![
            imp(10_000, &[("n0", 1), ("n1", 0)]),
            imp(12_000, &[("n2", 1), ("n3", 0), ("zz", 0)]),
        ];
        let test = vec![imp(20_000, &[("n1", 1), ("n0", 0)])];
        let clicks = vec![
            ClickEvent {
                user: "u".into(),
                news_id: "n0".into(),
                ts: 10_000,
            },
            ClickEvent {
                user: "u".into(),
                news_id: "n2".into(),
                ts: 12_000,
            },
        ];
        Corpus {
            news,
            train,
            valid: vec![],
            test,
            clicks,
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny();
        c.save(dir.path()).unwrap();
        assert_eq!(Corpus::load(dir.path()).unwrap(), c);
    }

    #[test]
    fn missing_corpus_is_an_ingestion_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Corpus::load(dir.path()), Err(Error::Ingestion(_))));
    }

    #[test]
    fn samples_respect_time_and_unknown_ids() {
        let p = PreparedCorpus::prepare(&tiny(), &PrepareSettings::default(), None).unwrap();
        assert_eq!(p.stats[&Split::Train].unknown_candidates, 1);
        assert!(p.train[0].history.is_empty());
        // second impression sees the first click only
        assert_eq!(p.train[1].history.len(), 1);
        let t = &p.test[0];
        assert_eq!(t.history.len(), 2);
        assert!(t.history.iter().all(|h| h.click_time < t.time));
        // n1 was shown once, unclicked, more than an hour before the test impression
        assert_eq!(t.candidates[0].ctr, 0.05);
        assert_eq!(t.candidates[0].lifetime_views, 1);
        assert_eq!(t.candidates[0].recency, (20_000 - 1_000) / 3600);
    }

    #[test]
    fn history_bins_use_click_time_ctr() {
        let p = PreparedCorpus::prepare(&tiny(), &PrepareSettings::default(), None).unwrap();
        // At its click time n0 had no earlier events: prior 1/20.
        let h = p.test[0].history[0];
        assert_eq!(h.ctr, 0.05);
        assert_eq!(h.popularity_bin, 10);
        let mut s = PrepareSettings::default();
        s.features.popularity_time = PopularityTime::ImpressionTime;
        let p2 = PreparedCorpus::prepare(&tiny(), &s, None).unwrap();
        // by the test impression n0's events are > 1h old, so CTR is the prior again
        assert_eq!(p2.test[0].history[0].ctr, 0.05);
    }
}
