//! Seeded synthetic corpora with a tunable mix of interest-driven and
//! popularity-driven clicks.
//!
//! Every news has a topic and a latent quality `q`; its popularity at time
//! `t` is `q · exp(−age / decay)`. Titles carry topic words, filler words and
//! "buzz" words whose presence grows with `q`, so popularity is partly
//! predictable from content. Users like two topics. A shown candidate is
//! clicked with probability `click_scale · ((1 − λ)·affinity + λ·popularity)`.
//! How often a news is shown depends on an exposure weight independent of
//! `q`, so raw view counts carry no quality signal.
//!
//! The timeline starts with a background period whose clicks only populate
//! the click log, followed by the logged impressions, which are split by
//! time into train/valid/test. Cold users have no background clicks and
//! arrive late.

use std::collections::HashMap;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use super::embeddings::FALLBACK_INIT_STD;
use super::records::{ClickEvent, RawImpression, RawNews};
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Timestamp of the start of every synthetic timeline.
pub const BASE_EPOCH: i64 = 1_700_000_000;

const TOPIC_WORDS: usize = 8;
const BUZZ_WORDS: usize = 10;
const DULL_WORDS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub users: usize,
    pub news: usize,
    pub topics: usize,
    /// Distinct title words across all roles.
    pub vocab_size: usize,
    /// Logged impressions (all splits together).
    pub impressions: usize,
    /// λ: weight of popularity in the click model, in `[0, 1]`.
    pub pop_weight: f64,
    pub candidates_per_impression: usize,
    pub background_hours: u32,
    pub logged_hours: u32,
    pub news_lifetime_hours: u32,
    pub popularity_decay_hours: f64,
    pub mean_background_clicks: usize,
    pub cold_user_fraction: f64,
    pub entities_per_topic: usize,
    pub max_entities_per_news: usize,
    pub click_scale: f64,
    /// Sigma of the log-normal exposure weight.
    pub exposure_sigma: f64,
    pub train_fraction: f64,
    pub valid_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            users: 1000,
            news: 400,
            topics: 10,
            vocab_size: 400,
            impressions: 10_000,
            pop_weight: 0.5,
            candidates_per_impression: 20,
            background_hours: 24,
            logged_hours: 48,
            news_lifetime_hours: 24,
            popularity_decay_hours: 12.0,
            mean_background_clicks: 8,
            cold_user_fraction: 0.15,
            entities_per_topic: 12,
            max_entities_per_news: 4,
            click_scale: 0.3,
            exposure_sigma: 0.5,
            train_fraction: 0.7,
            valid_fraction: 0.1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("synthetic corpus: {m}")));
        if self.users == 0 || self.news == 0 || self.topics == 0 || self.impressions == 0 {
            return fail("users, news, topics and impressions must be positive");
        }
        if !(0.0..=1.0).contains(&self.pop_weight) {
            return fail("pop weight must lie in [0, 1]");
        }
        if self.candidates_per_impression < 2 {
            return fail("need at least 2 candidates per impression");
        }
        let reserved = self.topics * TOPIC_WORDS + BUZZ_WORDS + DULL_WORDS;
        if self.vocab_size <= reserved {
            return fail(&format!(
                "vocab size must exceed {reserved} for {} topics",
                self.topics
            ));
        }
        if self.logged_hours == 0
            || self.news_lifetime_hours == 0
            || self.popularity_decay_hours <= 0.0
        {
            return fail("time spans must be positive");
        }
        if !(0.0..1.0).contains(&self.cold_user_fraction) {
            return fail("cold user fraction must lie in [0, 1)");
        }
        if !(self.click_scale > 0.0 && self.click_scale <= 1.0) {
            return fail("click scale must lie in (0, 1]");
        }
        if self.exposure_sigma < 0.0 {
            return fail("exposure sigma must be non-negative");
        }
        let f = (self.train_fraction, self.valid_fraction);
        if f.0 <= 0.0 || f.1 < 0.0 || f.0 + f.1 >= 1.0 {
            return fail("split fractions must leave a non-empty test split");
        }
        Ok(())
    }
}

/// Generator output plus the hidden variables, for tests and diagnostics.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    /// Latent quality `q` per news id.
    pub latent_quality: HashMap<String, f64>,
    /// Favourite topics per user id.
    pub user_topics: HashMap<String, [usize; 2]>,
    pub popularity_decay_hours: f64,
}

impl SyntheticCorpus {
    /// Latent popularity of a news at `ts` (zero before publication).
    pub fn latent_popularity(&self, news_id: &str, ts: i64) -> Option<f64> {
        let q = *self.latent_quality.get(news_id)?;
        let publish = self
            .corpus
            .news
            .iter()
            .find(|n| n.id == news_id)?
            .publish_ts;
        if ts < publish {
            return Some(0.0);
        }
        let age_hours = (ts - publish) as f64 / 3600.0;
        Some(q * (-age_hours / self.popularity_decay_hours).exp())
    }
}

struct News {
    id: String,
    topic: usize,
    quality: f64,
    exposure: f64,
    publish: i64,
}

struct User {
    id: String,
    topics: [usize; 2],
    /// Earliest time the user can appear in the logged period.
    arrival: i64,
    cold: bool,
}

struct World<'a> {
    cfg: &'a SyntheticConfig,
    news: Vec<News>,
    publish: Vec<i64>,
}

impl World<'_> {
    /// News published in `(t − lifetime, t]`, as an index range.
    fn active(&self, t: i64) -> std::ops::Range<usize> {
        let life = i64::from(self.cfg.news_lifetime_hours) * 3600;
        let lo = self.publish.partition_point(|&p| p <= t - life);
        let hi = self.publish.partition_point(|&p| p <= t);
        lo..hi
    }

    fn popularity(&self, n: &News, t: i64) -> f64 {
        let age_hours = (t - n.publish) as f64 / 3600.0;
        n.quality * (-age_hours / self.cfg.popularity_decay_hours).exp()
    }

    fn affinity(user: &User, topic: usize) -> f64 {
        if topic == user.topics[0] {
            1.0
        } else if topic == user.topics[1] {
            0.6
        } else {
            0.05
        }
    }

    /// Unscaled click propensity in `[0, 1]`.
    fn propensity(&self, user: &User, n: &News, t: i64) -> f64 {
        let lambda = self.cfg.pop_weight;
        (1.0 - lambda) * Self::affinity(user, n.topic) + lambda * self.popularity(n, t)
    }
}

/// Index drawn with probability proportional to `weights` (all zero → uniform).
fn weighted_choice(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return rng.random_range(0..weights.len());
    }
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

/// Within-cluster spread of [`synthetic_embeddings`], relative to the
/// spread of cluster centres.
const EMBEDDING_CLUSTER_NOISE: f64 = 0.5;

/// A token and its vector.
pub type NamedVector = (String, Vec<f64>);

/// Stand-ins for pretrained word and entity vectors over the generator's
/// vocabulary. Topic words cluster per topic, buzz and dull words form one
/// cluster each, filler words are unrelated, and entities cluster per topic.
/// Coordinates are scaled like the random fallback initialization.
pub fn synthetic_embeddings(
    cfg: &SyntheticConfig,
    word_dim: usize,
    entity_dim: usize,
    seed: u64,
) -> Result<(Vec<NamedVector>, Vec<NamedVector>)> {
    cfg.validate()?;
    if word_dim == 0 || entity_dim == 0 {
        return Err(Error::Config(
            "embedding dimensions must be positive".into(),
        ));
    }
    let normal = rand_distr::StandardNormal;
    let draw = |rng: &mut ChaCha8Rng, dim: usize| -> Vec<f64> {
        (0..dim).map(|_| normal.sample(rng)).collect()
    };
    let member = |rng: &mut ChaCha8Rng, centre: &[f64]| -> Vec<f64> {
        centre
            .iter()
            .map(|c| {
                let e: f64 = normal.sample(rng);
                FALLBACK_INIT_STD * (c + EMBEDDING_CLUSTER_NOISE * e)
            })
            .collect()
    };

    let mut rng = rng_for(seed, "synthetic/word-vectors");
    let topic_centres: Vec<Vec<f64>> = (0..cfg.topics).map(|_| draw(&mut rng, word_dim)).collect();
    let buzz = draw(&mut rng, word_dim);
    let dull = draw(&mut rng, word_dim);
    let buzz_base = cfg.topics * TOPIC_WORDS;
    let dull_base = buzz_base + BUZZ_WORDS;
    let filler_base = dull_base + DULL_WORDS;
    let words = (0..cfg.vocab_size)
        .map(|i| {
            let v = if i < buzz_base {
                member(&mut rng, &topic_centres[i / TOPIC_WORDS])
            } else if i < dull_base {
                member(&mut rng, &buzz)
            } else if i < filler_base {
                member(&mut rng, &dull)
            } else {
                let own = draw(&mut rng, word_dim);
                member(&mut rng, &own)
            };
            (word(i), v)
        })
        .collect();

    let mut rng = rng_for(seed, "synthetic/entity-vectors");
    let mut entities = Vec::new();
    for topic in 0..cfg.topics {
        let centre = draw(&mut rng, entity_dim);
        for k in 0..cfg.entities_per_topic {
            entities.push((format!("Q{topic}x{k}"), member(&mut rng, &centre)));
        }
    }
    Ok((words, entities))
}

fn word(i: usize) -> String {
    format!("w{i:04}")
}

pub fn generate_synthetic_corpus(cfg: &SyntheticConfig, seed: u64) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let background = i64::from(cfg.background_hours) * 3600;
    let total = background + i64::from(cfg.logged_hours) * 3600;
    let life = i64::from(cfg.news_lifetime_hours) * 3600;

    // Word roles: topic blocks, buzz, dull, then shared filler.
    let topic_word = |topic: usize, k: usize| word(topic * TOPIC_WORDS + k);
    let buzz_base = cfg.topics * TOPIC_WORDS;
    let dull_base = buzz_base + BUZZ_WORDS;
    let filler_base = dull_base + DULL_WORDS;
    let filler_count = cfg.vocab_size - filler_base;

    let mut rng = rng_for(seed, "synthetic/news");
    let exposure =
        LogNormal::new(0.0, cfg.exposure_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut drafts: Vec<(i64, usize, f64, f64)> = (0..cfg.news)
        .map(|_| {
            // Publishing starts one lifetime before the timeline so that
            // early background clicks have something to choose from.
            let publish = rng.random_range(-life..total);
            let topic = rng.random_range(0..cfg.topics);
            let u: f64 = rng.random();
            (publish, topic, u * u, exposure.sample(&mut rng))
        })
        .collect();
    drafts.sort_by_key(|d| d.0);

    let mut raw_news = Vec::with_capacity(cfg.news);
    let mut news = Vec::with_capacity(cfg.news);
    for (i, (publish, topic, quality, exposure)) in drafts.into_iter().enumerate() {
        let id = format!("N{i:05}");
        let mut words = Vec::new();
        for k in index::sample(&mut rng, TOPIC_WORDS, 2) {
            words.push(topic_word(topic, k));
        }
        for _ in 0..3 {
            words.push(word(filler_base + rng.random_range(0..filler_count)));
        }
        let buzz = (0..2).filter(|_| rng.random::<f64>() < quality).count();
        for _ in 0..buzz {
            words.push(word(buzz_base + rng.random_range(0..BUZZ_WORDS)));
        }
        for _ in 0..2 - buzz {
            words.push(word(dull_base + rng.random_range(0..DULL_WORDS)));
        }
        // shuffle so position carries no information
        for j in (1..words.len()).rev() {
            words.swap(j, rng.random_range(0..=j));
        }
        let n_entities =
            rng.random_range(0..=cfg.max_entities_per_news.min(cfg.entities_per_topic));
        let entities = index::sample(&mut rng, cfg.entities_per_topic, n_entities)
            .into_iter()
            .map(|k| format!("Q{topic}x{k}"))
            .collect();
        raw_news.push(RawNews {
            id: id.clone(),
            title: words.join(" "),
            entities,
            publish_ts: BASE_EPOCH + publish,
            topic: format!("topic{topic}"),
        });
        news.push(News {
            id,
            topic,
            quality,
            exposure,
            publish,
        });
    }
    let publish = news.iter().map(|n| n.publish).collect();
    let world = World { cfg, news, publish };

    let mut rng = rng_for(seed, "synthetic/users");
    let logged_span = total - background;
    let users: Vec<User> = (0..cfg.users)
        .map(|i| {
            let first = rng.random_range(0..cfg.topics);
            let second = if cfg.topics > 1 {
                (first + rng.random_range(1..cfg.topics)) % cfg.topics
            } else {
                first
            };
            let cold = rng.random::<f64>() < cfg.cold_user_fraction;
            // cold users show up during the last 40% of the logged period
            let arrival = if cold {
                background + logged_span * 6 / 10 + rng.random_range(0..=logged_span * 4 / 10)
            } else {
                background
            };
            User {
                id: format!("U{i:05}"),
                topics: [first, second],
                arrival,
                cold,
            }
        })
        .collect();

    let mut clicks = Vec::new();
    let mut rng = rng_for(seed, "synthetic/background");
    for user in users.iter().filter(|u| !u.cold) {
        let n = rng.random_range(0..=2 * cfg.mean_background_clicks);
        let mut times: Vec<i64> = (0..n)
            .map(|_| rng.random_range(0..background.max(1)))
            .collect();
        times.sort_unstable();
        for t in times {
            let range = world.active(t);
            if range.is_empty() {
                continue;
            }
            let weights: Vec<f64> = world.news[range.clone()]
                .iter()
                .map(|n| world.propensity(user, n, t))
                .collect();
            let pick = range.start + weighted_choice(&weights, &mut rng);
            clicks.push(ClickEvent {
                user: user.id.clone(),
                news_id: world.news[pick].id.clone(),
                ts: BASE_EPOCH + t,
            });
        }
    }

    let mut rng = rng_for(seed, "synthetic/impressions");
    let mut times: Vec<i64> = (0..cfg.impressions)
        .map(|_| rng.random_range(background..total))
        .collect();
    times.sort_unstable();
    for i in 1..times.len() {
        times[i] = times[i].max(times[i - 1] + 1);
    }
    let mut impressions = Vec::with_capacity(cfg.impressions);
    let mut eligible: Vec<usize> = Vec::with_capacity(users.len());
    for t in times {
        eligible.clear();
        eligible.extend((0..users.len()).filter(|&u| users[u].arrival <= t));
        if eligible.is_empty() {
            continue;
        }
        let user = &users[eligible[rng.random_range(0..eligible.len())]];
        let range = world.active(t);
        if range.len() < 2 {
            continue;
        }
        // Exposure-weighted sampling without replacement (Efraimidis–Spirakis keys).
        let mut keyed: Vec<(f64, usize)> = range
            .map(|j| {
                let r: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                (r.ln() / world.news[j].exposure, j)
            })
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        keyed.truncate(cfg.candidates_per_impression);
        let shown: Vec<usize> = keyed.into_iter().map(|k| k.1).collect();

        let props: Vec<f64> = shown
            .iter()
            .map(|&j| world.propensity(user, &world.news[j], t))
            .collect();
        let mut labels: Vec<u8> = props
            .iter()
            .map(|p| u8::from(rng.random::<f64>() < cfg.click_scale * p))
            .collect();
        if !labels.contains(&1) {
            labels[weighted_choice(&props, &mut rng)] = 1;
        }
        for (&j, &l) in shown.iter().zip(&labels) {
            if l == 1 {
                clicks.push(ClickEvent {
                    user: user.id.clone(),
                    news_id: world.news[j].id.clone(),
                    ts: BASE_EPOCH + t,
                });
            }
        }
        impressions.push(RawImpression {
            user: user.id.clone(),
            ts: BASE_EPOCH + t,
            items: shown
                .iter()
                .zip(labels)
                .map(|(&j, l)| (world.news[j].id.clone(), l))
                .collect(),
        });
    }
    clicks.sort_by_key(|c| c.ts);

    let n = impressions.len();
    let n_train = ((n as f64) * cfg.train_fraction).round() as usize;
    let n_valid = ((n as f64) * cfg.valid_fraction).round() as usize;
    let test = impressions.split_off((n_train + n_valid).min(n));
    let valid = impressions.split_off(n_train.min(impressions.len()));

    Ok(SyntheticCorpus {
        corpus: Corpus {
            news: raw_news,
            train: impressions,
            valid,
            test,
            clicks,
        },
        latent_quality: world
            .news
            .iter()
            .map(|n| (n.id.clone(), n.quality))
            .collect(),
        user_topics: users.iter().map(|u| (u.id.clone(), u.topics)).collect(),
        popularity_decay_hours: cfg.popularity_decay_hours,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(pop_weight: f64) -> SyntheticConfig {
        SyntheticConfig {
            users: 200,
            news: 120,
            impressions: 800,
            pop_weight,
            ..Default::default()
        }
    }

    #[test]
    fn rejects_inconsistent_configs() {
        for cfg in [
            SyntheticConfig {
                news: 0,
                ..Default::default()
            },
            SyntheticConfig {
                pop_weight: 1.5,
                ..Default::default()
            },
            SyntheticConfig {
                vocab_size: 20,
                ..Default::default()
            },
            SyntheticConfig {
                train_fraction: 0.95,
                valid_fraction: 0.1,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                generate_synthetic_corpus(&cfg, 1),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn splits_are_temporally_ordered() {
        let c = generate_synthetic_corpus(&small(0.5), 3).unwrap().corpus;
        let max_train = c.train.iter().map(|i| i.ts).max().unwrap();
        let min_valid = c.valid.iter().map(|i| i.ts).min().unwrap();
        let max_valid = c.valid.iter().map(|i| i.ts).max().unwrap();
        let min_test = c.test.iter().map(|i| i.ts).min().unwrap();
        assert!(max_train < min_valid && max_valid < min_test);
        assert_eq!(c.train.len() + c.valid.len() + c.test.len(), 800);
    }

    #[test]
    fn every_impression_has_a_click_and_valid_items() {
        let s = generate_synthetic_corpus(&small(0.5), 5).unwrap();
        let ids: std::collections::HashSet<_> =
            s.corpus.news.iter().map(|n| n.id.as_str()).collect();
        for imp in s.corpus.all_impressions() {
            assert!(imp.positives() >= 1);
            assert!(imp.items.len() >= 2);
            for (id, _) in &imp.items {
                assert!(ids.contains(id.as_str()));
                let n = s.corpus.news.iter().find(|n| &n.id == id).unwrap();
                assert!(n.publish_ts <= imp.ts);
            }
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate_synthetic_corpus(&small(0.3), 11).unwrap().corpus;
        let b = generate_synthetic_corpus(&small(0.3), 11).unwrap().corpus;
        let c = generate_synthetic_corpus(&small(0.3), 12).unwrap().corpus;
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_vectors_cluster_by_role() {
        let cfg = small(0.5);
        let (words, entities) = synthetic_embeddings(&cfg, 16, 8, 2).unwrap();
        assert_eq!(words.len(), cfg.vocab_size);
        assert_eq!(entities.len(), cfg.topics * cfg.entities_per_topic);
        assert_eq!(
            synthetic_embeddings(&cfg, 16, 8, 2).unwrap(),
            (words.clone(), entities.clone())
        );

        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt()
                * b.iter().map(|x| x * x).sum::<f64>().sqrt())
        };
        let v = |i: usize| words[i].1.as_slice();
        // words 0 and 1 share topic 0; word TOPIC_WORDS starts topic 1
        assert!(cos(v(0), v(1)) > 0.5);
        assert!(cos(v(0), v(1)) > cos(v(0), v(TOPIC_WORDS)));
        let e = |name: &str| {
            entities
                .iter()
                .find(|(n, _)| n == name)
                .unwrap()
                .1
                .as_slice()
        };
        assert!(cos(e("Q0x0"), e("Q0x1")) > cos(e("Q0x0"), e("Q1x0")));
    }
}
