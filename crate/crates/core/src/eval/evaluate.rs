//! Scoring whole splits: ranking metrics, cold-start buckets and diversity.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diversity::{ilad, new_topic_ratio};
use super::metrics::{rank_order, ImpressionMetrics};
use crate::data::corpus::{ImpressionSample, NewsCatalog};
use crate::error::{Error, Result};
use crate::model::PpRec;
use crate::tensor::Tensor;

pub const COLD_START_BUCKETS: [usize; 4] = [0, 1, 3, 5];
pub const DIVERSITY_DEPTH: usize = 10;

/// Anything that scores the candidates of an impression.
pub trait Scorer: Sync {
    fn score(&self, sample: &ImpressionSample) -> Result<Vec<f64>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    ViewNum,
    RecentPop,
    Ctr,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [Baseline::ViewNum, Baseline::RecentPop, Baseline::Ctr];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::ViewNum => "ViewNum",
            Baseline::RecentPop => "RecentPop",
            Baseline::Ctr => "CTR",
        }
    }
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "viewnum" => Ok(Baseline::ViewNum),
            "recentpop" => Ok(Baseline::RecentPop),
            "ctr" => Ok(Baseline::Ctr),
            other => Err(Error::Config(format!(
                "unknown baseline {other:?} (viewnum, recentpop, ctr)"
            ))),
        }
    }
}

impl Scorer for Baseline {
    fn score(&self, sample: &ImpressionSample) -> Result<Vec<f64>> {
        Ok(sample
            .candidates
            .iter()
            .map(|c| match self {
                Baseline::ViewNum => c.lifetime_views as f64,
                Baseline::RecentPop => c.recent_views as f64,
                Baseline::Ctr => c.ctr,
            })
            .collect())
    }
}

/// A trained model with its news embeddings computed once up front.
pub struct ModelScorer<'m> {
    model: &'m PpRec,
    embeddings: Tensor,
}

impl<'m> ModelScorer<'m> {
    pub fn new(model: &'m PpRec, catalog: &NewsCatalog) -> Result<Self> {
        Ok(ModelScorer {
            model,
            embeddings: model.news_embeddings(catalog, true)?,
        })
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }
}

impl Scorer for ModelScorer<'_> {
    fn score(&self, sample: &ImpressionSample) -> Result<Vec<f64>> {
        Ok(self
            .model
            .score_sample(&self.embeddings, sample)?
            .iter()
            .map(|b| b.s)
            .collect())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub cold_start: bool,
    pub diversity: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketResult {
    pub history_len: usize,
    pub impressions: usize,
    /// `None` when no evaluable impression fell in the bucket.
    pub metrics: Option<ImpressionMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEvaluation {
    pub metrics: ImpressionMetrics,
    pub evaluated: usize,
    /// Impressions lacking a clicked or a non-clicked candidate.
    pub excluded: usize,
    pub cold_start: Vec<BucketResult>,
    /// Entry `k - 1` holds the value at depth `k`.
    pub ilad: Vec<f64>,
    pub new_topic_ratio: Vec<f64>,
    pub ilad_excluded_pairs: usize,
}

struct PerImpression {
    metrics: Option<ImpressionMetrics>,
    history_len: usize,
    ilad: Vec<f64>,
    new_topic: Vec<f64>,
    excluded_pairs: usize,
}

/// Model-independent content vector of an article: counts of its title
/// words and entities, in a space local to one list.
fn content_vectors(catalog: &NewsCatalog, news: &[usize]) -> Vec<Vec<f64>> {
    let mut slots: HashMap<(bool, usize), usize> = HashMap::new();
    for &n in news {
        let a = catalog.article(n);
        for key in a
            .tokens
            .iter()
            .map(|&t| (false, t))
            .chain(a.entities.iter().map(|&e| (true, e)))
        {
            let next = slots.len();
            slots.entry(key).or_insert(next);
        }
    }
    news.iter()
        .map(|&n| {
            let a = catalog.article(n);
            let mut v = vec![0.0; slots.len()];
            for key in a
                .tokens
                .iter()
                .map(|&t| (false, t))
                .chain(a.entities.iter().map(|&e| (true, e)))
            {
                v[slots[&key]] += 1.0;
            }
            v
        })
        .collect()
}

fn evaluate_one(
    scorer: &dyn Scorer,
    sample: &ImpressionSample,
    catalog: &NewsCatalog,
    opts: EvalOptions,
) -> Result<PerImpression> {
    let scores = scorer.score(sample)?;
    if scores.len() != sample.candidates.len() {
        return Err(Error::Contract(format!(
            "scorer returned {} scores for {} candidates",
            scores.len(),
            sample.candidates.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite score {bad} for user {} at {}",
            sample.user, sample.time
        )));
    }
    let labels = sample.labels();
    let mut out = PerImpression {
        metrics: ImpressionMetrics::compute(&scores, &labels),
        history_len: sample.history.len(),
        ilad: Vec::new(),
        new_topic: Vec::new(),
        excluded_pairs: 0,
    };
    if opts.diversity {
        let order = rank_order(&scores);
        let top: Vec<usize> = order
            .iter()
            .take(DIVERSITY_DEPTH)
            .map(|&i| sample.candidates[i].news)
            .collect();
        let vectors = content_vectors(catalog, &top);
        let history_topics: HashSet<&str> = sample
            .history
            .iter()
            .map(|h| catalog.article(h.news).topic.as_str())
            .collect();
        let ranked: Vec<(&str, bool)> = order
            .iter()
            .take(DIVERSITY_DEPTH)
            .map(|&i| {
                (
                    catalog.article(sample.candidates[i].news).topic.as_str(),
                    labels[i],
                )
            })
            .collect();
        for k in 1..=DIVERSITY_DEPTH {
            let depth = k.min(vectors.len());
            let refs: Vec<&[f64]> = vectors[..depth].iter().map(|v| v.as_slice()).collect();
            let r = ilad(&refs);
            out.ilad.push(r.value);
            if k == DIVERSITY_DEPTH {
                out.excluded_pairs = r.excluded_pairs;
            }
            out.new_topic
                .push(new_topic_ratio(&ranked, &history_topics, k));
        }
    }
    Ok(out)
}

fn mean_metrics<'a>(
    items: impl Iterator<Item = &'a ImpressionMetrics>,
) -> Option<ImpressionMetrics> {
    let mut sum = [0.0; 4];
    let mut n = 0usize;
    for m in items {
        for (s, v) in sum.iter_mut().zip(m.values()) {
            *s += v;
        }
        n += 1;
    }
    (n > 0).then(|| {
        let d = n as f64;
        ImpressionMetrics {
            auc: sum[0] / d,
            mrr: sum[1] / d,
            ndcg5: sum[2] / d,
            ndcg10: sum[3] / d,
        }
    })
}

/// Scores every impression (in parallel on the current rayon pool) and
/// aggregates in input order, so results do not depend on thread count.
pub fn evaluate(
    scorer: &dyn Scorer,
    samples: &[ImpressionSample],
    catalog: &NewsCatalog,
    opts: EvalOptions,
) -> Result<RunEvaluation> {
    if samples.is_empty() {
        return Err(Error::Ingestion("no impressions to evaluate".into()));
    }
    let per: Vec<PerImpression> = samples
        .par_iter()
        .map(|s| evaluate_one(scorer, s, catalog, opts))
        .collect::<Result<_>>()?;

    let evaluated: Vec<&PerImpression> = per.iter().filter(|p| p.metrics.is_some()).collect();
    let metrics =
        mean_metrics(evaluated.iter().filter_map(|p| p.metrics.as_ref())).ok_or_else(|| {
            Error::Ingestion(format!(
                "none of {} impressions has both a click and a non-click",
                per.len()
            ))
        })?;
    let excluded = per.len() - evaluated.len();
    if excluded > 0 {
        log::warn!("{excluded} single-class impressions excluded from evaluation");
    }

    let cold_start = if opts.cold_start {
        COLD_START_BUCKETS
            .iter()
            .map(|&k| {
                let members: Vec<&ImpressionMetrics> = evaluated
                    .iter()
                    .filter(|p| p.history_len == k)
                    .filter_map(|p| p.metrics.as_ref())
                    .collect();
                BucketResult {
                    history_len: k,
                    impressions: members.len(),
                    metrics: mean_metrics(members.into_iter()),
                }
            })
            .collect()
    } else {
        Vec::new()
    };

    let (mut ilad_avg, mut topic_avg) = (Vec::new(), Vec::new());
    let mut ilad_excluded_pairs = 0;
    if opts.diversity {
        let n = per.len() as f64;
        for k in 0..DIVERSITY_DEPTH {
            ilad_avg.push(per.iter().map(|p| p.ilad[k]).sum::<f64>() / n);
            topic_avg.push(per.iter().map(|p| p.new_topic[k]).sum::<f64>() / n);
        }
        ilad_excluded_pairs = per.iter().map(|p| p.excluded_pairs).sum();
    }

    Ok(RunEvaluation {
        metrics,
        evaluated: evaluated.len(),
        excluded,
        cold_start,
        ilad: ilad_avg,
        new_topic_ratio: topic_avg,
        ilad_excluded_pairs,
    })
}
