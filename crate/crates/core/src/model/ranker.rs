//! The full ranking model: `s = (1 − η)·s_m + η·s_p` with `s_m = u·n` and a
//! user-conditioned gate `η`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::layers::{Forward, Gate};
use super::news_encoder::NewsEncoder;
use super::popularity::{PopularityOutputs, PopularityPredictor};
use super::user_encoder::UserEncoder;
use crate::autodiff::{ParamStore, Var};
use crate::data::corpus::{ImpressionSample, NewsCatalog};
use crate::data::embeddings::{embedding_table, EmbeddingFile};
use crate::data::preprocess::NewsArticle;
use crate::data::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::tensor::Tensor;

/// Per-candidate score components. Ablated components are `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingBreakdown {
    pub s_m: Option<f64>,
    pub s_p: Option<f64>,
    pub eta: Option<f64>,
    pub s: f64,
}

/// Popularity components of one candidate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopularityBreakdown {
    pub ctr: f64,
    pub content: Option<f64>,
    pub recency: Option<f64>,
    pub theta: Option<f64>,
    pub s_p: f64,
}

/// Tape nodes of one scored impression; columns are `[C, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct ScoreNodes {
    pub score: Var,
    pub matching: Option<Var>,
    pub popularity: Option<PopularityOutputs>,
    pub eta: Option<Var>,
    pub user: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct PpRec {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub news: NewsEncoder,
    pub popularity: Option<PopularityPredictor>,
    pub user: Option<UserEncoder>,
    pub gate: Option<Gate>,
}

/// `s_m = u·n` for every row of `candidates`.
pub fn matching_score(u: &[f64], n: &[f64]) -> Result<f64> {
    if u.len() != n.len() {
        return Err(Error::Contract(format!(
            "matching score of {}-d user and {}-d news",
            u.len(),
            n.len()
        )));
    }
    Ok(u.iter().zip(n).map(|(a, b)| a * b).sum())
}

/// `(1 − η)·s_m + η·s_p`
pub fn combine_scores(s_m: f64, s_p: f64, eta: f64) -> f64 {
    (1.0 - eta) * s_m + eta * s_p
}

impl PpRec {
    /// Fresh model. Embedding rows come from the given files when present,
    /// otherwise from `N(0, 0.1²)`; all randomness derives from `config.seed`.
    pub fn new(
        config: ModelConfig,
        vocab: &Vocabulary,
        entity_vocab: &Vocabulary,
        word_vectors: Option<&EmbeddingFile>,
        entity_vectors: Option<&EmbeddingFile>,
    ) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let (words, hits) = embedding_table(
            vocab.tokens(),
            config.word_dim,
            word_vectors,
            &mut rng_for(seed, "init/words"),
        )?;
        if word_vectors.is_some() {
            log::info!("{hits}/{} words found in the embedding file", vocab.len());
        }
        let entities = if config.ablations.no_knowledge {
            None
        } else {
            let (t, hits) = embedding_table(
                entity_vocab.tokens(),
                config.entity_dim,
                entity_vectors,
                &mut rng_for(seed, "init/entities"),
            )?;
            if entity_vectors.is_some() {
                log::info!(
                    "{hits}/{} entities found in the embedding file",
                    entity_vocab.len()
                );
            }
            Some(t)
        };
        Self::with_tables(config, words, entities)
    }

    /// Model around given embedding tables; other weights are initialized
    /// from `config.seed`.
    pub fn with_tables(
        config: ModelConfig,
        words: Tensor,
        entities: Option<Tensor>,
    ) -> Result<Self> {
        config.validate()?;
        let a = config.ablations;
        let mut params = ParamStore::new();
        let news = NewsEncoder::new(
            &mut params,
            &config,
            words,
            entities,
            &mut rng_for(config.seed, "init/news"),
        )?;
        let popularity = if a.no_popularity_score {
            None
        } else {
            Some(PopularityPredictor::new(
                &mut params,
                &config,
                &mut rng_for(config.seed, "init/popularity"),
            )?)
        };
        let user = if a.no_matching_score {
            None
        } else {
            Some(UserEncoder::new(
                &mut params,
                &config,
                &mut rng_for(config.seed, "init/user"),
            )?)
        };
        let gate = if a.no_matching_score || a.no_popularity_score {
            None
        } else {
            Some(Gate::new(
                &mut params,
                "ranker.gate",
                config.model_dim(),
                config.gate_hidden,
                config.single_layer_gate,
                &mut rng_for(config.seed, "init/gate"),
            )?)
        };
        Ok(PpRec {
            config,
            params,
            news,
            popularity,
            user,
            gate,
        })
    }

    pub fn dim(&self) -> usize {
        self.config.model_dim()
    }

    /// Scores candidates given their embeddings (`[C, d]`) and the user's
    /// clicked-news embeddings (`[N, d]`, `None` for no history).
    pub fn score(
        &self,
        f: &mut Forward<'_>,
        history: Option<Var>,
        history_bins: &[usize],
        candidates: Var,
        recency: &[usize],
        ctr: &[f64],
    ) -> Result<ScoreNodes> {
        let (c, d) = f.tape.shape(candidates);
        if d != self.dim() || c != recency.len() || c != ctr.len() {
            return Err(Error::Contract(format!(
                "scoring {c} candidates of width {d} with {} recency bins and {} CTRs",
                recency.len(),
                ctr.len()
            )));
        }
        let (user, matching) = match &self.user {
            Some(enc) => {
                let u = enc.encode(f, history, history_bins)?;
                (Some(u), Some(f.tape.matmul_nt(candidates, u)?))
            }
            None => (None, None),
        };
        let popularity = match &self.popularity {
            Some(p) => Some(p.forward(f, Some(candidates), recency, ctr)?),
            None => None,
        };
        let (score, eta) = match (matching, popularity, &self.gate, user) {
            (Some(m), Some(p), Some(gate), Some(u)) => {
                let eta = gate.forward(&mut f.tape, u)?;
                let diff = f.tape.sub(p.score, m)?;
                let mixed = f.tape.mul_scalar(diff, eta)?;
                (f.tape.add(m, mixed)?, Some(eta))
            }
            (Some(m), None, _, _) => (m, None),
            (None, Some(p), _, _) => (p.score, None),
            _ => {
                return Err(Error::Contract(
                    "model has neither matching nor popularity score".into(),
                ))
            }
        };
        Ok(ScoreNodes {
            score,
            matching,
            popularity,
            eta,
            user,
        })
    }

    /// Reads per-candidate values off a scored tape.
    pub fn breakdown(f: &Forward<'_>, nodes: &ScoreNodes) -> Vec<RankingBreakdown> {
        let col = |v: Option<Var>| v.map(|v| f.tape.value(v).data().to_vec());
        let s = f.tape.value(nodes.score).data().to_vec();
        let s_m = col(nodes.matching);
        let s_p = col(nodes.popularity.map(|p| p.score));
        let eta = nodes.eta.map(|e| f.tape.value(e).item());
        (0..s.len())
            .map(|i| RankingBreakdown {
                s_m: s_m.as_ref().map(|v| v[i]),
                s_p: s_p.as_ref().map(|v| v[i]),
                eta,
                s: s[i],
            })
            .collect()
    }

    /// Embeddings of every catalog article, `[N, d]`, computed in
    /// independent chunks (optionally in parallel; results are identical).
    pub fn news_embeddings(&self, catalog: &NewsCatalog, parallel: bool) -> Result<Tensor> {
        const CHUNK: usize = 64;
        let articles: Vec<&NewsArticle> = catalog.articles().iter().collect();
        let encode = |chunk: &[&NewsArticle]| -> Result<Vec<f64>> {
            let mut f = Forward::eval(&self.params);
            let vars = self.news.encode_batch(&mut f, chunk)?;
            Ok(vars
                .iter()
                .flat_map(|v| f.tape.value(*v).data().to_vec())
                .collect())
        };
        let chunks: Vec<Result<Vec<f64>>> = if parallel {
            articles.par_chunks(CHUNK).map(encode).collect()
        } else {
            articles.chunks(CHUNK).map(encode).collect()
        };
        let mut data = Vec::with_capacity(articles.len() * self.dim());
        for c in chunks {
            data.extend(c?);
        }
        Tensor::new(vec![articles.len(), self.dim()], data)
    }

    /// Scores one impression from precomputed news embeddings.
    pub fn score_sample(
        &self,
        embeddings: &Tensor,
        sample: &ImpressionSample,
    ) -> Result<Vec<RankingBreakdown>> {
        let mut f = Forward::eval(&self.params);
        let nodes = self.score_sample_on(&mut f, embeddings, sample)?;
        Ok(Self::breakdown(&f, &nodes))
    }

    pub fn score_sample_on<'a>(
        &self,
        f: &mut Forward<'a>,
        embeddings: &'a Tensor,
        sample: &ImpressionSample,
    ) -> Result<ScoreNodes> {
        let table = f.tape.constant_ref(embeddings)?;
        let history_rows: Vec<usize> = sample.history.iter().map(|h| h.news).collect();
        let bins: Vec<usize> = sample.history.iter().map(|h| h.popularity_bin).collect();
        let history = if history_rows.is_empty() {
            None
        } else {
            Some(f.tape.gather_rows(table, &history_rows)?)
        };
        let cand_rows: Vec<usize> = sample.candidates.iter().map(|c| c.news).collect();
        let candidates = f.tape.gather_rows(table, &cand_rows)?;
        let recency: Vec<usize> = sample.candidates.iter().map(|c| c.recency).collect();
        let ctr: Vec<f64> = sample.candidates.iter().map(|c| c.ctr).collect();
        self.score(f, history, &bins, candidates, &recency, &ctr)
    }

    /// Popularity components for arbitrary (embedding row, recency, CTR)
    /// triples.
    pub fn predict_popularity(
        &self,
        embeddings: &Tensor,
        rows: &[usize],
        recency: &[usize],
        ctr: &[f64],
    ) -> Result<Vec<PopularityBreakdown>> {
        let p = self
            .popularity
            .as_ref()
            .ok_or_else(|| Error::Config("model was trained without a popularity score".into()))?;
        let mut f = Forward::eval(&self.params);
        let table = f.tape.constant_ref(embeddings)?;
        let news = f.tape.gather_rows(table, rows)?;
        let out = p.forward(&mut f, Some(news), recency, ctr)?;
        let col = |v: Option<Var>| v.map(|v| f.tape.value(v).data().to_vec());
        let (content, rec, theta) = (col(out.content), col(out.recency), col(out.theta));
        let s_p = f.tape.value(out.score).data().to_vec();
        Ok((0..rows.len())
            .map(|i| PopularityBreakdown {
                ctr: ctr[i],
                content: content.as_ref().map(|v| v[i]),
                recency: rec.as_ref().map(|v| v[i]),
                // with one branch ablated the gate is pinned
                theta: theta.as_ref().map(|v| v[i]).or(match (&content, &rec) {
                    (Some(_), None) => Some(1.0),
                    (None, Some(_)) => Some(0.0),
                    _ => None,
                }),
                s_p: s_p[i],
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::corpus::{Candidate, HistoryItem};
    use crate::model::Ablations;

    fn config(ablations: Ablations) -> ModelConfig {
        ModelConfig {
            word_dim: 5,
            entity_dim: 3,
            heads: 2,
            head_dim: 2,
            query_dim: 3,
            recency_dim: 3,
            popularity_dim: 3,
            popularity_hidden: 4,
            gate_hidden: 3,
            max_recency_hours: 24,
            popularity_bins: 20,
            seed: 5,
            ablations,
            ..Default::default()
        }
    }

    fn model(ablations: Ablations) -> PpRec {
        let vocab = Vocabulary::from_tokens((0..8).flat_map(|i| vec![format!("w{i}"); 3]), 1);
        let ents = Vocabulary::from_tokens(["a", "b", "c"], 1);
        PpRec::new(config(ablations), &vocab, &ents, None, None).unwrap()
    }

    fn sample(history: usize) -> ImpressionSample {
        ImpressionSample {
            user: "u".into(),
            time: 100,
            candidates: (0..4)
                .map(|i| Candidate {
                    news: i,
                    clicked: i == 0,
                    ctr: 0.05 + 0.1 * i as f64,
                    recency: i * 3,
                    lifetime_views: 0,
                    recent_views: 0,
                })
                .collect(),
            history: (0..history)
                .map(|i| HistoryItem {
                    news: 4 + i,
                    click_time: i as i64,
                    ctr: 0.1,
                    popularity_bin: i % 20,
                })
                .collect(),
        }
    }

    fn embeddings(m: &PpRec) -> Tensor {
        let arts: Vec<NewsArticle> = (0..8)
            .map(|i| NewsArticle {
                id: format!("n{i}"),
                tokens: vec![1 + i % 8, 1 + (i * 3) % 8],
                entities: if i % 2 == 0 { vec![1, 2] } else { vec![] },
                publish_time: 1,
                topic: String::new(),
            })
            .collect();
        m.news_embeddings(&NewsCatalog::from_articles(arts), false)
            .unwrap()
    }

    #[test]
    fn matching_score_examples() {
        assert_eq!(
            matching_score(&[0.0; 4], &[1.0, 2.0, 3.0, 4.0]).unwrap(),
            0.0
        );
        assert_eq!(matching_score(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 1.0);
        let (u, n) = ([0.3, -1.2, 0.5, 2.0], [1.5, 0.25, -4.0, 0.1]);
        let mut oracle = 0.0;
        for i in 0..4 {
            oracle += u[i] * n[i];
        }
        assert_eq!(matching_score(&u, &n).unwrap(), oracle);
        assert!(matching_score(&[1.0], &[1.0, 2.0]).is_err());
        assert_eq!(combine_scores(2.0, 4.0, 0.5), 3.0);
    }

    #[test]
    fn breakdown_identity_holds() {
        let m = model(Ablations::default());
        let emb = embeddings(&m);
        for h in [0, 1, 3] {
            for b in m.score_sample(&emb, &sample(h)).unwrap() {
                let eta = b.eta.unwrap();
                assert!(eta > 0.0 && eta < 1.0);
                assert!((b.s - combine_scores(b.s_m.unwrap(), b.s_p.unwrap(), eta)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cold_user_matches_nothing() {
        let m = model(Ablations::default());
        let emb = embeddings(&m);
        let scores = m.score_sample(&emb, &sample(0)).unwrap();
        assert!(scores.iter().all(|b| b.s_m == Some(0.0)));
        // η at u = 0 is the gate evaluated at zero input, same for all
        let mut f = Forward::eval(&m.params);
        let z = f.tape.constant(Tensor::zeros(&[1, m.dim()])).unwrap();
        let eta = m.gate.as_ref().unwrap().forward(&mut f.tape, z).unwrap();
        assert_eq!(scores[0].eta, Some(f.tape.value(eta).item()));
    }

    #[test]
    fn ablated_scores_equal_their_component() {
        let m = model(Ablations {
            no_popularity_score: true,
            ..Default::default()
        });
        assert!(m.popularity.is_none() && m.gate.is_none());
        let emb = embeddings(&m);
        for b in m.score_sample(&emb, &sample(2)).unwrap() {
            assert_eq!(Some(b.s), b.s_m);
        }
        let m = model(Ablations {
            no_matching_score: true,
            ..Default::default()
        });
        assert!(m.user.is_none());
        let emb = embeddings(&m);
        for b in m.score_sample(&emb, &sample(2)).unwrap() {
            assert_eq!(Some(b.s), b.s_p);
        }
    }

    #[test]
    fn parallel_embeddings_match_serial() {
        let m = model(Ablations::default());
        let arts: Vec<NewsArticle> = (0..150)
            .map(|i| NewsArticle {
                id: format!("n{i}"),
                tokens: vec![i % 9, (i * 7) % 9],
                entities: vec![i % 4],
                publish_time: 1,
                topic: String::new(),
            })
            .collect();
        let cat = NewsCatalog::from_articles(arts);
        assert_eq!(
            m.news_embeddings(&cat, false).unwrap(),
            m.news_embeddings(&cat, true).unwrap()
        );
    }

    #[test]
    fn popularity_breakdown_reports_pinned_gate() {
        let m = model(Ablations {
            no_recency: true,
            ..Default::default()
        });
        let emb = embeddings(&m);
        let rows = m
            .predict_popularity(&emb, &[0, 1], &[0, 5], &[0.1, 0.2])
            .unwrap();
        assert!(rows
            .iter()
            .all(|r| r.theta == Some(1.0) && r.recency.is_none()));
        let m = model(Ablations::default());
        let emb = embeddings(&m);
        for r in m
            .predict_popularity(&emb, &[0, 1], &[0, 5], &[0.1, 0.2])
            .unwrap()
        {
            let t = r.theta.unwrap();
            assert!(t > 0.0 && t < 1.0);
        }
    }
}
