//! Knowledge-aware news encoder: word and entity streams, each refined by
//! self-attention plus cross-attention to the other stream, pooled by
//! additive attention and fused into one news embedding.

use rand::Rng;

use super::config::ModelConfig;
use super::layers::{AttentionPool, Forward, MultiHeadAttention};
use crate::autodiff::{ParamId, ParamStore, Var};
use crate::data::preprocess::NewsArticle;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct KnowledgeBranch {
    pub entity_embedding: ParamId,
    /// Linear map from entity embeddings to the model width.
    pub entity_projection: ParamId,
    pub word_cross: MultiHeadAttention,
    pub entity_self: MultiHeadAttention,
    pub entity_cross: MultiHeadAttention,
    pub entity_pool: AttentionPool,
    pub fusion: AttentionPool,
}

#[derive(Clone, Debug)]
pub struct NewsEncoder {
    pub word_embedding: ParamId,
    pub word_self: MultiHeadAttention,
    pub word_pool: AttentionPool,
    pub knowledge: Option<KnowledgeBranch>,
    pub dim: usize,
}

/// Per-article intermediate values, for inspection and tests.
#[derive(Clone, Debug)]
pub struct NewsTrace {
    pub word_reps: Var,
    pub entity_reps: Option<Var>,
    pub word_vector: Var,
    pub entity_vector: Option<Var>,
    pub embedding: Var,
}

impl NewsEncoder {
    /// Registers all encoder parameters. `word_table` / `entity_table` hold
    /// the initial embedding rows (pretrained or random).
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: &ModelConfig,
        word_table: Tensor,
        entity_table: Option<Tensor>,
        rng: &mut R,
    ) -> Result<Self> {
        let d = config.model_dim();
        let (h, hd) = (config.heads, config.head_dim);
        if word_table.cols() != config.word_dim {
            return Err(Error::Config(format!(
                "word table has {} columns, config says {}",
                word_table.cols(),
                config.word_dim
            )));
        }
        let word_embedding = store.add("news.word_embedding", word_table)?;
        let word_self = MultiHeadAttention::new(
            store,
            "news.word_self",
            config.word_dim,
            config.word_dim,
            h,
            hd,
            rng,
        )?;
        let word_pool = AttentionPool::new(store, "news.word_pool", d, config.query_dim, rng)?;
        let knowledge = match (config.ablations.no_knowledge, entity_table) {
            (true, _) => None,
            (false, None) => {
                return Err(Error::Config(
                    "entity table required unless knowledge is ablated".into(),
                ))
            }
            (false, Some(table)) => {
                if table.cols() != config.entity_dim {
                    return Err(Error::Config(format!(
                        "entity table has {} columns, config says {}",
                        table.cols(),
                        config.entity_dim
                    )));
                }
                let w = config.word_dim;
                Some(KnowledgeBranch {
                    entity_embedding: store.add("news.entity_embedding", table)?,
                    entity_projection: store.add(
                        "news.entity_projection",
                        Tensor::glorot(config.entity_dim, d, rng),
                    )?,
                    word_cross: MultiHeadAttention::new(
                        store,
                        "news.word_cross",
                        w,
                        d,
                        h,
                        hd,
                        rng,
                    )?,
                    entity_self: MultiHeadAttention::new(
                        store,
                        "news.entity_self",
                        d,
                        d,
                        h,
                        hd,
                        rng,
                    )?,
                    entity_cross: MultiHeadAttention::new(
                        store,
                        "news.entity_cross",
                        d,
                        w,
                        h,
                        hd,
                        rng,
                    )?,
                    entity_pool: AttentionPool::new(
                        store,
                        "news.entity_pool",
                        d,
                        config.query_dim,
                        rng,
                    )?,
                    fusion: AttentionPool::new(store, "news.fusion", d, config.query_dim, rng)?,
                })
            }
        };
        Ok(NewsEncoder {
            word_embedding,
            word_self,
            word_pool,
            knowledge,
            dim: d,
        })
    }

    pub fn encode(&self, f: &mut Forward<'_>, article: &NewsArticle) -> Result<Var> {
        Ok(self.encode_batch_traced(f, &[article])?.remove(0).embedding)
    }

    /// Encodes several articles on one tape. Embedding lookups and Q/K/V
    /// projections run once over the concatenated tokens; attention is then
    /// computed per article. Returns one `[1, d]` row per article.
    pub fn encode_batch(&self, f: &mut Forward<'_>, articles: &[&NewsArticle]) -> Result<Vec<Var>> {
        Ok(self
            .encode_batch_traced(f, articles)?
            .into_iter()
            .map(|t| t.embedding)
            .collect())
    }

    pub fn encode_batch_traced(
        &self,
        f: &mut Forward<'_>,
        articles: &[&NewsArticle],
    ) -> Result<Vec<NewsTrace>> {
        if articles.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(a) = articles.iter().find(|a| a.tokens.is_empty()) {
            return Err(Error::Contract(format!("news {} has an empty title", a.id)));
        }
        let word_ids: Vec<usize> = articles
            .iter()
            .flat_map(|a| a.tokens.iter().copied())
            .collect();
        let table = f.tape.param(self.word_embedding);
        let words = f.tape.gather_rows(table, &word_ids)?;
        let words = f.dropout(words)?;

        let ws = &self.word_self;
        let ws_q = ws.project_queries(&mut f.tape, words)?;
        let ws_k = ws.project_keys(&mut f.tape, words)?;
        let ws_v = ws.project_values(&mut f.tape, words)?;

        struct Projected {
            wc_q: Var,
            es: [Var; 3],
            ec_q: Var,
            wc_kv: [Var; 2],
            ec_kv: [Var; 2],
        }
        let kb = self.knowledge.as_ref();
        let entity_ids: Vec<usize> = articles
            .iter()
            .flat_map(|a| a.entities.iter().copied())
            .collect();
        let projected = match kb {
            Some(kb) if !entity_ids.is_empty() => {
                let table = f.tape.param(kb.entity_embedding);
                let raw = f.tape.gather_rows(table, &entity_ids)?;
                let proj = f.tape.param(kb.entity_projection);
                let ents = f.tape.matmul(raw, proj)?;
                let ents = f.dropout(ents)?;
                Some(Projected {
                    wc_q: kb.word_cross.project_queries(&mut f.tape, words)?,
                    wc_kv: [
                        kb.word_cross.project_keys(&mut f.tape, ents)?,
                        kb.word_cross.project_values(&mut f.tape, ents)?,
                    ],
                    es: [
                        kb.entity_self.project_queries(&mut f.tape, ents)?,
                        kb.entity_self.project_keys(&mut f.tape, ents)?,
                        kb.entity_self.project_values(&mut f.tape, ents)?,
                    ],
                    ec_q: kb.entity_cross.project_queries(&mut f.tape, ents)?,
                    ec_kv: [
                        kb.entity_cross.project_keys(&mut f.tape, words)?,
                        kb.entity_cross.project_values(&mut f.tape, words)?,
                    ],
                })
            }
            _ => None,
        };

        let mut out = Vec::with_capacity(articles.len());
        let (mut w_off, mut e_off) = (0, 0);
        for a in articles {
            let w_rows: Vec<usize> = (w_off..w_off + a.tokens.len()).collect();
            w_off += a.tokens.len();
            let n_ent = if kb.is_some() { a.entities.len() } else { 0 };
            let e_rows: Vec<usize> = (e_off..e_off + n_ent).collect();
            e_off += if kb.is_some() { a.entities.len() } else { 0 };

            let take = |f: &mut Forward<'_>, v: Var, rows: &[usize]| f.tape.gather_rows(v, rows);
            let q = take(f, ws_q, &w_rows)?;
            let k = take(f, ws_k, &w_rows)?;
            let v = take(f, ws_v, &w_rows)?;
            let mut word_reps = ws.attend(f, q, k, v)?;

            let mut entity_reps = None;
            if let (Some(kb), Some(p), false) = (kb, &projected, e_rows.is_empty()) {
                let q = take(f, p.wc_q, &w_rows)?;
                let k = take(f, p.wc_kv[0], &e_rows)?;
                let v = take(f, p.wc_kv[1], &e_rows)?;
                let cross = kb.word_cross.attend(f, q, k, v)?;
                word_reps = f.tape.add(word_reps, cross)?;

                let q = take(f, p.es[0], &e_rows)?;
                let k = take(f, p.es[1], &e_rows)?;
                let v = take(f, p.es[2], &e_rows)?;
                let own = kb.entity_self.attend(f, q, k, v)?;
                let q = take(f, p.ec_q, &e_rows)?;
                let k = take(f, p.ec_kv[0], &w_rows)?;
                let v = take(f, p.ec_kv[1], &w_rows)?;
                let cross = kb.entity_cross.attend(f, q, k, v)?;
                let reps = f.tape.add(own, cross)?;
                entity_reps = Some(f.dropout(reps)?);
            }
            let word_reps = f.dropout(word_reps)?;
            let word_vector = self.word_pool.forward(f, word_reps)?;
            let (entity_vector, embedding) = match (kb, entity_reps) {
                (Some(kb), Some(reps)) => {
                    let e = kb.entity_pool.forward(f, reps)?;
                    let both = f.tape.concat(&[word_vector, e], 0)?;
                    (Some(e), kb.fusion.forward(f, both)?)
                }
                _ => (None, word_vector),
            };
            out.push(NewsTrace {
                word_reps,
                entity_reps,
                word_vector,
                entity_vector,
                embedding,
            });
        }
        Ok(out)
    }
}
