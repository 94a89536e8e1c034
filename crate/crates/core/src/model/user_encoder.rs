//! Popularity-aware user encoder: self-attention over clicked news, then
//! content-popularity joint attention
//! `α_i = softmax_i(qᵀ tanh(W^u [m_i, p_i]))`, `u = Σ α_i m_i`.

use rand::Rng;

use super::config::ModelConfig;
use super::layers::{AttentionPool, Forward, MultiHeadAttention};
use crate::autodiff::{ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct UserEncoder {
    pub news_self: MultiHeadAttention,
    /// `[bins, dim]`, or a single shared row when user popularity is ablated.
    pub popularity_embedding: ParamId,
    pub joint_attention: AttentionPool,
    pub dim: usize,
    shared_popularity: bool,
    bins: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct UserTrace {
    pub contextual: Option<Var>,
    pub weights: Option<Var>,
    pub embedding: Var,
}

impl UserEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let d = config.model_dim();
        let shared = config.ablations.no_user_popularity;
        let rows = if shared { 1 } else { config.popularity_bins };
        Ok(UserEncoder {
            news_self: MultiHeadAttention::new(
                store,
                "user.news_self",
                d,
                d,
                config.heads,
                config.head_dim,
                rng,
            )?,
            popularity_embedding: store.add(
                "user.popularity_embedding",
                Tensor::randn(&[rows, config.popularity_dim], 0.1, rng),
            )?,
            joint_attention: AttentionPool::new(
                store,
                "user.joint_attention",
                d + config.popularity_dim,
                config.query_dim,
                rng,
            )?,
            dim: d,
            shared_popularity: shared,
            bins: config.popularity_bins,
        })
    }

    /// `history`: `[N, d]` clicked-news embeddings, oldest first (`None` for
    /// a user without clicks); `bins`: popularity bin per click.
    pub fn encode(&self, f: &mut Forward<'_>, history: Option<Var>, bins: &[usize]) -> Result<Var> {
        Ok(self.encode_traced(f, history, bins)?.embedding)
    }

    pub fn encode_traced(
        &self,
        f: &mut Forward<'_>,
        history: Option<Var>,
        bins: &[usize],
    ) -> Result<UserTrace> {
        let Some(history) = history else {
            if !bins.is_empty() {
                return Err(Error::Contract(
                    "popularity bins given for an empty history".into(),
                ));
            }
            let zero = f.tape.constant(Tensor::zeros(&[1, self.dim]))?;
            return Ok(UserTrace {
                contextual: None,
                weights: None,
                embedding: zero,
            });
        };
        let (n, _) = f.tape.shape(history);
        if n != bins.len() {
            return Err(Error::Contract(format!(
                "{n} clicked news but {} popularity bins",
                bins.len()
            )));
        }
        if let Some(&bad) = bins.iter().find(|&&b| b >= self.bins) {
            return Err(Error::Contract(format!(
                "popularity bin {bad} out of range 0..{}",
                self.bins
            )));
        }
        let contextual = self.news_self.self_attention(f, history)?;
        let contextual = f.dropout(contextual)?;
        let rows: Vec<usize> = if self.shared_popularity {
            vec![0; n]
        } else {
            bins.to_vec()
        };
        let table = f.tape.param(self.popularity_embedding);
        let popularity = f.tape.gather_rows(table, &rows)?;
        let joint = f.tape.concat(&[contextual, popularity], 1)?;
        let weights = self.joint_attention.weights(f, joint)?;
        let embedding = f.tape.matmul(weights, contextual)?;
        Ok(UserTrace {
            contextual: Some(contextual),
            weights: Some(weights),
            embedding,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::gradcheck::check_gradients;
    use crate::model::Ablations;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config() -> ModelConfig {
        ModelConfig {
            heads: 2,
            head_dim: 2,
            popularity_dim: 3,
            query_dim: 4,
            popularity_bins: 10,
            ..Default::default()
        }
    }

    fn encoder(cfg: &ModelConfig) -> (ParamStore, UserEncoder) {
        let mut store = ParamStore::new();
        let u = UserEncoder::new(&mut store, cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        (store, u)
    }

    fn history() -> Vec<Vec<f64>> {
        vec![
            vec![0.4, -0.3, 0.2, 0.8],
            vec![-0.5, 0.1, 0.9, 0.0],
            vec![0.3, 0.3, -0.7, 0.2],
        ]
    }

    #[test]
    fn empty_history_is_zero_vector() {
        let (store, u) = encoder(&config());
        let mut f = Forward::eval(&store);
        let v = u.encode(&mut f, None, &[]).unwrap();
        assert_eq!(f.tape.value(v).data(), &[0.0; 4]);
    }

    #[test]
    fn single_click_is_its_value_projection() {
        let (store, u) = encoder(&config());
        let row = Tensor::row(history()[0].clone());
        let mut f = Forward::eval(&store);
        let h = f.tape.constant(row.clone()).unwrap();
        let t = u.encode_traced(&mut f, Some(h), &[7]).unwrap();
        assert_eq!(f.tape.value(t.weights.unwrap()).data(), &[1.0]);
        let expected = row.matmul(store.value(u.news_self.value)).unwrap();
        for (a, b) in f.tape.value(t.embedding).data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scripted_three_click_user() {
        let (store, u) = encoder(&config());
        let bins = [2, 9, 0];
        let mut f = Forward::eval(&store);
        let h = f
            .tape
            .constant(Tensor::from_rows(&history()).unwrap())
            .unwrap();
        let t = u.encode_traced(&mut f, Some(h), &bins).unwrap();

        // oracle: plain loops over the stored parameters
        let m = f.tape.value(t.contextual.unwrap()).clone();
        let table = store.value(u.popularity_embedding);
        let w = store.value(u.joint_attention.projection);
        let q = store.value(u.joint_attention.query);
        let logits: Vec<f64> = (0..3)
            .map(|i| {
                let x: Vec<f64> = m
                    .row_slice(i)
                    .iter()
                    .chain(table.row_slice(bins[i]))
                    .copied()
                    .collect();
                (0..w.cols())
                    .map(|j| {
                        let h: f64 = x.iter().enumerate().map(|(k, xk)| xk * w.get(k, j)).sum();
                        h.tanh() * q.get(j, 0)
                    })
                    .sum()
            })
            .collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let alpha: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
        let got_alpha = f.tape.value(t.weights.unwrap()).data().to_vec();
        for (a, b) in got_alpha.iter().zip(&alpha) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((got_alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let u_vec = f.tape.value(t.embedding).data().to_vec();
        for (j, &u_j) in u_vec.iter().enumerate() {
            let expected: f64 = (0..3).map(|i| alpha[i] * m.get(i, j)).sum();
            assert!((u_j - expected).abs() < 1e-12);
            // convex hull of the contextual rows, per coordinate
            let (lo, hi) = (0..3)
                .map(|i| m.get(i, j))
                .fold((f64::MAX, f64::MIN), |(a, b), x| (a.min(x), b.max(x)));
            assert!(u_j >= lo - 1e-12 && u_j <= hi + 1e-12);
        }
    }

    #[test]
    fn identical_clicks_get_uniform_weights() {
        let (store, u) = encoder(&config());
        let row = history()[1].clone();
        let mut f = Forward::eval(&store);
        let h = f
            .tape
            .constant(Tensor::from_rows(&[row.clone(), row.clone(), row]).unwrap())
            .unwrap();
        let t = u.encode_traced(&mut f, Some(h), &[5, 5, 5]).unwrap();
        for a in f.tape.value(t.weights.unwrap()).data() {
            assert!((a - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_popularity_ignores_bins() {
        let cfg = ModelConfig {
            ablations: Ablations {
                no_user_popularity: true,
                ..Default::default()
            },
            ..config()
        };
        let (store, u) = encoder(&cfg);
        assert_eq!(store.value(u.popularity_embedding).rows(), 1);
        let row = history()[2].clone();
        let run = |bins: &[usize]| {
            let mut f = Forward::eval(&store);
            let h = f
                .tape
                .constant(Tensor::from_rows(&[row.clone(), row.clone()]).unwrap())
                .unwrap();
            let t = u.encode_traced(&mut f, Some(h), bins).unwrap();
            f.tape.value(t.weights.unwrap()).data().to_vec()
        };
        assert_eq!(run(&[0, 9]), vec![0.5, 0.5]);
        assert_eq!(run(&[0, 9]), run(&[3, 3]));
    }

    #[test]
    fn user_gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let u = UserEncoder::new(&mut store, &config(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let h_id = store
            .add("history_input", Tensor::from_rows(&history()).unwrap())
            .unwrap();
        let probe = Tensor::row(vec![0.3, -1.0, 0.5, 0.8]);
        let report = check_gradients(&store, 1e-5, |tape: &mut Tape| {
            Forward::on_tape(tape, |f| {
                let h = f.tape.param(h_id);
                let v = u.encode(f, Some(h), &[1, 4, 4])?;
                let p = f.tape.constant(probe.clone())?;
                let s = f.tape.mul(v, p)?;
                Ok(f.tape.sum(s))
            })
        })
        .unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }
}
