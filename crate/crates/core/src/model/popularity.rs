//! Time-aware popularity: content- and recency-based estimates mixed by a
//! content-specific gate, plus the near-real-time CTR.
//!
//! `p̂ = θ·p̂_c + (1 − θ)·p̂_r`, `s_p = w_c·c_t + w_p·p̂`.

use rand::Rng;

use super::config::ModelConfig;
use super::layers::{Forward, Gate, Mlp};
use crate::autodiff::{ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct PopularityPredictor {
    pub content: Option<Mlp>,
    pub recency_embedding: Option<ParamId>,
    pub recency: Option<Mlp>,
    /// Present only when both content and recency are used.
    pub gate: Option<Gate>,
    pub ctr_weight: Option<ParamId>,
    pub popularity_weight: Option<ParamId>,
    recency_bins: usize,
}

/// Column vectors (`[C, 1]`), one row per candidate.
#[derive(Clone, Copy, Debug)]
pub struct PopularityOutputs {
    pub content: Option<Var>,
    pub recency: Option<Var>,
    pub theta: Option<Var>,
    /// `p̂`, absent when both content and recency are ablated.
    pub learned: Option<Var>,
    pub score: Var,
}

impl PopularityPredictor {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let a = &config.ablations;
        let d = config.model_dim();
        let content = if a.uses_content_popularity() {
            Some(Mlp::new(
                store,
                "popularity.content",
                d,
                config.popularity_hidden,
                rng,
            )?)
        } else {
            None
        };
        let (recency_embedding, recency) = if a.uses_recency_popularity() {
            let table = Tensor::randn(&[config.recency_bins(), config.recency_dim], 0.1, rng);
            (
                Some(store.add("popularity.recency_embedding", table)?),
                Some(Mlp::new(
                    store,
                    "popularity.recency",
                    config.recency_dim,
                    config.popularity_hidden,
                    rng,
                )?),
            )
        } else {
            (None, None)
        };
        let gate = if content.is_some() && recency.is_some() {
            Some(Gate::new(
                store,
                "popularity.gate",
                d + config.recency_dim,
                config.gate_hidden,
                config.single_layer_gate,
                rng,
            )?)
        } else {
            None
        };
        let ctr_weight = if a.no_ctr {
            None
        } else {
            Some(store.add("popularity.ctr_weight", Tensor::scalar(1.0))?)
        };
        let popularity_weight = if a.uses_learned_popularity() {
            Some(store.add("popularity.popularity_weight", Tensor::scalar(1.0))?)
        } else {
            None
        };
        Ok(PopularityPredictor {
            content,
            recency_embedding,
            recency,
            gate,
            ctr_weight,
            popularity_weight,
            recency_bins: config.recency_bins(),
        })
    }

    /// Whether `forward` needs news embeddings.
    pub fn uses_content(&self) -> bool {
        self.content.is_some()
    }

    /// `news`: `[C, d]` candidate embeddings (may be `None` when content is
    /// unused); `recency`: bins; `ctr`: near-real-time CTRs.
    pub fn forward(
        &self,
        f: &mut Forward<'_>,
        news: Option<Var>,
        recency: &[usize],
        ctr: &[f64],
    ) -> Result<PopularityOutputs> {
        if recency.len() != ctr.len() || recency.is_empty() {
            return Err(Error::Contract(format!(
                "popularity inputs: {} recency bins vs {} CTR values",
                recency.len(),
                ctr.len()
            )));
        }
        if let Some(&bad) = recency.iter().find(|&&r| r >= self.recency_bins) {
            return Err(Error::Contract(format!(
                "recency bin {bad} out of range 0..{}",
                self.recency_bins
            )));
        }
        let content = match &self.content {
            Some(net) => {
                let n = news.ok_or_else(|| {
                    Error::Contract("content popularity needs news embeddings".into())
                })?;
                Some(net.forward(&mut f.tape, n)?)
            }
            None => None,
        };
        let (recency_out, recency_emb) = match (&self.recency, self.recency_embedding) {
            (Some(net), Some(table)) => {
                let table = f.tape.param(table);
                let emb = f.tape.gather_rows(table, recency)?;
                (Some(net.forward(&mut f.tape, emb)?), Some(emb))
            }
            _ => (None, None),
        };
        let mut theta = None;
        let learned = match (content, recency_out) {
            (Some(pc), Some(pr)) => {
                let gate = self.gate.as_ref().expect("gate exists with both branches");
                let n = news.expect("checked above");
                let joint = f.tape.concat(&[n, recency_emb.expect("with recency")], 1)?;
                let t = gate.forward(&mut f.tape, joint)?;
                theta = Some(t);
                // θ·p̂_c + (1 − θ)·p̂_r = p̂_r + θ·(p̂_c − p̂_r)
                let diff = f.tape.sub(pc, pr)?;
                let mixed = f.tape.mul(t, diff)?;
                Some(f.tape.add(pr, mixed)?)
            }
            (Some(pc), None) => Some(pc),
            (None, Some(pr)) => Some(pr),
            (None, None) => None,
        };

        let mut terms = Vec::new();
        if let Some(w) = self.ctr_weight {
            let c = f.tape.constant(Tensor::column(ctr.to_vec()))?;
            let w = f.tape.param(w);
            terms.push(f.tape.mul_scalar(c, w)?);
        }
        if let (Some(w), Some(p)) = (self.popularity_weight, learned) {
            let w = f.tape.param(w);
            terms.push(f.tape.mul_scalar(p, w)?);
        }
        let score = match terms.as_slice() {
            [one] => *one,
            [a, b] => f.tape.add(*a, *b)?,
            _ => return Err(Error::Config("popularity score has no inputs".into())),
        };
        Ok(PopularityOutputs {
            content,
            recency: recency_out,
            theta,
            learned,
            score,
        })
    }

    /// CTR-only popularity `w_c·c_t` (`c_t` when the CTR weight is ablated).
    pub fn ctr_only_popularity(&self, store: &ParamStore, ctr: f64) -> f64 {
        self.ctr_weight.map_or(ctr, |w| store.value(w).item() * ctr)
    }
}

/// Popularity bin of a clicked news for the user encoder. Bins are taken
/// from `c_t` itself rather than `w_c·c_t`, so they stay fixed while `w_c`
/// is trained.
pub fn history_popularity_bin(ctr: f64, bins: usize) -> usize {
    crate::data::quantize::quantize_popularity(ctr, bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::gradcheck::check_gradients;
    use crate::model::Ablations;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config(ablations: Ablations) -> ModelConfig {
        ModelConfig {
            heads: 2,
            head_dim: 2,
            recency_dim: 3,
            popularity_hidden: 4,
            gate_hidden: 3,
            max_recency_hours: 10,
            ablations,
            ..Default::default()
        }
    }

    fn predictor(ablations: Ablations) -> (ParamStore, PopularityPredictor) {
        let mut store = ParamStore::new();
        let p = PopularityPredictor::new(
            &mut store,
            &config(ablations),
            &mut ChaCha8Rng::seed_from_u64(8),
        )
        .unwrap();
        (store, p)
    }

    fn news() -> Tensor {
        Tensor::from_rows(&[
            vec![0.5, -0.2, 0.1, 0.9],
            vec![-0.3, 0.4, 0.8, -0.1],
            vec![0.0, 0.0, 0.0, 0.0],
        ])
        .unwrap()
    }

    fn run(store: &ParamStore, p: &PopularityPredictor, ctr: &[f64]) -> Vec<[f64; 5]> {
        let mut f = Forward::eval(store);
        let n = f.tape.constant(news()).unwrap();
        let out = p.forward(&mut f, Some(n), &[0, 3, 10], ctr).unwrap();
        let get = |v: Option<Var>, i: usize| v.map_or(f64::NAN, |v| f.tape.value(v).data()[i]);
        (0..3)
            .map(|i| {
                [
                    get(out.content, i),
                    get(out.recency, i),
                    get(out.theta, i),
                    get(out.learned, i),
                    get(Some(out.score), i),
                ]
            })
            .collect()
    }

    fn zero(store: &mut ParamStore, prefix: &str) {
        let ids: Vec<ParamId> = store
            .iter()
            .filter(|(_, p)| p.name.starts_with(prefix))
            .map(|(id, _)| id)
            .collect();
        for id in ids {
            store.get_mut(id).value.data_mut().fill(0.0);
        }
    }

    #[test]
    fn hand_arithmetic_example() {
        // θ = 0.5, p̂_c = 2, p̂_r = 0, w_c = w_p = 1, c_t = 0.1 → 1.1
        let (mut store, p) = predictor(Ablations::default());
        zero(&mut store, "popularity.gate");
        zero(&mut store, "popularity.recency.");
        zero(&mut store, "popularity.content.output.weight");
        let bias = p.content.as_ref().unwrap().output.bias.unwrap();
        store.get_mut(bias).value = Tensor::row(vec![2.0]);
        let rows = run(&store, &p, &[0.1, 0.1, 0.1]);
        for r in rows {
            assert_eq!(r[2], 0.5);
            assert_eq!((r[0], r[1]), (2.0, 0.0));
            assert!((r[4] - 1.1).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_content_net_gives_zero() {
        let (mut store, p) = predictor(Ablations::default());
        zero(&mut store, "popularity.content");
        zero(&mut store, "popularity.recency.");
        for r in run(&store, &p, &[0.2, 0.4, 0.6]) {
            assert_eq!((r[0], r[1]), (0.0, 0.0));
        }
    }

    #[test]
    fn hand_forward_content_network() {
        let (mut store, p) = predictor(Ablations::default());
        let net = p.content.clone().unwrap();
        let w1: Vec<Vec<f64>> = (0..4)
            .map(|i| {
                (0..4)
                    .map(|j| 0.1 * (i as f64) - 0.05 * (j as f64))
                    .collect()
            })
            .collect();
        store.get_mut(net.hidden.weight).value = Tensor::from_rows(&w1).unwrap();
        store.get_mut(net.hidden.bias.unwrap()).value = Tensor::row(vec![0.1, 0.0, -0.1, 0.2]);
        store.get_mut(net.output.weight).value = Tensor::column(vec![1.0, -2.0, 0.5, 0.3]);
        store.get_mut(net.output.bias.unwrap()).value = Tensor::row(vec![0.05]);
        let rows = run(&store, &p, &[0.0; 3]);
        let x = [0.5, -0.2, 0.1, 0.9];
        let b1 = [0.1, 0.0, -0.1, 0.2];
        let w2 = [1.0, -2.0, 0.5, 0.3];
        let mut expected = 0.05;
        for j in 0..4 {
            let h: f64 = (0..4).map(|i| x[i] * w1[i][j]).sum::<f64>() + b1[j];
            expected += h.tanh() * w2[j];
        }
        assert!((rows[0][0] - expected).abs() < 1e-12);
    }

    #[test]
    fn gate_is_strictly_inside_and_mix_is_convex() {
        let (mut store, p) = predictor(Ablations::default());
        for r in run(&store, &p, &[0.05, 0.3, 0.9]) {
            assert!(r[2] > 0.0 && r[2] < 1.0);
            assert!(r[3] >= r[0].min(r[1]) - 1e-15 && r[3] <= r[0].max(r[1]) + 1e-15);
        }
        // a large bias saturates the gate without reaching 1
        let b = p.gate.as_ref().unwrap().output.bias.unwrap();
        store.get_mut(b).value = Tensor::row(vec![30.0]);
        for r in run(&store, &p, &[0.1; 3]) {
            assert!(r[2] > 0.999_999 && r[2] < 1.0);
        }
    }

    #[test]
    fn single_layer_gate_is_sigmoid_of_affine() {
        let mut cfg = config(Ablations::default());
        cfg.single_layer_gate = true;
        let mut store = ParamStore::new();
        let p =
            PopularityPredictor::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let g = p.gate.as_ref().unwrap();
        assert!(g.hidden.is_none());
        let w = store.value(g.output.weight).clone();
        let b = store.value(g.output.bias.unwrap()).item();
        let table = store.value(p.recency_embedding.unwrap()).clone();
        let theta = run(&store, &p, &[0.1; 3])[1][2];
        let joint: Vec<f64> = news()
            .row_slice(1)
            .iter()
            .chain(table.row_slice(3))
            .copied()
            .collect();
        let logit: f64 = joint.iter().zip(w.data()).map(|(x, y)| x * y).sum::<f64>() + b;
        assert!((theta - 1.0 / (1.0 + (-logit).exp())).abs() < 1e-12);
    }

    #[test]
    fn ablations_follow_switch_semantics() {
        let (store, p) = predictor(Ablations {
            no_ctr: true,
            ..Default::default()
        });
        let a = run(&store, &p, &[0.0, 0.0, 0.0]);
        let b = run(&store, &p, &[0.5, 0.5, 0.5]);
        let c = run(&store, &p, &[1.0, 1.0, 1.0]);
        for i in 0..3 {
            assert_eq!(a[i][4], b[i][4]);
            assert_eq!(a[i][4], c[i][4]);
            assert_eq!(a[i][4], a[i][3]); // w_p = 1
        }

        let (store, p) = predictor(Ablations {
            no_content: true,
            ..Default::default()
        });
        assert!(p.gate.is_none() && p.content.is_none());
        for r in run(&store, &p, &[0.1; 3]) {
            assert_eq!(r[3], r[1]);
        }
        let (store, p) = predictor(Ablations {
            no_recency: true,
            ..Default::default()
        });
        assert!(p.recency_embedding.is_none());
        for r in run(&store, &p, &[0.1; 3]) {
            assert_eq!(r[3], r[0]);
        }
        let (store, p) = predictor(Ablations {
            no_recency: true,
            no_content: true,
            ..Default::default()
        });
        assert!(p.popularity_weight.is_none());
        let rows = run(&store, &p, &[0.1, 0.2, 0.3]);
        assert_eq!(
            rows.iter().map(|r| r[4]).collect::<Vec<_>>(),
            vec![0.1, 0.2, 0.3]
        );
    }

    #[test]
    fn zero_mixing_weights_zero_the_score() {
        let (mut store, p) = predictor(Ablations::default());
        store.get_mut(p.ctr_weight.unwrap()).value = Tensor::scalar(0.0);
        store.get_mut(p.popularity_weight.unwrap()).value = Tensor::scalar(0.0);
        for r in run(&store, &p, &[0.3, 0.6, 0.9]) {
            assert_eq!(r[4], 0.0);
        }
    }

    #[test]
    fn recency_lookup_is_deterministic_and_bounded() {
        let (store, p) = predictor(Ablations::default());
        let mut f = Forward::eval(&store);
        let n = f.tape.constant(news()).unwrap();
        let out = p.forward(&mut f, Some(n), &[4, 4, 4], &[0.1; 3]).unwrap();
        let r = f.tape.value(out.recency.unwrap()).data().to_vec();
        assert!(r[0] == r[1] && r[1] == r[2]);
        assert!(matches!(
            p.forward(&mut f, Some(n), &[0, 1, 11], &[0.1; 3]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn gradients_through_score_match_finite_differences() {
        let mut store = ParamStore::new();
        let cfg = config(Ablations::default());
        let p =
            PopularityPredictor::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        // treat the news embeddings as a parameter to check ∂s_p/∂n too
        let n_id = store.add("news_input", news()).unwrap();
        let report = check_gradients(&store, 1e-5, |tape: &mut Tape| {
            Forward::on_tape(tape, |f| {
                let n = f.tape.param(n_id);
                let out = p.forward(f, Some(n), &[1, 5, 9], &[0.05, 0.2, 0.7])?;
                let s = f.tape.tanh(out.score);
                Ok(f.tape.sum(s))
            })
        })
        .unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn ctr_only_popularity_examples() {
        let (mut store, p) = predictor(Ablations::default());
        assert_eq!(p.ctr_only_popularity(&store, 0.0), 0.0);
        store.get_mut(p.ctr_weight.unwrap()).value = Tensor::scalar(2.0);
        assert_eq!(p.ctr_only_popularity(&store, 0.1), 0.2);
        assert!(p.ctr_only_popularity(&store, 0.1) <= p.ctr_only_popularity(&store, 0.3));
        assert_eq!(history_popularity_bin(0.081, 200), 16);
    }
}
