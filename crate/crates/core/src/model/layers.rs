//! Building blocks shared by the encoders and scorers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::optim::dropout_mask;
use crate::tensor::Tensor;

/// A tape plus the per-pass settings every layer needs: dropout (training
/// only) and an optional record of attention-weight nodes.
pub struct Forward<'a> {
    pub tape: Tape<'a>,
    dropout: Option<(f64, ChaCha8Rng)>,
    trace: Option<Vec<Var>>,
}

impl<'a> Forward<'a> {
    /// Inference pass: dropout disabled.
    pub fn eval(params: &'a ParamStore) -> Self {
        Forward {
            tape: Tape::new(params),
            dropout: None,
            trace: None,
        }
    }

    pub fn train(params: &'a ParamStore, dropout: f64, rng: ChaCha8Rng) -> Self {
        Forward {
            tape: Tape::new(params),
            dropout: (dropout > 0.0).then_some((dropout, rng)),
            trace: None,
        }
    }

    /// Runs `body` in evaluation mode on an existing tape, e.g. the one a
    /// gradient check hands out.
    pub fn on_tape<T>(
        tape: &mut Tape<'a>,
        body: impl FnOnce(&mut Forward<'a>) -> Result<T>,
    ) -> Result<T> {
        let params = tape.params();
        let mut f = Forward::eval(params);
        std::mem::swap(&mut f.tape, tape);
        let out = body(&mut f);
        std::mem::swap(&mut f.tape, tape);
        out
    }

    /// Records every attention-weight matrix produced during the pass.
    pub fn traced(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    /// Attention-weight nodes recorded so far; each row sums to one.
    pub fn attention_weights(&self) -> &[Var] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub(crate) fn record_attention(&mut self, weights: Var) {
        if let Some(t) = &mut self.trace {
            t.push(weights);
        }
    }

    pub fn is_training(&self) -> bool {
        self.dropout.is_some()
    }

    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        let Some((rate, rng)) = &mut self.dropout else {
            return Ok(x);
        };
        let (r, c) = self.tape.shape(x);
        let mask = dropout_mask(&[r, c], *rate, rng, true)?;
        self.tape.apply_mask(x, mask)
    }
}

fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    Tensor::glorot(rows, cols, rng)
}

/// `x · W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), glorot(in_dim, out_dim, rng))?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[1, out_dim]))?)
        } else {
            None
        };
        Ok(Dense { weight, bias })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(b);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Multi-head scaled dot-product attention with bias-free projections and
/// no positional information.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub heads: usize,
    pub head_dim: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        query_in: usize,
        context_in: usize,
        heads: usize,
        head_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let out = heads * head_dim;
        Ok(MultiHeadAttention {
            query: store.add(format!("{name}.query"), glorot(query_in, out, rng))?,
            key: store.add(format!("{name}.key"), glorot(context_in, out, rng))?,
            value: store.add(format!("{name}.value"), glorot(context_in, out, rng))?,
            heads,
            head_dim,
        })
    }

    pub fn project_queries(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(self.query);
        tape.matmul(x, w)
    }

    pub fn project_keys(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(self.key);
        tape.matmul(x, w)
    }

    pub fn project_values(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(self.value);
        tape.matmul(x, w)
    }

    /// Attention over already projected `q: [Lq, H·d]`, `k, v: [Lc, H·d]`.
    pub fn attend(&self, f: &mut Forward<'_>, q: Var, k: Var, v: Var) -> Result<Var> {
        let (lq, _) = f.tape.shape(q);
        let (lc, _) = f.tape.shape(k);
        if lq == 0 || lc == 0 {
            return Err(Error::Contract("attention over an empty sequence".into()));
        }
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut outputs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                let start = h * self.head_dim;
                (
                    f.tape.slice_cols(q, start, self.head_dim)?,
                    f.tape.slice_cols(k, start, self.head_dim)?,
                    f.tape.slice_cols(v, start, self.head_dim)?,
                )
            };
            let scores = f.tape.matmul_nt(qh, kh)?;
            let scores = f.tape.scale(scores, scale);
            let weights = f.tape.softmax_rows(scores);
            f.record_attention(weights);
            outputs.push(f.tape.matmul(weights, vh)?);
        }
        if outputs.len() == 1 {
            Ok(outputs[0])
        } else {
            f.tape.concat(&outputs, 1)
        }
    }

    /// Queries from `query_seq`, keys and values from `context_seq`.
    pub fn forward(&self, f: &mut Forward<'_>, query_seq: Var, context_seq: Var) -> Result<Var> {
        let q = self.project_queries(&mut f.tape, query_seq)?;
        let k = self.project_keys(&mut f.tape, context_seq)?;
        let v = self.project_values(&mut f.tape, context_seq)?;
        self.attend(f, q, k, v)
    }

    pub fn self_attention(&self, f: &mut Forward<'_>, seq: Var) -> Result<Var> {
        self.forward(f, seq, seq)
    }
}

/// Additive attention: `α_i ∝ exp(qᵀ tanh(W x_i))`.
#[derive(Clone, Debug)]
pub struct AttentionPool {
    pub projection: ParamId,
    pub query: ParamId,
}

impl AttentionPool {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        query_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(AttentionPool {
            projection: store.add(format!("{name}.projection"), glorot(in_dim, query_dim, rng))?,
            query: store.add(format!("{name}.query"), glorot(query_dim, 1, rng))?,
        })
    }

    /// Attention weights over the rows of `keys`, as a `[1, L]` row.
    pub fn weights(&self, f: &mut Forward<'_>, keys: Var) -> Result<Var> {
        if f.tape.shape(keys).0 == 0 {
            return Err(Error::Contract(
                "attention pooling over an empty sequence".into(),
            ));
        }
        let w = f.tape.param(self.projection);
        let q = f.tape.param(self.query);
        let hidden = f.tape.matmul(keys, w)?;
        let hidden = f.tape.tanh(hidden);
        let scores = f.tape.matmul(hidden, q)?;
        let scores = f.tape.transpose(scores);
        let alpha = f.tape.softmax_rows(scores);
        f.record_attention(alpha);
        Ok(alpha)
    }

    /// `Σ α_i x_i` as a `[1, d]` row.
    pub fn forward(&self, f: &mut Forward<'_>, seq: Var) -> Result<Var> {
        let alpha = self.weights(f, seq)?;
        f.tape.matmul(alpha, seq)
    }
}

/// Sigmoid gate: two-layer (`tanh` hidden) or single affine layer.
#[derive(Clone, Debug)]
pub struct Gate {
    pub hidden: Option<Dense>,
    pub output: Dense,
}

impl Gate {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden_dim: usize,
        single_layer: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if single_layer {
            return Ok(Gate {
                hidden: None,
                output: Dense::new(store, &format!("{name}.output"), in_dim, 1, true, rng)?,
            });
        }
        Ok(Gate {
            hidden: Some(Dense::new(
                store,
                &format!("{name}.hidden"),
                in_dim,
                hidden_dim,
                true,
                rng,
            )?),
            output: Dense::new(store, &format!("{name}.output"), hidden_dim, 1, true, rng)?,
        })
    }

    /// `[m, in] → [m, 1]` values in `(0, 1)`.
    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let x = match &self.hidden {
            Some(h) => {
                let y = h.forward(tape, x)?;
                tape.tanh(y)
            }
            None => x,
        };
        let logit = self.output.forward(tape, x)?;
        Ok(tape.sigmoid(logit))
    }
}

/// Two-layer regressor with a `tanh` hidden layer and a linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub hidden: Dense,
    pub output: Dense,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Mlp {
            hidden: Dense::new(
                store,
                &format!("{name}.hidden"),
                in_dim,
                hidden_dim,
                true,
                rng,
            )?,
            output: Dense::new(store, &format!("{name}.output"), hidden_dim, 1, true, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, x)?;
        let h = tape.tanh(h);
        self.output.forward(tape, h)
    }
}
