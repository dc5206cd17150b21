use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{invalid, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;

use super::{fan_in_bound, SlotLogits, SlotSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentConfig {
    /// Width of one posterior frame (the surface vocabulary size).
    pub input_dim: usize,
    pub hidden: usize,
    pub slots: SlotSpace,
}

impl StudentConfig {
    pub fn new(input_dim: usize, slots: SlotSpace) -> Self {
        Self {
            input_dim,
            hidden: 64,
            slots,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Gate {
    w_in: ParamId,
    w_hid: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Ids {
    reset: Gate,
    update: Gate,
    cand: Gate,
    /// Bias added to the hidden projection inside the reset product.
    cand_hid_bias: ParamId,
    heads: [(ParamId, ParamId); 3],
}

/// GRU over word-posterior frames; three affine slot heads read the final
/// hidden state.
#[derive(Debug, Clone)]
pub struct StudentModel<S> {
    pub config: StudentConfig,
    pub seed: u64,
    pub params: ParamStore<S>,
    ids: Ids,
}

impl<S: Scalar> StudentModel<S> {
    pub fn new(config: StudentConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, h) = (config.input_dim, config.hidden);
        let mut params = ParamStore::new();
        let bi = fan_in_bound(v);
        let bh = fan_in_bound(h);
        let mut gate = |name: &str, params: &mut ParamStore<S>| Gate {
            w_in: params.add(format!("gru.{name}.w_in"), Tensor::uniform(v, h, bi, &mut rng)),
            w_hid: params.add(format!("gru.{name}.w_hid"), Tensor::uniform(h, h, bh, &mut rng)),
            bias: params.add(format!("gru.{name}.b"), Tensor::uniform(1, h, bi, &mut rng)),
        };
        let reset = gate("reset", &mut params);
        let update = gate("update", &mut params);
        let cand = gate("cand", &mut params);
        let cand_hid_bias = params.add("gru.cand.b_hid", Tensor::uniform(1, h, bh, &mut rng));
        let mut head = |name: &str, n: usize| {
            (
                params.add(format!("head.{name}.w"), Tensor::uniform(h, n, bh, &mut rng)),
                params.add(format!("head.{name}.b"), Tensor::uniform(1, n, bh, &mut rng)),
            )
        };
        let heads = [
            head("action", config.slots.action),
            head("object", config.slots.object),
            head("location", config.slots.location),
        ];
        Self {
            config,
            seed,
            params,
            ids: Ids {
                reset,
                update,
                cand,
                cand_hid_bias,
                heads,
            },
        }
    }

    /// Every parameter set to zero; outputs all-zero logits.
    pub fn zeros(config: StudentConfig) -> Self {
        let mut m = Self::new(config, 0);
        for id in m.params.ids().collect::<Vec<_>>() {
            let t = m.params.get_mut(id);
            *t = Tensor::zeros(t.rows(), t.cols());
        }
        m
    }

    /// Builds logits for a batch of frame sequences as a `B x total` node.
    pub fn forward_batch(
        &self,
        g: &mut Graph<S>,
        bound: &Bound,
        batch: &[&[Vec<f64>]],
    ) -> Result<NodeId> {
        let (v, h) = (self.config.input_dim, self.config.hidden);
        if batch.is_empty() {
            return Err(invalid("student_forward", "empty batch"));
        }
        for frames in batch {
            if frames.is_empty() {
                return Err(invalid("student_forward", "empty frame sequence"));
            }
            if let Some(f) = frames.iter().find(|f| f.len() != v) {
                return Err(invalid(
                    "student_forward",
                    format!("frame dimension {} but model expects {v}", f.len()),
                ));
            }
        }
        let b = batch.len();
        let steps = batch.iter().map(|f| f.len()).max().unwrap_or(0);
        let p = |id: ParamId| bound.node(id);
        let ids = self.ids;

        let mut hidden = g.constant(Tensor::zeros(b, h));
        for t in 0..steps {
            let mut x = vec![S::zero(); b * v];
            let mut mask = vec![false; b * h];
            for (i, frames) in batch.iter().enumerate() {
                if let Some(frame) = frames.get(t) {
                    for (dst, &src) in x[i * v..(i + 1) * v].iter_mut().zip(frame) {
                        *dst = S::of(src);
                    }
                    mask[i * h..(i + 1) * h].fill(true);
                }
            }
            let x = g.constant(Tensor::new(b, v, x)?);

            let gate_pre = |g: &mut Graph<S>, gate: Gate, hid: NodeId| -> Result<NodeId> {
                let xi = g.matmul(x, p(gate.w_in))?;
                let hh = g.matmul(hid, p(gate.w_hid))?;
                let s = g.add(xi, hh)?;
                g.add_row(s, p(gate.bias))
            };
            let r = gate_pre(g, ids.reset, hidden)?;
            let r = g.sigmoid(r);
            let z = gate_pre(g, ids.update, hidden)?;
            let z = g.sigmoid(z);

            let xn = g.matmul(x, p(ids.cand.w_in))?;
            let xn = g.add_row(xn, p(ids.cand.bias))?;
            let hn = g.matmul(hidden, p(ids.cand.w_hid))?;
            let hn = g.add_row(hn, p(ids.cand_hid_bias))?;
            let rh = g.mul(r, hn)?;
            let n = g.add(xn, rh)?;
            let n = g.tanh(n);

            // h' = n + z ⊙ (h − n)
            let diff = g.sub(hidden, n)?;
            let zd = g.mul(z, diff)?;
            let next = g.add(n, zd)?;
            hidden = g.select(mask, next, hidden)?;
        }

        let mut outs = Vec::with_capacity(3);
        for (w, bias) in ids.heads {
            let y = g.matmul(hidden, p(w))?;
            outs.push(g.add_row(y, p(bias))?);
        }
        g.concat_cols(outs)
    }

    /// Slot logits for a single utterance.
    pub fn forward(&self, frames: &[Vec<f64>]) -> Result<SlotLogits<S>> {
        Ok(self.predict(&[frames])?.remove(0))
    }

    /// Inference over a batch with frozen parameters.
    pub fn predict(&self, batch: &[&[Vec<f64>]]) -> Result<Vec<SlotLogits<S>>> {
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        let out = self.forward_batch(&mut g, &bound, batch)?;
        SlotLogits::from_rows(g.value(out), &self.config.slots)
    }
}
