use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{invalid, Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;

use super::{fan_in_bound, SlotLogits, SlotSpace};

/// Additive attention mask for `[PAD]` keys; `exp` of it underflows to 0.
const MASKED: f64 = -1e30;
const LN_EPS: f64 = 1e-5;

/// How the encoder output becomes slot logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextVariant {
    /// Affine head on the `[CLS]` position.
    Teacher,
    /// Affine head on every position, then max pooling over non-pad positions.
    Professor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextConfig {
    /// Surface vocabulary size; `[CLS]` and `[PAD]` are appended after it.
    pub vocab: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
    pub slots: SlotSpace,
    pub positional: bool,
}

impl TextConfig {
    pub fn new(vocab: usize, slots: SlotSpace) -> Self {
        Self {
            vocab,
            d_model: 32,
            layers: 2,
            heads: 2,
            ff: 64,
            slots,
            positional: true,
        }
    }

    pub fn cls_id(&self) -> usize {
        self.vocab
    }

    pub fn pad_id(&self) -> usize {
        self.vocab + 1
    }

    fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Affine {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    q: Affine,
    k: Affine,
    v: Affine,
    o: Affine,
    ff1: Affine,
    ff2: Affine,
}

/// Transformer-lite text classifier used for both teacher and professor.
#[derive(Debug, Clone)]
pub struct TextModel<S> {
    pub config: TextConfig,
    pub variant: TextVariant,
    pub seed: u64,
    pub params: ParamStore<S>,
    embed: ParamId,
    layers: Vec<Layer>,
    head: Affine,
}

/// Sinusoidal position code for position `pos`, dimension `i`.
pub fn positional_encoding(pos: usize, i: usize, d: usize) -> f64 {
    let pair = (i / 2) as f64;
    let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
    if i.is_multiple_of(2) {
        angle.sin()
    } else {
        angle.cos()
    }
}

struct Encoded {
    hidden: NodeId,
    /// Row offset and length of each sequence inside `hidden`.
    spans: Vec<(usize, usize)>,
    /// Non-pad rows of each sequence, absolute indices.
    valid: Vec<Vec<usize>>,
    first_context: Option<NodeId>,
    first_values: Option<NodeId>,
}

impl<S: Scalar> TextModel<S> {
    pub fn new(config: TextConfig, variant: TextVariant, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let d = config.d_model;
        let embed = params.add("embed", Tensor::normal(config.vocab + 2, d, 0.02, &mut rng));
        let mut affine = |params: &mut ParamStore<S>, name: String, fan_in: usize, out: usize| {
            let bound = fan_in_bound(fan_in);
            Affine {
                w: params.add(format!("{name}.w"), Tensor::uniform(fan_in, out, bound, &mut rng)),
                b: params.add(format!("{name}.b"), Tensor::uniform(1, out, bound, &mut rng)),
            }
        };
        let layers = (0..config.layers)
            .map(|l| Layer {
                q: affine(&mut params, format!("layer{l}.q"), d, d),
                k: affine(&mut params, format!("layer{l}.k"), d, d),
                v: affine(&mut params, format!("layer{l}.v"), d, d),
                o: affine(&mut params, format!("layer{l}.o"), d, d),
                ff1: affine(&mut params, format!("layer{l}.ff1"), d, config.ff),
                ff2: affine(&mut params, format!("layer{l}.ff2"), config.ff, d),
            })
            .collect();
        let head = affine(&mut params, "head".into(), d, config.slots.total());
        Ok(Self {
            config,
            variant,
            seed,
            params,
            embed,
            layers,
            head,
        })
    }

    /// Parameter names for the query and key maps of `layer`, for probing.
    pub fn query_key_param_names(layer: usize) -> [String; 4] {
        [
            format!("layer{layer}.q.w"),
            format!("layer{layer}.q.b"),
            format!("layer{layer}.k.w"),
            format!("layer{layer}.k.b"),
        ]
    }

    pub fn params_mut_by_name(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        let id = self.params.ids().zip(self.params.iter()).find(|(_, (n, _))| *n == name)?.0;
        Some(self.params.get_mut(id))
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        let cfg = &self.config;
        if tokens.is_empty() {
            return Err(invalid("text_forward", "empty token sequence"));
        }
        for &t in tokens {
            if t == cfg.cls_id() || t > cfg.pad_id() {
                return Err(Error::OutOfVocab {
                    id: t,
                    vocab: cfg.vocab,
                });
            }
        }
        Ok(())
    }

    fn affine(&self, g: &mut Graph<S>, bound: &Bound, x: NodeId, a: Affine) -> Result<NodeId> {
        let y = g.matmul(x, bound.node(a.w))?;
        g.add_row(y, bound.node(a.b))
    }

    fn encode(&self, g: &mut Graph<S>, bound: &Bound, batch: &[&[usize]]) -> Result<Encoded> {
        let cfg = &self.config;
        let d = cfg.d_model;
        let dh = d / cfg.heads;
        let mut ids = Vec::new();
        let mut spans = Vec::with_capacity(batch.len());
        let mut valid = Vec::with_capacity(batch.len());
        let mut pos = Vec::new();
        for tokens in batch {
            self.check_tokens(tokens)?;
            let start = ids.len();
            ids.push(cfg.cls_id());
            ids.extend_from_slice(tokens);
            let len = tokens.len() + 1;
            spans.push((start, len));
            valid.push(
                (start..start + len)
                    .filter(|&r| ids[r] != cfg.pad_id())
                    .collect::<Vec<_>>(),
            );
            for p in 0..len {
                for i in 0..d {
                    pos.push(if cfg.positional {
                        S::of(positional_encoding(p, i, d))
                    } else {
                        S::zero()
                    });
                }
            }
        }
        let n = ids.len();
        let key_masks: Vec<Option<Tensor<S>>> = spans
            .iter()
            .map(|&(start, len)| {
                let row: Vec<S> = (start..start + len)
                    .map(|r| {
                        if ids[r] == cfg.pad_id() {
                            S::of(MASKED)
                        } else {
                            S::zero()
                        }
                    })
                    .collect();
                row.iter().any(|&x| x != S::zero()).then(|| Tensor::row(row))
            })
            .collect();

        let emb = g.gather_rows(bound.node(self.embed), ids)?;
        let pos = g.constant(Tensor::new(n, d, pos)?);
        let mut x = g.add(emb, pos)?;
        let scale = S::one() / S::of(dh as f64).sqrt();
        let mut first_context = None;
        let mut first_values = None;

        for (li, layer) in self.layers.iter().enumerate() {
            let q = self.affine(g, bound, x, layer.q)?;
            let k = self.affine(g, bound, x, layer.k)?;
            let v = self.affine(g, bound, x, layer.v)?;
            let mut seq_out = Vec::with_capacity(spans.len());
            for (&(start, len), mask) in spans.iter().zip(&key_masks) {
                let qs = g.slice_rows(q, start, start + len)?;
                let ks = g.slice_rows(k, start, start + len)?;
                let vs = g.slice_rows(v, start, start + len)?;
                let mut heads = Vec::with_capacity(cfg.heads);
                for h in 0..cfg.heads {
                    let (c0, c1) = (h * dh, (h + 1) * dh);
                    let qh = g.slice_cols(qs, c0, c1)?;
                    let kh = g.slice_cols(ks, c0, c1)?;
                    let vh = g.slice_cols(vs, c0, c1)?;
                    let scores = g.matmul_nt(qh, kh)?;
                    let mut scores = g.scale(scores, scale);
                    if let Some(mask) = mask {
                        let m = g.constant(mask.clone());
                        scores = g.add_row(scores, m)?;
                    }
                    let attn = g.softmax(scores);
                    heads.push(g.matmul(attn, vh)?);
                }
                seq_out.push(if heads.len() == 1 {
                    heads[0]
                } else {
                    g.concat_cols(heads)?
                });
            }
            let ctx = if seq_out.len() == 1 {
                seq_out[0]
            } else {
                g.concat_rows(seq_out)?
            };
            if li == 0 {
                first_context = Some(ctx);
                first_values = Some(v);
            }
            let attn_out = self.affine(g, bound, ctx, layer.o)?;
            let res = g.add(x, attn_out)?;
            let x1 = g.layer_norm(res, S::of(LN_EPS));
            let f = self.affine(g, bound, x1, layer.ff1)?;
            let f = g.tanh(f);
            let f = self.affine(g, bound, f, layer.ff2)?;
            let res = g.add(x1, f)?;
            x = g.layer_norm(res, S::of(LN_EPS));
        }
        Ok(Encoded {
            hidden: x,
            spans,
            valid,
            first_context,
            first_values,
        })
    }

    /// Builds logits for a batch of token sequences as a `B x total` node.
    pub fn forward_batch(
        &self,
        g: &mut Graph<S>,
        bound: &Bound,
        batch: &[&[usize]],
    ) -> Result<NodeId> {
        if batch.is_empty() {
            return Err(invalid("text_forward", "empty batch"));
        }
        let enc = self.encode(g, bound, batch)?;
        match self.variant {
            TextVariant::Teacher => {
                let cls: Vec<usize> = enc.spans.iter().map(|&(s, _)| s).collect();
                let rows = g.gather_rows(enc.hidden, cls)?;
                self.affine(g, bound, rows, self.head)
            }
            TextVariant::Professor => {
                let per_pos = self.affine(g, bound, enc.hidden, self.head)?;
                let pooled = enc
                    .valid
                    .into_iter()
                    .map(|rows| g.max_pool(per_pos, rows))
                    .collect::<Result<Vec<_>>>()?;
                if pooled.len() == 1 {
                    Ok(pooled[0])
                } else {
                    g.concat_rows(pooled)
                }
            }
        }
    }

    pub fn forward(&self, tokens: &[usize]) -> Result<SlotLogits<S>> {
        Ok(self.predict(&[tokens])?.remove(0))
    }

    pub fn predict(&self, batch: &[&[usize]]) -> Result<Vec<SlotLogits<S>>> {
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        let out = self.forward_batch(&mut g, &bound, batch)?;
        SlotLogits::from_rows(g.value(out), &self.config.slots)
    }

    /// Head output at every position (including `[CLS]` at row 0) of one
    /// sequence, before any pooling.
    pub fn position_logits(&self, tokens: &[usize]) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        let enc = self.encode(&mut g, &bound, &[tokens])?;
        let out = self.affine(&mut g, &bound, enc.hidden, self.head)?;
        Ok(g.value(out).clone())
    }

    /// First-layer attention context (heads concatenated, before the output
    /// map) and the value projection it mixes, both `(len+1) x d`.
    pub fn first_layer_attention(&self, tokens: &[usize]) -> Result<(Tensor<S>, Tensor<S>)> {
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        let enc = self.encode(&mut g, &bound, &[tokens])?;
        let (ctx, vals) = enc
            .first_context
            .zip(enc.first_values)
            .ok_or_else(|| invalid("first_layer_attention", "model has no layers"))?;
        Ok((g.value(ctx).clone(), g.value(vals).clone()))
    }
}
