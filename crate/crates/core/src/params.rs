//! Named parameter storage and the adaptive-moment optimizer.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered set of named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<S> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
}

/// Parameters placed on a graph for one forward pass.
#[derive(Debug, Clone)]
pub struct Bound {
    ids: Vec<NodeId>,
}

impl Bound {
    #[inline]
    pub fn node(&self, p: ParamId) -> NodeId {
        self.ids[p.0]
    }
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, p: ParamId) -> &Tensor<S> {
        &self.tensors[p.0]
    }

    pub fn get_mut(&mut self, p: ParamId) -> &mut Tensor<S> {
        &mut self.tensors[p.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<S>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn checksum(&self) -> u64 {
        self.tensors
            .iter()
            .fold(0u64, |h, t| h.rotate_left(7) ^ t.checksum())
    }

    /// Places every tensor on `g` as a trainable leaf.
    pub fn bind(&self, g: &mut Graph<S>) -> Bound {
        Bound {
            ids: self.tensors.iter().map(|t| g.param(t.clone())).collect(),
        }
    }

    /// Places every tensor on `g` as a constant (inference only).
    pub fn bind_frozen(&self, g: &mut Graph<S>) -> Bound {
        Bound {
            ids: self.tensors.iter().map(|t| g.constant(t.clone())).collect(),
        }
    }

    /// Replaces tensors by name from `other`, checking shapes.
    pub fn load(&mut self, entries: Vec<(String, Tensor<S>)>) -> Result<()> {
        if entries.len() != self.len() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                self.len(),
                entries.len()
            )));
        }
        for (name, t) in entries {
            let i = self
                .names
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
            if self.tensors[i].shape() != t.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load",
                    left: self.tensors[i].shape(),
                    right: t.shape(),
                });
            }
            self.tensors[i] = t;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<S> {
    cfg: AdamConfig,
    step: i32,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: AdamConfig, params: &ParamStore<S>) -> Self {
        let zeros = || {
            params
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect()
        };
        Self {
            cfg,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update using the adjoints of `bound` in `grads`. Parameters with
    /// no gradient in this pass are left untouched.
    pub fn step(&mut self, params: &mut ParamStore<S>, bound: &Bound, grads: &Gradients<S>) {
        self.step += 1;
        let b1 = S::of(self.cfg.beta1);
        let b2 = S::of(self.cfg.beta2);
        let lr = S::of(self.cfg.lr);
        let eps = S::of(self.cfg.eps);
        let c1 = S::one() - b1.powi(self.step);
        let c2 = S::one() - b2.powi(self.step);
        for (i, node) in bound.ids.iter().enumerate() {
            let Some(g) = grads.get(*node) else { continue };
            let p = params.tensors[i].data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for k in 0..p.len() {
                let gk = g.data()[k];
                m[k] = b1 * m[k] + (S::one() - b1) * gk;
                v[k] = b2 * v[k] + (S::one() - b2) * gk * gk;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p[k] = p[k] - lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}
