//! Supervised and distillation losses.
//!
//! Graph builders (`*_node`) operate on `B x (A+O+L)` logit matrices and
//! reduce by the batch mean. The plain functions evaluate the same
//! quantities on single [`SlotLogits`] values.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{huber, Graph, NodeId, Tensor};
use crate::error::{invalid, Error, Result};
use crate::models::{SlotLabel, SlotLogits, SlotSpace};
use crate::scalar::Scalar;

/// Distance between student and teacher logits.
///
/// `SmoothL1` is the Huber penalty with transition point 1; it is reported
/// as "MAE" in configs and result tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DistanceKind {
    #[serde(rename = "mse")]
    Mse,
    #[serde(rename = "mae")]
    SmoothL1,
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceKind::Mse => "mse",
            DistanceKind::SmoothL1 => "mae",
        })
    }
}

impl FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(DistanceKind::Mse),
            "mae" | "smoothl1" | "smooth_l1" | "huber" => Ok(DistanceKind::SmoothL1),
            other => Err(Error::Config(format!("unknown distance {other:?}"))),
        }
    }
}

/// The weighted loss of one step, kept for logging.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ce: f64,
    pub l_kd: f64,
    pub alpha: f64,
    pub beta: f64,
    pub total: f64,
}

/// `alpha * l_ce + beta * l_kd`.
pub fn total_loss(l_ce: f64, l_kd: f64, alpha: f64, beta: f64) -> Result<LossBreakdown> {
    if !(alpha >= 0.0 && beta >= 0.0) {
        return Err(invalid(
            "total_loss",
            format!("weights must be non-negative, got alpha={alpha} beta={beta}"),
        ));
    }
    Ok(LossBreakdown {
        l_ce,
        l_kd,
        alpha,
        beta,
        total: alpha * l_ce + beta * l_kd,
    })
}

fn log_softmax<S: Scalar>(v: &[S]) -> Vec<S> {
    let max = v.iter().copied().fold(S::neg_infinity(), S::max);
    let lse = max + v.iter().map(|&x| (x - max).exp()).sum::<S>().ln();
    v.iter().map(|&x| x - lse).collect()
}

/// Sum over the three slots of the softmax cross-entropy.
pub fn cross_entropy<S: Scalar>(pred: &SlotLogits<S>, label: &SlotLabel) -> Result<S> {
    label.check(&pred.space())?;
    Ok(-(log_softmax(&pred.action)[label.action]
        + log_softmax(&pred.object)[label.object]
        + log_softmax(&pred.location)[label.location]))
}

pub fn distance<S: Scalar>(kind: DistanceKind, a: &[S], b: &[S]) -> Result<S> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "distance",
            left: [1, a.len()],
            right: [1, b.len()],
        });
    }
    let per: S = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let r = x - y;
            match kind {
                DistanceKind::Mse => r * r,
                DistanceKind::SmoothL1 => huber(r),
            }
        })
        .sum();
    Ok(per / S::of(a.len() as f64))
}

fn check_gamma(gamma: f64, has_teacher: bool, has_professor: bool) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(invalid("kd_loss", format!("gamma {gamma} outside [0, 1]")));
    }
    if gamma < 1.0 && !has_teacher {
        return Err(invalid("kd_loss", format!("gamma {gamma} needs teacher logits")));
    }
    if gamma > 0.0 && !has_professor {
        return Err(invalid("kd_loss", format!("gamma {gamma} needs professor logits")));
    }
    Ok(())
}

/// `(1-γ)·D(slu, teacher) + γ·D(slu, professor)` on concatenated logits.
/// The endpoints evaluate a single distance, so only the needed source is
/// required.
pub fn kd_loss<S: Scalar>(
    kind: DistanceKind,
    slu: &SlotLogits<S>,
    teacher: Option<&SlotLogits<S>>,
    professor: Option<&SlotLogits<S>>,
    gamma: f64,
) -> Result<S> {
    check_gamma(gamma, teacher.is_some(), professor.is_some())?;
    let s = slu.concat();
    let d = |t: &SlotLogits<S>| distance(kind, &s, &t.concat());
    if gamma == 0.0 {
        return d(teacher.unwrap());
    }
    if gamma == 1.0 {
        return d(professor.unwrap());
    }
    let g = S::of(gamma);
    Ok((S::one() - g) * d(teacher.unwrap())? + g * d(professor.unwrap())?)
}

/// Batch-mean cross-entropy for a `B x total` logit node.
pub fn cross_entropy_node<S: Scalar>(
    g: &mut Graph<S>,
    logits: NodeId,
    labels: &[SlotLabel],
    space: &SlotSpace,
) -> Result<NodeId> {
    let [b, k] = g.shape(logits);
    if b != labels.len() || k != space.total() {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            left: [b, k],
            right: [labels.len(), space.total()],
        });
    }
    for l in labels {
        l.check(space)?;
    }
    let mut terms = Vec::with_capacity(3);
    for (slot, (start, end)) in space.ranges().into_iter().enumerate() {
        let width = end - start;
        let part = g.slice_cols(logits, start, end)?;
        let logp = g.log_softmax(part);
        let mut onehot = vec![S::zero(); b * width];
        for (i, l) in labels.iter().enumerate() {
            onehot[i * width + l.as_array()[slot]] = S::one();
        }
        let onehot = g.constant(Tensor::new(b, width, onehot)?);
        let picked = g.mul(logp, onehot)?;
        terms.push(g.sum_all(picked));
    }
    let s = g.add(terms[0], terms[1])?;
    let s = g.add(s, terms[2])?;
    Ok(g.scale(s, -S::one() / S::of(b as f64)))
}

/// Mean over all entries of the elementwise penalty of `a - b`.
pub fn distance_node<S: Scalar>(
    g: &mut Graph<S>,
    kind: DistanceKind,
    a: NodeId,
    b: NodeId,
) -> Result<NodeId> {
    let r = g.sub(a, b)?;
    let pen = match kind {
        DistanceKind::Mse => g.mul(r, r)?,
        DistanceKind::SmoothL1 => g.smooth_l1(r),
    };
    Ok(g.mean_all(pen))
}

pub fn kd_node<S: Scalar>(
    g: &mut Graph<S>,
    kind: DistanceKind,
    slu: NodeId,
    teacher: Option<NodeId>,
    professor: Option<NodeId>,
    gamma: f64,
) -> Result<NodeId> {
    check_gamma(gamma, teacher.is_some(), professor.is_some())?;
    if gamma == 0.0 {
        return distance_node(g, kind, slu, teacher.unwrap());
    }
    if gamma == 1.0 {
        return distance_node(g, kind, slu, professor.unwrap());
    }
    let dt = distance_node(g, kind, slu, teacher.unwrap())?;
    let dp = distance_node(g, kind, slu, professor.unwrap())?;
    let dt = g.scale(dt, S::one() - S::of(gamma));
    let dp = g.scale(dp, S::of(gamma));
    g.add(dt, dp)
}

/// `alpha·ce + beta·kd` as a graph node.
pub fn total_node<S: Scalar>(
    g: &mut Graph<S>,
    ce: NodeId,
    kd: NodeId,
    alpha: f64,
    beta: f64,
) -> Result<NodeId> {
    total_loss(0.0, 0.0, alpha, beta)?;
    let a = g.scale(ce, S::of(alpha));
    let b = g.scale(kd, S::of(beta));
    g.add(a, b)
}
