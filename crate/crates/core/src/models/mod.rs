//! Slot-filling models: a recurrent student over word-posterior frames and
//! two text encoders that differ only in how they pool to slot logits.

mod checkpoint;
mod student;
mod text;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointKind, ParamEntry};
pub use student::{StudentConfig, StudentModel};
pub use text::{TextConfig, TextModel, TextVariant};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Class counts per slot. `none` counts as a class for object and location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpace {
    pub action: usize,
    pub object: usize,
    pub location: usize,
}

impl SlotSpace {
    pub fn total(&self) -> usize {
        self.action + self.object + self.location
    }

    /// Column ranges of each slot inside the concatenated logit vector.
    pub fn ranges(&self) -> [(usize, usize); 3] {
        let a = self.action;
        let o = a + self.object;
        [(0, a), (a, o), (o, o + self.location)]
    }
}

/// Gold value for each slot, as class indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotLabel {
    pub action: usize,
    pub object: usize,
    pub location: usize,
}

impl SlotLabel {
    pub fn as_array(&self) -> [usize; 3] {
        [self.action, self.object, self.location]
    }

    pub fn check(&self, space: &SlotSpace) -> Result<()> {
        let checks = [
            ("action", self.action, space.action),
            ("object", self.object, space.object),
            ("location", self.location, space.location),
        ];
        for (slot, index, classes) in checks {
            if index >= classes {
                return Err(Error::LabelOutOfRange {
                    slot,
                    index,
                    classes,
                });
            }
        }
        Ok(())
    }
}

/// Per-slot logit vectors for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotLogits<S> {
    pub action: Vec<S>,
    pub object: Vec<S>,
    pub location: Vec<S>,
}

impl<S: Scalar> SlotLogits<S> {
    pub fn zeros(space: &SlotSpace) -> Self {
        Self {
            action: vec![S::zero(); space.action],
            object: vec![S::zero(); space.object],
            location: vec![S::zero(); space.location],
        }
    }

    pub fn space(&self) -> SlotSpace {
        SlotSpace {
            action: self.action.len(),
            object: self.object.len(),
            location: self.location.len(),
        }
    }

    /// `action ‖ object ‖ location`.
    pub fn concat(&self) -> Vec<S> {
        let mut v = Vec::with_capacity(self.space().total());
        v.extend_from_slice(&self.action);
        v.extend_from_slice(&self.object);
        v.extend_from_slice(&self.location);
        v
    }

    pub fn split(v: &[S], space: &SlotSpace) -> Result<Self> {
        if v.len() != space.total() {
            return Err(Error::InvalidArgument {
                op: "split_logits",
                msg: format!("expected {} values, got {}", space.total(), v.len()),
            });
        }
        let [a, o, l] = space.ranges();
        Ok(Self {
            action: v[a.0..a.1].to_vec(),
            object: v[o.0..o.1].to_vec(),
            location: v[l.0..l.1].to_vec(),
        })
    }

    pub fn argmax(&self) -> SlotLabel {
        SlotLabel {
            action: argmax(&self.action),
            object: argmax(&self.object),
            location: argmax(&self.location),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.concat().iter().all(|x| x.is_finite())
    }

    pub fn cast<T: Scalar>(&self) -> SlotLogits<T> {
        let c = |v: &[S]| v.iter().map(|x| T::of(x.f64())).collect();
        SlotLogits {
            action: c(&self.action),
            object: c(&self.object),
            location: c(&self.location),
        }
    }

    /// Splits every row of a `B x total` matrix.
    pub fn from_rows(t: &Tensor<S>, space: &SlotSpace) -> Result<Vec<Self>> {
        (0..t.rows())
            .map(|r| Self::split(t.row_slice(r), space))
            .collect()
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax<S: Scalar>(v: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Affine-map initialisation bound `1/sqrt(fan_in)`.
pub(crate) fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}
