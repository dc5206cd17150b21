//! Distillation weight schedules: `beta_t` on the KD term, `alpha_t = 1 - beta_t`
//! on cross-entropy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Schedule {
    /// Constant weight.
    Fixed { beta: f64 },
    /// The current batch's full-intent error rate.
    Err,
    /// `exp(1 - t)`.
    Exp,
    /// Triangle peaking at 0.1 at epoch `T/2`.
    Tri { epochs: usize },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::Fixed { beta } if !(0.0..=1.0).contains(&beta) => {
                Err(Error::Config(format!("fixed beta {beta} outside [0, 1]")))
            }
            Schedule::Tri { epochs: 0 } => Err(Error::Config("tri needs T >= 1".into())),
            _ => Ok(()),
        }
    }

    /// KD weight at 1-indexed epoch `t`. `batch_err` is only read by `Err`
    /// but must always lie in `[0, 1]`.
    pub fn beta(&self, t: usize, batch_err: f64) -> Result<f64> {
        self.validate()?;
        if t < 1 {
            return Err(invalid("beta", "epoch index starts at 1"));
        }
        if !(0.0..=1.0).contains(&batch_err) {
            return Err(invalid("beta", format!("batch error {batch_err} outside [0, 1]")));
        }
        let raw = match *self {
            Schedule::Fixed { beta } => beta,
            Schedule::Err => batch_err,
            Schedule::Exp => (1.0 - t as f64).exp(),
            Schedule::Tri { epochs } => {
                let mu = epochs as f64 / 2.0;
                0.1 * (1.0 - (t as f64 - mu).abs() / (0.5 * mu)).max(0.0)
            }
        };
        Ok(raw.clamp(0.0, 1.0))
    }

    /// True when the weight is constant within an epoch.
    pub fn is_epoch_level(&self) -> bool {
        !matches!(self, Schedule::Err)
    }
}

/// Cross-entropy weight for a given KD weight.
pub fn alpha(beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(invalid("alpha", format!("beta {beta} outside [0, 1]")));
    }
    Ok(1.0 - beta)
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Fixed { beta } => write!(f, "fixed:{beta}"),
            Schedule::Err => f.write_str("err"),
            Schedule::Exp => f.write_str("exp"),
            Schedule::Tri { epochs } => write!(f, "tri:{epochs}"),
        }
    }
}

impl Schedule {
    /// Parses `fixed:<beta>`, `err`, `exp`, `tri` or `tri:<T>`. A bare `tri`
    /// takes `T` from `epochs`.
    pub fn parse(s: &str, epochs: usize) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let sched = match lower.split_once(':') {
            Some(("fixed", b)) => Schedule::Fixed {
                beta: b
                    .parse()
                    .map_err(|_| Error::Config(format!("bad beta in {s:?}")))?,
            },
            Some(("tri", t)) => Schedule::Tri {
                epochs: t
                    .parse()
                    .map_err(|_| Error::Config(format!("bad T in {s:?}")))?,
            },
            None if lower == "err" => Schedule::Err,
            None if lower == "exp" => Schedule::Exp,
            None if lower == "tri" => Schedule::Tri { epochs },
            _ => return Err(Error::Config(format!("unknown schedule {s:?}"))),
        };
        sched.validate()?;
        Ok(sched)
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Schedule::parse(s, 100)
    }
}
