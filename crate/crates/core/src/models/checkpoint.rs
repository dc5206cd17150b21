use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;

use super::{StudentConfig, StudentModel, TextConfig, TextModel, TextVariant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CheckpointKind {
    Student { config: StudentConfig },
    Text { variant: TextVariant, config: TextConfig },
}

/// JSON checkpoint: hyperparameters, the initialisation seed and every
/// parameter as a decimal array. Values round-trip bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: CheckpointKind,
    pub seed: u64,
    pub params: BTreeMap<String, ParamEntry>,
}

fn dump<S: Scalar>(params: &ParamStore<S>) -> BTreeMap<String, ParamEntry> {
    params
        .iter()
        .map(|(name, t)| {
            (
                name.to_string(),
                ParamEntry {
                    shape: t.shape(),
                    data: t.data().iter().map(|x| x.f64()).collect(),
                },
            )
        })
        .collect()
}

fn entries<S: Scalar>(map: &BTreeMap<String, ParamEntry>) -> Result<Vec<(String, Tensor<S>)>> {
    map.iter()
        .map(|(name, e)| Ok((name.clone(), Tensor::from_f64(e.shape[0], e.shape[1], &e.data)?)))
        .collect()
}

impl Checkpoint {
    pub fn from_student<S: Scalar>(m: &StudentModel<S>) -> Self {
        Self {
            model: CheckpointKind::Student { config: m.config },
            seed: m.seed,
            params: dump(&m.params),
        }
    }

    pub fn from_text<S: Scalar>(m: &TextModel<S>) -> Self {
        Self {
            model: CheckpointKind::Text {
                variant: m.variant,
                config: m.config,
            },
            seed: m.seed,
            params: dump(&m.params),
        }
    }

    pub fn to_student<S: Scalar>(&self) -> Result<StudentModel<S>> {
        let CheckpointKind::Student { config } = &self.model else {
            return Err(Error::Config("checkpoint does not hold a student".into()));
        };
        let mut m = StudentModel::new(*config, self.seed);
        m.params.load(entries(&self.params)?)?;
        Ok(m)
    }

    pub fn to_text<S: Scalar>(&self) -> Result<TextModel<S>> {
        let CheckpointKind::Text { variant, config } = &self.model else {
            return Err(Error::Config("checkpoint does not hold a text model".into()));
        };
        let mut m = TextModel::new(*config, *variant, self.seed)?;
        m.params.load(entries(&self.params)?)?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}
