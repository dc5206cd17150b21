use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::error::{invalid, Error, Result};
use crate::models::{SlotLogits, SlotSpace, TextModel};
use crate::scalar::Scalar;

use super::metrics::text_logits_for;

/// Teacher outputs keyed by example id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogitTable {
    pub rows: BTreeMap<u64, SlotLogits<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LogitRecord {
    id: u64,
    logits: SlotLogits<f64>,
}

impl LogitTable {
    /// Runs a text model over the clean scripts of `data`.
    pub fn from_model<S: Scalar>(model: &TextModel<S>, data: &[Example]) -> Result<Self> {
        let seqs: Vec<Vec<usize>> = data.iter().map(|e| e.tokens.clone()).collect();
        let logits = text_logits_for(model, &seqs)?;
        Ok(Self {
            rows: data
                .iter()
                .zip(logits)
                .map(|(e, l)| (e.id, l.cast()))
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, id: u64, source_kind: &'static str) -> Result<&SlotLogits<f64>> {
        self.rows
            .get(&id)
            .ok_or(Error::MissingLogits { source_kind, id })
    }

    /// Fails on the first example without a row or with a different slot space.
    pub fn check_covers(&self, data: &[Example], space: &SlotSpace, source_kind: &'static str) -> Result<()> {
        for e in data {
            let row = self.get(e.id, source_kind)?;
            if row.space() != *space {
                return Err(invalid(
                    "logit_table",
                    format!("{source_kind} logits for id {} have the wrong slot sizes", e.id),
                ));
            }
        }
        Ok(())
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (&id, logits) in &self.rows {
            serde_json::to_writer(&mut w, &LogitRecord { id, logits: logits.clone() })?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let mut rows = BTreeMap::new();
        for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LogitRecord = serde_json::from_str(&line)?;
            if !rec.logits.is_finite() {
                return Err(invalid("read_logits", format!("non-finite logits on line {}", n + 1)));
            }
            if rows.insert(rec.id, rec.logits).is_some() {
                return Err(invalid("read_logits", format!("duplicate id {}", rec.id)));
            }
        }
        Ok(Self { rows })
    }
}

/// Writes the logits of `model` on `data` to a JSON-lines file.
pub fn export_logits<S: Scalar>(model: &TextModel<S>, data: &[Example], path: impl AsRef<Path>) -> Result<LogitTable> {
    let table = LogitTable::from_model(model, data)?;
    table.write_jsonl(path)?;
    Ok(table)
}
