use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::error::{invalid, Result};
use crate::models::{SlotLabel, SlotLogits, StudentModel, TextModel};
use crate::scalar::Scalar;

const EVAL_BATCH: usize = 64;

/// Error rates over a dataset. `full` counts an example wrong when any
/// slot is wrong.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorRates {
    pub full: f64,
    pub action: f64,
    pub object: f64,
    pub location: f64,
    pub n: usize,
}

impl ErrorRates {
    pub fn from_predictions(preds: &[SlotLabel], gold: &[SlotLabel]) -> Result<Self> {
        if preds.len() != gold.len() || preds.is_empty() {
            return Err(invalid(
                "error_rates",
                format!("{} predictions for {} labels", preds.len(), gold.len()),
            ));
        }
        let mut wrong = [0usize; 4];
        for (p, g) in preds.iter().zip(gold) {
            let miss = [p.action != g.action, p.object != g.object, p.location != g.location];
            for (k, &m) in miss.iter().enumerate() {
                wrong[k + 1] += usize::from(m);
            }
            wrong[0] += usize::from(miss.iter().any(|&m| m));
        }
        let n = preds.len() as f64;
        Ok(Self {
            full: wrong[0] as f64 / n,
            action: wrong[1] as f64 / n,
            object: wrong[2] as f64 / n,
            location: wrong[3] as f64 / n,
            n: preds.len(),
        })
    }

    pub fn from_logits<S: Scalar>(logits: &[SlotLogits<S>], gold: &[SlotLabel]) -> Result<Self> {
        let preds: Vec<SlotLabel> = logits.iter().map(SlotLogits::argmax).collect();
        Self::from_predictions(&preds, gold)
    }
}

/// Fraction of rows whose argmax misses any slot.
pub fn full_intent_error<S: Scalar>(logits: &[SlotLogits<S>], gold: &[SlotLabel]) -> f64 {
    logits
        .iter()
        .zip(gold)
        .filter(|(l, g)| l.argmax() != **g)
        .count() as f64
        / gold.len().max(1) as f64
}

pub fn student_logits<S: Scalar>(model: &StudentModel<S>, data: &[Example]) -> Result<Vec<SlotLogits<S>>> {
    if data.iter().any(|e| e.frames.is_empty()) {
        return Err(invalid("evaluate", "dataset has examples without frames"));
    }
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks(EVAL_BATCH) {
        let batch: Vec<&[Vec<f64>]> = chunk.iter().map(|e| e.frames.as_slice()).collect();
        out.extend(model.predict(&batch)?);
    }
    Ok(out)
}

pub fn text_logits_for<S: Scalar>(model: &TextModel<S>, seqs: &[Vec<usize>]) -> Result<Vec<SlotLogits<S>>> {
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(EVAL_BATCH) {
        let batch: Vec<&[usize]> = chunk.iter().map(Vec::as_slice).collect();
        out.extend(model.predict(&batch)?);
    }
    Ok(out)
}

/// Student error rates on rendered frames.
pub fn evaluate<S: Scalar>(model: &StudentModel<S>, data: &[Example]) -> Result<ErrorRates> {
    let gold: Vec<SlotLabel> = data.iter().map(|e| e.label).collect();
    ErrorRates::from_logits(&student_logits(model, data)?, &gold)
}

/// Text-model error rates on clean scripts.
pub fn evaluate_text<S: Scalar>(model: &TextModel<S>, data: &[Example]) -> Result<ErrorRates> {
    let seqs: Vec<Vec<usize>> = data.iter().map(|e| e.tokens.clone()).collect();
    let gold: Vec<SlotLabel> = data.iter().map(|e| e.label).collect();
    ErrorRates::from_logits(&text_logits_for(model, &seqs)?, &gold)
}

/// Training accuracy below this at the last epoch counts as a failed run.
pub const CONVERGENCE_ACCURACY: f64 = 0.5;

/// True when the run failed: the final train accuracy is below
/// [`CONVERGENCE_ACCURACY`] or any recorded loss or error is non-finite.
pub fn detect_nonconvergence(train_err_trace: &[f64], losses: &[f64]) -> Result<bool> {
    let Some(&last) = train_err_trace.last() else {
        return Err(invalid("detect_nonconvergence", "empty trace"));
    };
    let non_finite = train_err_trace.iter().chain(losses).any(|x| !x.is_finite());
    Ok(non_finite || 1.0 - last < CONVERGENCE_ACCURACY)
}
