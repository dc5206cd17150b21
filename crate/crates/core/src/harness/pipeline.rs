use crate::corpus::{corrupt_tokens, Example, NoiseChannel};
use crate::error::Result;
use crate::models::{SlotLabel, TextModel};
use crate::scalar::Scalar;

use super::metrics::{text_logits_for, ErrorRates};

/// Error of a text model fed simulated recogniser output: every token is
/// replaced by a confusable word with probability `rate`.
pub fn pipeline_baseline<S: Scalar>(
    teacher: &TextModel<S>,
    data: &[Example],
    channel: &NoiseChannel,
    rate: f64,
    seed: u64,
) -> Result<ErrorRates> {
    let seqs = data
        .iter()
        .map(|e| corrupt_tokens(e, channel, rate, seed))
        .collect::<Result<Vec<_>>>()?;
    let gold: Vec<SlotLabel> = data.iter().map(|e| e.label).collect();
    ErrorRates::from_logits(&text_logits_for(teacher, &seqs)?, &gold)
}
