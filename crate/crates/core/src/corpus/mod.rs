//! Synthetic smart-home command corpus with a word-posterior noise channel.
//!
//! Audio is not modelled. Each clean script is rendered through a
//! [`NoiseChannel`] into a sequence of posterior frames, which is the only
//! input the student sees; teachers read the clean tokens.

mod channel;
mod dataset;
mod grammar;

use serde::{Deserialize, Serialize};

pub use channel::{ChannelSpec, NoiseChannel};
pub use dataset::{
    corrupt_tokens, generate, read_jsonl, render_all, render_frames, split, subsample,
    write_jsonl, Example, ExampleRecord, LabelRecord,
};
pub use grammar::{Grammar, GrammarConfig, Template, NONE};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub seed: u64,
    #[serde(default)]
    pub channel: ChannelSpec,
    #[serde(default)]
    pub grammar: Option<GrammarConfig>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_train: 5000,
            n_valid: 500,
            n_test: 1000,
            seed: 2020,
            channel: ChannelSpec::default(),
            grammar: None,
        }
    }
}

/// A generated, rendered and split corpus.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub grammar: Grammar,
    pub channel: NoiseChannel,
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub test: Vec<Example>,
}

impl Corpus {
    pub fn synthesize(cfg: &CorpusConfig) -> Result<Self> {
        let grammar = match &cfg.grammar {
            Some(g) => Grammar::build(g.clone())?,
            None => Grammar::default_grammar(),
        };
        let channel = NoiseChannel::from_spec(&grammar.vocab, &cfg.channel)?;
        let n = cfg.n_train + cfg.n_valid + cfg.n_test;
        let data = generate(&grammar, n, cfg.seed)?;
        let data = render_all(&data, &channel, cfg.seed)?;
        let nf = n as f64;
        let (train, valid, test) = split(
            &data,
            [
                cfg.n_train as f64 / nf,
                cfg.n_valid as f64 / nf,
                cfg.n_test as f64 / nf,
            ],
            cfg.seed,
        )?;
        Ok(Self {
            grammar,
            channel,
            train,
            valid,
            test,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthesize_respects_counts() {
        let cfg = CorpusConfig {
            n_train: 300,
            n_valid: 30,
            n_test: 70,
            ..CorpusConfig::default()
        };
        let c = Corpus::synthesize(&cfg).unwrap();
        assert_eq!((c.train.len(), c.valid.len(), c.test.len()), (300, 30, 70));
        assert!(c.train.iter().all(|e| !e.frames.is_empty()));
    }
}
