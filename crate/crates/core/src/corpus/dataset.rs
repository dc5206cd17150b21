use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::SlotLabel;

use super::{Grammar, NoiseChannel};

const RENDER_SALT: u64 = 0x5eed_f4a3_e5c0_0001;
const CORRUPT_SALT: u64 = 0x5eed_c044_0b7e_0002;

/// One utterance: the clean script, its posterior frames and the intent.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: u64,
    pub tokens: Vec<usize>,
    /// Empty until rendered.
    pub frames: Vec<Vec<f64>>,
    pub label: SlotLabel,
}

/// Independent RNG stream for `(seed, id)`.
pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Samples `n` examples: intent uniformly, then phrasing uniformly.
pub fn generate(grammar: &Grammar, n: usize, seed: u64) -> Result<Vec<Example>> {
    if n == 0 {
        return Err(invalid("generate", "n must be at least 1"));
    }
    Ok((0..n as u64)
        .map(|id| {
            let mut rng = stream(seed, id);
            let k = rng.gen_range(0..grammar.intents.len());
            let phrasings = &grammar.phrasings[k];
            let p = rng.gen_range(0..phrasings.len());
            Example {
                id,
                tokens: phrasings[p].clone(),
                frames: Vec::new(),
                label: grammar.intents[k],
            }
        })
        .collect())
}

/// Renders posterior frames for every token, in order.
pub fn render_frames(example: &Example, channel: &NoiseChannel, seed: u64) -> Result<Example> {
    channel.validate()?;
    if example.tokens.is_empty() {
        return Err(invalid("render_frames", "example has no tokens"));
    }
    if let Some(&t) = example.tokens.iter().find(|&&t| t >= channel.vocab_size()) {
        return Err(Error::OutOfVocab {
            id: t,
            vocab: channel.vocab_size(),
        });
    }
    let mut rng = stream(seed ^ RENDER_SALT, example.id);
    let frames = example
        .tokens
        .iter()
        .flat_map(|&t| channel.emit(t, &mut rng))
        .collect();
    Ok(Example {
        frames,
        ..example.clone()
    })
}

pub fn render_all(examples: &[Example], channel: &NoiseChannel, seed: u64) -> Result<Vec<Example>> {
    examples
        .iter()
        .map(|e| render_frames(e, channel, seed))
        .collect()
}

/// Shuffled partition into `(train, valid, test)`. The first two sizes are
/// rounded, the test set takes the remainder.
pub fn split(
    data: &[Example],
    fractions: [f64; 3],
    seed: u64,
) -> Result<(Vec<Example>, Vec<Example>, Vec<Example>)> {
    if fractions.iter().any(|&f| f.is_nan() || f < 0.0) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid("split", format!("fractions {fractions:?} must be >= 0 and sum to 1")));
    }
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_valid = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let take = |idx: &[usize]| idx.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    Ok((
        take(&order[..n_train]),
        take(&order[n_train..n_train + n_valid]),
        take(&order[n_train + n_valid..]),
    ))
}

/// `ceil(fraction * n)` examples without replacement. One example of every
/// intent is taken first (in random intent order) while the budget allows;
/// the rest is drawn uniformly from what remains. Output keeps input order.
pub fn subsample(train: &[Example], fraction: f64, seed: u64) -> Result<Vec<Example>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(invalid("subsample", format!("fraction {fraction} outside (0, 1]")));
    }
    let n = train.len();
    let budget = ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let budget = budget.min(n);
    if budget == n {
        return Ok(train.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: BTreeMap<SlotLabel, Vec<usize>> = BTreeMap::new();
    for (i, e) in train.iter().enumerate() {
        groups.entry(e.label).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    for g in &mut groups {
        g.shuffle(&mut rng);
    }
    groups.shuffle(&mut rng);

    let mut chosen = Vec::with_capacity(budget);
    let mut rest = Vec::new();
    for g in &groups {
        if chosen.len() < budget {
            chosen.push(g[0]);
            rest.extend_from_slice(&g[1..]);
        } else {
            rest.extend_from_slice(g);
        }
    }
    rest.shuffle(&mut rng);
    chosen.extend(rest.into_iter().take(budget - chosen.len()));
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| train[i].clone()).collect())
}

/// Simulated recogniser output: each token is independently replaced with
/// probability `rate` by a confusion-weighted different word.
pub fn corrupt_tokens(
    example: &Example,
    channel: &NoiseChannel,
    rate: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(invalid("corrupt_tokens", format!("rate {rate} outside [0, 1]")));
    }
    let mut rng = stream(seed ^ CORRUPT_SALT, example.id);
    Ok(example
        .tokens
        .iter()
        .map(|&t| {
            if rng.gen::<f64>() < rate {
                channel.confuse(t, &mut rng).unwrap_or(t)
            } else {
                t
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub action: String,
    pub object: String,
    pub location: String,
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: u64,
    pub tokens: Vec<String>,
    pub label: LabelRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<Vec<f64>>>,
}

impl ExampleRecord {
    pub fn from_example(e: &Example, grammar: &Grammar) -> Self {
        let (a, o, l) = grammar.label_names(&e.label);
        Self {
            id: e.id,
            tokens: grammar.decode(&e.tokens).into_iter().map(String::from).collect(),
            label: LabelRecord {
                action: a.into(),
                object: o.into(),
                location: l.into(),
            },
            frames: (!e.frames.is_empty()).then(|| e.frames.clone()),
        }
    }

    pub fn to_example(&self, grammar: &Grammar) -> Result<Example> {
        let words: Vec<&str> = self.tokens.iter().map(String::as_str).collect();
        Ok(Example {
            id: self.id,
            tokens: grammar.encode(&words)?,
            frames: self.frames.clone().unwrap_or_default(),
            label: grammar.label_from_names(
                &self.label.action,
                &self.label.object,
                &self.label.location,
            )?,
        })
    }
}

pub fn write_jsonl(path: impl AsRef<Path>, examples: &[Example], grammar: &Grammar) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for e in examples {
        serde_json::to_writer(&mut w, &ExampleRecord::from_example(e, grammar))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: impl AsRef<Path>, grammar: &Grammar) -> Result<Vec<Example>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExampleRecord = serde_json::from_str(&line)?;
        out.push(rec.to_example(grammar)?);
    }
    Ok(out)
}
