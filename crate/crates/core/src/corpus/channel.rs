use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stochastic stand-in for a frozen acoustic front end: turns a token into
/// one or more word-posterior frames.
///
/// For every frame an emitted word is drawn from the true token's confusion
/// row, and the frame itself is a Dirichlet draw centred on the emitted
/// word's row. With `dirichlet_concentration = None` the frame is the row
/// itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseChannel {
    pub confusion: Vec<Vec<f64>>,
    /// Inclusive range of frames rendered per token.
    pub frames_per_token: [usize; 2],
    pub dirichlet_concentration: Option<f64>,
}

/// Parameters of the default confusion structure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub self_prob: f64,
    pub confusables: usize,
    pub confusable_prob: f64,
    pub frames_per_token: [usize; 2],
    pub concentration: Option<f64>,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self {
            self_prob: 0.8,
            confusables: 2,
            confusable_prob: 0.08,
            frames_per_token: [1, 3],
            concentration: Some(50.0),
        }
    }
}

fn edit_distance(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.chars().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

impl NoiseChannel {
    /// Confusion matrix where each word keeps `self_prob`, its nearest
    /// spellings (edit distance, ties by index) get `confusable_prob` each,
    /// and the remainder is spread evenly over the other words.
    pub fn from_spec(vocab: &[String], spec: &ChannelSpec) -> Result<Self> {
        let v = vocab.len();
        let alts = spec.confusables.min(v.saturating_sub(1));
        let rest = v.saturating_sub(1 + alts);
        let leftover = 1.0 - spec.self_prob - alts as f64 * spec.confusable_prob;
        if leftover < -1e-12 || (rest == 0 && leftover > 1e-12) {
            return Err(Error::Config(format!(
                "channel mass does not sum to 1 for vocabulary of {v}"
            )));
        }
        let confusion = (0..v)
            .map(|i| {
                let mut others: Vec<usize> = (0..v).filter(|&j| j != i).collect();
                others.sort_by_key(|&j| (edit_distance(&vocab[i], &vocab[j]), j));
                let mut row = vec![0.0; v];
                row[i] = spec.self_prob;
                for &j in &others[..alts] {
                    row[j] = spec.confusable_prob;
                }
                for &j in &others[alts..] {
                    row[j] = leftover.max(0.0) / rest as f64;
                }
                row
            })
            .collect();
        let ch = Self {
            confusion,
            frames_per_token: spec.frames_per_token,
            dirichlet_concentration: spec.concentration,
        };
        ch.validate()?;
        Ok(ch)
    }

    /// Noise-free channel: one one-hot frame per token.
    pub fn identity(vocab_size: usize) -> Self {
        let confusion = (0..vocab_size)
            .map(|i| {
                let mut row = vec![0.0; vocab_size];
                row[i] = 1.0;
                row
            })
            .collect();
        Self {
            confusion,
            frames_per_token: [1, 1],
            dirichlet_concentration: None,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.confusion.len()
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.confusion.len();
        if v == 0 {
            return Err(Error::Config("empty confusion matrix".into()));
        }
        for (i, row) in self.confusion.iter().enumerate() {
            if row.len() != v {
                return Err(Error::Config(format!("confusion row {i} has {} entries", row.len())));
            }
            if row.iter().any(|&p| p.is_nan() || p < 0.0) {
                return Err(Error::Config(format!("confusion row {i} has a negative entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("confusion row {i} sums to {s}")));
            }
        }
        let [lo, hi] = self.frames_per_token;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("bad frames_per_token {lo}..={hi}")));
        }
        if let Some(c) = self.dirichlet_concentration {
            if c.is_nan() || c <= 0.0 || !c.is_finite() {
                return Err(Error::Config(format!("dirichlet concentration must be positive, got {c}")));
            }
        }
        Ok(())
    }

    /// Self-probability averaged over words.
    pub fn mean_self_prob(&self) -> f64 {
        let v = self.vocab_size();
        (0..v).map(|i| self.confusion[i][i]).sum::<f64>() / v as f64
    }

    /// Draws the frames for one token.
    pub fn emit<R: Rng + ?Sized>(&self, token: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let [lo, hi] = self.frames_per_token;
        let k = rng.gen_range(lo..=hi);
        let row = WeightedIndex::new(&self.confusion[token]).expect("validated row");
        (0..k)
            .map(|_| {
                let emitted = row.sample(rng);
                self.frame(emitted, rng)
            })
            .collect()
    }

    fn frame<R: Rng + ?Sized>(&self, emitted: usize, rng: &mut R) -> Vec<f64> {
        let base = &self.confusion[emitted];
        let Some(c) = self.dirichlet_concentration else {
            return base.clone();
        };
        let mut draw: Vec<f64> = base
            .iter()
            .map(|&p| {
                if p > 0.0 {
                    Gamma::new(c * p, 1.0).expect("positive shape").sample(rng)
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = draw.iter().sum();
        if total > 0.0 && total.is_finite() {
            draw.iter_mut().for_each(|x| *x /= total);
            draw
        } else {
            base.clone()
        }
    }

    /// Substitute for `token` drawn from its row with the diagonal removed;
    /// `None` when the row has no off-diagonal mass.
    pub fn confuse<R: Rng + ?Sized>(&self, token: usize, rng: &mut R) -> Option<usize> {
        let weights: Vec<f64> = self.confusion[token]
            .iter()
            .enumerate()
            .map(|(j, &p)| if j == token { 0.0 } else { p })
            .collect();
        WeightedIndex::new(&weights).ok().map(|d| d.sample(rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Grammar;
    use crate::models::argmax;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_rows_are_stochastic_and_diagonal_dominant() {
        let g = Grammar::default_grammar();
        let ch = NoiseChannel::from_spec(&g.vocab, &ChannelSpec::default()).unwrap();
        ch.validate().unwrap();
        for (i, row) in ch.confusion.iter().enumerate() {
            assert_eq!(row[i], 0.8);
            assert_eq!(row.iter().filter(|&&p| p == 0.08).count(), 2);
        }
    }

    #[test]
    fn identity_channel_gives_one_hot_frames() {
        let ch = NoiseChannel::identity(5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for t in 0..5 {
            let frames = ch.emit(t, &mut rng);
            assert_eq!(frames.len(), 1);
            let mut expected = vec![0.0; 5];
            expected[t] = 1.0;
            assert_eq!(frames[0], expected);
        }
    }

    #[test]
    fn frame_error_tracks_off_diagonal_mass() {
        // Monte-Carlo estimate of argmax error over 10^4 frames.
        let g = Grammar::default_grammar();
        let ch = NoiseChannel::from_spec(&g.vocab, &ChannelSpec::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (mut frames, mut wrong) = (0usize, 0usize);
        while frames < 10_000 {
            let t = rng.gen_range(0..g.vocab_size());
            for f in ch.emit(t, &mut rng) {
                let s: f64 = f.iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
                wrong += usize::from(argmax(&f) != t);
                frames += 1;
            }
        }
        let rate = wrong as f64 / frames as f64;
        assert!((rate - 0.2).abs() <= 0.02, "frame error {rate}");
    }

    #[test]
    fn rejects_nonpositive_concentration() {
        let mut ch = NoiseChannel::identity(3);
        ch.dirichlet_concentration = Some(0.0);
        assert!(ch.validate().is_err());
        ch.dirichlet_concentration = Some(-1.0);
        assert!(ch.validate().is_err());
    }

    #[test]
    fn edit_distance_basics() {
        assert_eq!(edit_distance("on", "off"), 2);
        assert_eq!(edit_distance("light", "lights"), 1);
        assert_eq!(edit_distance("", "abc"), 3);
    }
}
