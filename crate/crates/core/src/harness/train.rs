use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::corpus::{subsample, Example};
use crate::error::{invalid, Error, Result};
use crate::losses::{cross_entropy_node, kd_node, total_node, DistanceKind};
use crate::models::{SlotLabel, SlotLogits, SlotSpace, StudentConfig, StudentModel, TextConfig, TextModel, TextVariant};
use crate::params::{Adam, AdamConfig};
use crate::scalar::Scalar;
use crate::schedule::{alpha, Schedule};

use super::logits::LogitTable;
use super::metrics::{detect_nonconvergence, evaluate, evaluate_text, ErrorRates};

const SHUFFLE_SALT: u64 = 0x5eed_5487_f1e0_0003;

/// Which teacher signal the KD term distils from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaMode {
    /// No KD term at all: plain cross-entropy training.
    None,
    /// gamma = 0.
    Teacher,
    /// gamma = 1.
    Professor,
    /// gamma = batch full-intent error.
    Hybrid,
}

impl GammaMode {
    pub fn needs_teacher(self) -> bool {
        matches!(self, GammaMode::Teacher | GammaMode::Hybrid)
    }

    pub fn needs_professor(self) -> bool {
        matches!(self, GammaMode::Professor | GammaMode::Hybrid)
    }
}

impl fmt::Display for GammaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GammaMode::None => "none",
            GammaMode::Teacher => "teacher",
            GammaMode::Professor => "professor",
            GammaMode::Hybrid => "hybrid",
        })
    }
}

impl FromStr for GammaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "baseline" => Ok(GammaMode::None),
            "teacher" => Ok(GammaMode::Teacher),
            "professor" => Ok(GammaMode::Professor),
            "hybrid" => Ok(GammaMode::Hybrid),
            other => Err(Error::Config(format!("unknown gamma mode {other:?}"))),
        }
    }
}

fn default_batch() -> usize {
    32
}

fn default_fraction() -> f64 {
    1.0
}

fn default_hidden() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub distance: DistanceKind,
    pub gamma_mode: GammaMode,
    pub schedule: Schedule,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub seed: u64,
    /// Share of the training set used; the subset is drawn with `seed`.
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            distance: DistanceKind::SmoothL1,
            gamma_mode: GammaMode::Hybrid,
            schedule: Schedule::Err,
            epochs: 50,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
            fraction: 1.0,
            hidden: 64,
        }
    }
}

impl DistillConfig {
    /// CE-only run with otherwise default settings.
    pub fn baseline(epochs: usize, seed: u64) -> Self {
        Self {
            gamma_mode: GammaMode::None,
            schedule: Schedule::Fixed { beta: 0.0 },
            epochs,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden must be positive".into()));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config(format!("fraction {} outside (0, 1]", self.fraction)));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.adam.lr)));
        }
        Ok(())
    }
}

/// Teacher logits available to a distillation run.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sources<'a> {
    pub teacher: Option<&'a LogitTable>,
    pub professor: Option<&'a LogitTable>,
}

/// Settings for fine-tuning a text model on clean scripts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: Option<TextShape>,
}

/// Text model sizes; the vocabulary and slots come from the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextShape {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
    pub positional: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
            model: None,
        }
    }
}

impl TrainConfig {
    pub fn text_config(&self, vocab: usize, slots: SlotSpace) -> TextConfig {
        let mut c = TextConfig::new(vocab, slots);
        if let Some(s) = self.model {
            c.d_model = s.d_model;
            c.layers = s.layers;
            c.heads = s.heads;
            c.ff = s.ff;
            c.positional = s.positional;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_err: f64,
    pub l_ce: f64,
    pub l_kd: f64,
    pub alpha: f64,
    pub beta: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    pub size: usize,
    /// Full-intent error of the pre-update predictions.
    pub err: f64,
    pub gamma: f64,
    pub l_ce: f64,
    pub l_kd: f64,
    pub alpha: f64,
    pub beta: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub test: ErrorRates,
    /// Error on the training data after the last epoch, one clean pass.
    pub train: ErrorRates,
    pub epochs: Vec<EpochRecord>,
    pub batches: Vec<BatchRecord>,
    pub converged: bool,
    pub wall_s: f64,
    pub config: serde_json::Value,
}

impl RunResult {
    /// Mean pre-update training error of each completed epoch.
    pub fn train_err_trace(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_err).collect()
    }

    pub fn test_err(&self) -> f64 {
        self.test.full
    }
}

fn batch_err<S: Scalar>(logits: &Tensor<S>, labels: &[SlotLabel], space: &SlotSpace) -> Result<f64> {
    let rows = SlotLogits::from_rows(logits, space)?;
    Ok(rows
        .iter()
        .zip(labels)
        .filter(|(r, l)| r.argmax() != **l)
        .count() as f64
        / labels.len() as f64)
}

fn epoch_record(epoch: usize, batches: &[BatchRecord]) -> EpochRecord {
    let n: usize = batches.iter().map(|b| b.size).sum();
    let wmean = |f: fn(&BatchRecord) -> f64| {
        batches.iter().map(|b| f(b) * b.size as f64).sum::<f64>() / n as f64
    };
    let mean = |f: fn(&BatchRecord) -> f64| batches.iter().map(f).sum::<f64>() / batches.len() as f64;
    EpochRecord {
        epoch,
        train_err: wmean(|b| b.err),
        l_ce: mean(|b| b.l_ce),
        l_kd: mean(|b| b.l_kd),
        alpha: mean(|b| b.alpha),
        beta: mean(|b| b.beta),
        total: mean(|b| b.total),
    }
}

fn shuffled_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

fn finish(
    epochs: Vec<EpochRecord>,
    batches: Vec<BatchRecord>,
    non_finite: bool,
    train: ErrorRates,
    test: ErrorRates,
    start: Instant,
    config: serde_json::Value,
) -> Result<RunResult> {
    let converged = if epochs.is_empty() {
        !non_finite && train.full <= 0.5
    } else {
        let losses: Vec<f64> = batches.iter().map(|b| b.total).collect();
        !non_finite && !detect_nonconvergence(&epochs.iter().map(|e| e.train_err).collect::<Vec<_>>(), &losses)?
    };
    Ok(RunResult {
        test,
        train,
        epochs,
        batches,
        converged,
        wall_s: start.elapsed().as_secs_f64(),
        config,
    })
}

fn non_empty(data: &[Example]) -> Result<()> {
    if data.is_empty() {
        return Err(invalid("train", "empty dataset"));
    }
    Ok(())
}

/// Fine-tunes a text model with slot-wise cross-entropy on clean scripts.
/// A non-finite loss aborts with [`Error::NonFiniteLoss`].
pub fn train_teacher<S: Scalar>(
    variant: TextVariant,
    vocab: usize,
    slots: SlotSpace,
    train: &[Example],
    test: &[Example],
    cfg: &TrainConfig,
) -> Result<(TextModel<S>, RunResult)> {
    non_empty(train)?;
    non_empty(test)?;
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let start = Instant::now();
    let mut model = TextModel::<S>::new(cfg.text_config(vocab, slots), variant, cfg.seed)?;
    let mut adam = Adam::new(cfg.adam, &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut log = Vec::new();
    for epoch in 1..=cfg.epochs {
        let mut records = Vec::new();
        for (bi, idx) in shuffled_batches(train.len(), cfg.batch_size, &mut rng).into_iter().enumerate() {
            let seqs: Vec<&[usize]> = idx.iter().map(|&i| train[i].tokens.as_slice()).collect();
            let labels: Vec<SlotLabel> = idx.iter().map(|&i| train[i].label).collect();
            let mut g = Graph::new();
            let bound = model.params.bind(&mut g);
            let logits = model.forward_batch(&mut g, &bound, &seqs)?;
            let err = batch_err(g.value(logits), &labels, &slots)?;
            let ce = cross_entropy_node(&mut g, logits, &labels, &slots)?;
            let loss = g.value(ce).item();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            let grads = g.backward(ce)?;
            adam.step(&mut model.params, &bound, &grads);
            records.push(BatchRecord {
                epoch,
                batch: bi,
                size: idx.len(),
                err,
                gamma: 0.0,
                l_ce: loss.f64(),
                l_kd: 0.0,
                alpha: 1.0,
                beta: 0.0,
                total: loss.f64(),
            });
        }
        epochs.push(epoch_record(epoch, &records));
        log.extend(records);
    }
    let train_rates = evaluate_text(&model, train)?;
    let test_rates = evaluate_text(&model, test)?;
    let config = serde_json::json!({ "variant": variant, "train": cfg });
    let result = finish(epochs, log, false, train_rates, test_rates, start, config)?;
    Ok((model, result))
}

/// Trains a student on posterior frames with the weighted CE + KD loss.
///
/// Teacher rows enter the graph as constants. A non-finite loss stops the
/// run early and marks it non-converged.
pub fn distill<S: Scalar>(
    cfg: &DistillConfig,
    slots: SlotSpace,
    train: &[Example],
    test: &[Example],
    sources: Sources<'_>,
) -> Result<(StudentModel<S>, RunResult)> {
    cfg.validate()?;
    non_empty(train)?;
    non_empty(test)?;
    let input_dim = train[0].frames.first().map(Vec::len).ok_or_else(|| {
        invalid("distill", "training examples have no frames")
    })?;
    let teacher = if cfg.gamma_mode.needs_teacher() {
        Some(sources.teacher.ok_or_else(|| Error::Config(format!("{} mode needs teacher logits", cfg.gamma_mode)))?)
    } else {
        None
    };
    let professor = if cfg.gamma_mode.needs_professor() {
        Some(sources.professor.ok_or_else(|| Error::Config(format!("{} mode needs professor logits", cfg.gamma_mode)))?)
    } else {
        None
    };

    let start = Instant::now();
    let data = subsample(train, cfg.fraction, cfg.seed)?;
    if let Some(t) = teacher {
        t.check_covers(&data, &slots, "teacher")?;
    }
    if let Some(p) = professor {
        p.check_covers(&data, &slots, "professor")?;
    }

    let mut model = StudentModel::<S>::new(
        StudentConfig {
            input_dim,
            hidden: cfg.hidden,
            slots,
        },
        cfg.seed,
    );
    let mut adam = Adam::new(cfg.adam, &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut log = Vec::new();
    let mut non_finite = false;

    'outer: for epoch in 1..=cfg.epochs {
        let mut records = Vec::new();
        for (bi, idx) in shuffled_batches(data.len(), cfg.batch_size, &mut rng).into_iter().enumerate() {
            let frames: Vec<&[Vec<f64>]> = idx.iter().map(|&i| data[i].frames.as_slice()).collect();
            let labels: Vec<SlotLabel> = idx.iter().map(|&i| data[i].label).collect();
            let mut g = Graph::new();
            let bound = model.params.bind(&mut g);
            let logits = model.forward_batch(&mut g, &bound, &frames)?;
            let err = batch_err(g.value(logits), &labels, &slots)?;
            let ce = cross_entropy_node(&mut g, logits, &labels, &slots)?;

            let (loss, l_kd, a, b, gamma) = if cfg.gamma_mode == GammaMode::None {
                (ce, 0.0, 1.0, 0.0, 0.0)
            } else {
                let beta = cfg.schedule.beta(epoch, err)?;
                let a = alpha(beta)?;
                let gamma = match cfg.gamma_mode {
                    GammaMode::Professor => 1.0,
                    GammaMode::Hybrid => err,
                    _ => 0.0,
                };
                let mut rows_of = |table: Option<&LogitTable>, kind: &'static str| -> Result<Option<_>> {
                    let Some(table) = table else { return Ok(None) };
                    let mut flat = Vec::with_capacity(idx.len() * slots.total());
                    for &i in &idx {
                        flat.extend(table.get(data[i].id, kind)?.concat().into_iter().map(S::of));
                    }
                    Ok(Some(g.constant(Tensor::new(idx.len(), slots.total(), flat)?)))
                };
                let t = rows_of(teacher, "teacher")?;
                let p = rows_of(professor, "professor")?;
                let kd = kd_node(&mut g, cfg.distance, logits, t, p, gamma)?;
                let l_kd = g.value(kd).item().f64();
                (total_node(&mut g, ce, kd, a, beta)?, l_kd, a, beta, gamma)
            };
            let total = g.value(loss).item().f64();
            let l_ce = g.value(ce).item().f64();
            records.push(BatchRecord {
                epoch,
                batch: bi,
                size: idx.len(),
                err,
                gamma,
                l_ce,
                l_kd,
                alpha: a,
                beta: b,
                total,
            });
            if !total.is_finite() {
                non_finite = true;
                epochs.push(epoch_record(epoch, &records));
                log.extend(records);
                break 'outer;
            }
            let grads = g.backward(loss)?;
            adam.step(&mut model.params, &bound, &grads);
        }
        epochs.push(epoch_record(epoch, &records));
        log.extend(records);
    }

    let (train_rates, test_rates) = if model.params.all_finite() {
        (evaluate(&model, &data)?, evaluate(&model, test)?)
    } else {
        non_finite = true;
        let worst = |n| ErrorRates { full: 1.0, action: 1.0, object: 1.0, location: 1.0, n };
        (worst(data.len()), worst(test.len()))
    };
    let config = serde_json::to_value(cfg)?;
    let result = finish(epochs, log, non_finite, train_rates, test_rates, start, config)?;
    Ok((model, result))
}
