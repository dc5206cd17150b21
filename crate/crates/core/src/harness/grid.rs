use std::collections::{BTreeSet, HashSet};
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, CorpusConfig};
use crate::error::{Error, Result};
use crate::losses::DistanceKind;
use crate::models::TextVariant;
use crate::schedule::Schedule;

use super::logits::LogitTable;
use super::train::{distill, train_teacher, DistillConfig, GammaMode, Sources, TrainConfig};

pub const RESULTS_FILE: &str = "results.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

/// One configuration of the grid; the seed inside `config` is ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub config: DistillConfig,
    /// Overrides the grid-wide seed list.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub teacher: TrainConfig,
    /// Precomputed logit files; when absent the text models are trained.
    #[serde(default)]
    pub teacher_logits: Option<PathBuf>,
    #[serde(default)]
    pub professor_logits: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub cells: Vec<GridCell>,
    /// Worker threads; the rayon default when absent.
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub config_hash: String,
    pub seed: u64,
    pub distance: String,
    pub gamma_mode: String,
    pub schedule: String,
    pub fraction: f64,
    pub test_err: f64,
    pub converged: bool,
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub config_hash: String,
    pub distance: String,
    pub gamma_mode: String,
    pub schedule: String,
    pub fraction: f64,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub std: f64,
    pub converged: usize,
}

/// Identifies a cell independent of its seed: a SHA-256 prefix over the
/// cell settings together with the corpus and teacher settings.
pub fn config_hash(cell: &DistillConfig, corpus: &CorpusConfig, teacher: &TrainConfig) -> Result<String> {
    let mut cell = cell.clone();
    cell.seed = 0;
    let key = serde_json::json!({ "cell": cell, "corpus": corpus, "teacher": teacher });
    let digest = Sha256::digest(serde_json::to_vec(&key)?);
    Ok(hex::encode(&digest[..8]))
}

impl GridConfig {
    fn preset(cells: Vec<GridCell>, seeds: u64) -> Self {
        Self {
            corpus: CorpusConfig::default(),
            teacher: TrainConfig::default(),
            teacher_logits: None,
            professor_logits: None,
            seeds: (0..seeds).collect(),
            cells,
            threads: None,
        }
    }

    /// Whole-data block: CE-only baseline plus every teacher mode under
    /// fixed 0.1 / fixed 0.5 (MSE), err (MSE and MAE), Exp and Tri (MAE).
    pub fn whole_data_preset() -> Self {
        let epochs = 50;
        let mut cells = vec![cell(DistillConfig::baseline(epochs, 0), 1.0)];
        let columns = [
            (Schedule::Fixed { beta: 0.1 }, DistanceKind::Mse),
            (Schedule::Fixed { beta: 0.5 }, DistanceKind::Mse),
            (Schedule::Err, DistanceKind::Mse),
            (Schedule::Err, DistanceKind::SmoothL1),
            (Schedule::Exp, DistanceKind::SmoothL1),
            (Schedule::Tri { epochs }, DistanceKind::SmoothL1),
        ];
        for mode in [GammaMode::Teacher, GammaMode::Professor, GammaMode::Hybrid] {
            for (schedule, distance) in columns {
                cells.push(cell(DistillConfig { gamma_mode: mode, schedule, distance, epochs, ..DistillConfig::default() }, 1.0));
            }
        }
        Self::preset(cells, 5)
    }

    /// Shortage blocks at 10% and 1% of the training set. `full` uses 10 and
    /// 20 subsets; otherwise 5 and 10.
    pub fn shortage_preset(full: bool) -> Self {
        let epochs = 100;
        let mut cells = Vec::new();
        for (fraction, subsets) in [(0.1, if full { 10 } else { 5 }), (0.01, if full { 20 } else { 10 })] {
            let seeds = Some((0..subsets).collect());
            let mut base = cell(DistillConfig::baseline(epochs, 0), fraction);
            base.seeds = seeds.clone();
            cells.push(base);
            let columns = [
                (Schedule::Err, DistanceKind::Mse),
                (Schedule::Err, DistanceKind::SmoothL1),
                (Schedule::Exp, DistanceKind::SmoothL1),
                (Schedule::Tri { epochs }, DistanceKind::SmoothL1),
            ];
            for mode in [GammaMode::Teacher, GammaMode::Hybrid] {
                for (schedule, distance) in columns {
                    let mut c = cell(DistillConfig { gamma_mode: mode, schedule, distance, epochs, ..DistillConfig::default() }, fraction);
                    c.seeds = seeds.clone();
                    cells.push(c);
                }
            }
        }
        Self::preset(cells, 5)
    }
}

fn cell(config: DistillConfig, fraction: f64) -> GridCell {
    GridCell {
        config: DistillConfig { fraction, ..config },
        seeds: None,
    }
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    if !path.exists() || fs::metadata(path)?.len() == 0 {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Groups rows by `config_hash` in order of first appearance.
pub fn aggregate(rows: &[ResultRow]) -> Vec<AggregateRow> {
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.config_hash.as_str()) {
            order.push(&r.config_hash);
        }
    }
    order
        .into_iter()
        .map(|h| {
            let group: Vec<&ResultRow> = rows.iter().filter(|r| r.config_hash == h).collect();
            let n = group.len();
            let mean = group.iter().map(|r| r.test_err).sum::<f64>() / n as f64;
            let std = if n > 1 {
                (group.iter().map(|r| (r.test_err - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            let first = group[0];
            AggregateRow {
                config_hash: h.to_string(),
                distance: first.distance.clone(),
                gamma_mode: first.gamma_mode.clone(),
                schedule: first.schedule.clone(),
                fraction: first.fraction,
                n,
                mean,
                std,
                converged: group.iter().filter(|r| r.converged).count(),
            }
        })
        .collect()
}

fn load_or_train(
    explicit: &Option<PathBuf>,
    cache: &Path,
    variant: TextVariant,
    corpus: &Corpus,
    cfg: &TrainConfig,
) -> Result<LogitTable> {
    if let Some(p) = explicit {
        return LogitTable::read_jsonl(p);
    }
    if cache.exists() {
        return LogitTable::read_jsonl(cache);
    }
    let (model, _) = train_teacher::<f64>(
        variant,
        corpus.grammar.vocab_size(),
        corpus.grammar.slots(),
        &corpus.train,
        &corpus.test,
        cfg,
    )?;
    let table = LogitTable::from_model(&model, &corpus.train)?;
    table.write_jsonl(cache)?;
    Ok(table)
}

/// Runs every (cell, seed) pair whose row is not yet in
/// `out_dir/results.csv`, appending rows as runs finish, then rewrites
/// `out_dir/aggregate.csv`. Returns all rows of the results file.
pub fn run_grid(cfg: &GridConfig, out_dir: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let out_dir = out_dir.as_ref();
    if cfg.cells.is_empty() {
        return Err(Error::Config("grid has no cells".into()));
    }
    for c in &cfg.cells {
        c.config.validate()?;
        if c.seeds.as_ref().unwrap_or(&cfg.seeds).is_empty() {
            return Err(Error::Config("grid cell without seeds".into()));
        }
    }
    fs::create_dir_all(out_dir.join("runs"))?;
    let results_path = out_dir.join(RESULTS_FILE);
    let done: HashSet<(String, u64)> = read_results(&results_path)?
        .into_iter()
        .map(|r| (r.config_hash, r.seed))
        .collect();

    let mut jobs = Vec::new();
    let mut seen = BTreeSet::new();
    for cell in &cfg.cells {
        let hash = config_hash(&cell.config, &cfg.corpus, &cfg.teacher)?;
        for &seed in cell.seeds.as_ref().unwrap_or(&cfg.seeds) {
            if !done.contains(&(hash.clone(), seed)) && seen.insert((hash.clone(), seed)) {
                let mut run = cell.config.clone();
                run.seed = seed;
                jobs.push((hash.clone(), run));
            }
        }
    }

    if !jobs.is_empty() {
        let corpus = Corpus::synthesize(&cfg.corpus)?;
        // Cached logits are only reused for the same corpus and teacher settings.
        let source_key = {
            let key = serde_json::to_vec(&serde_json::json!({ "corpus": cfg.corpus, "teacher": cfg.teacher }))?;
            hex::encode(&Sha256::digest(key)[..8])
        };
        let need_t = jobs.iter().any(|(_, c)| c.gamma_mode.needs_teacher());
        let need_p = jobs.iter().any(|(_, c)| c.gamma_mode.needs_professor());
        let teacher = need_t
            .then(|| load_or_train(&cfg.teacher_logits, &out_dir.join(format!("teacher_logits_{source_key}.jsonl")), TextVariant::Teacher, &corpus, &cfg.teacher))
            .transpose()?;
        let professor = need_p
            .then(|| load_or_train(&cfg.professor_logits, &out_dir.join(format!("professor_logits_{source_key}.jsonl")), TextVariant::Professor, &corpus, &cfg.teacher))
            .transpose()?;
        let sources = Sources {
            teacher: teacher.as_ref(),
            professor: professor.as_ref(),
        };

        let fresh = !results_path.exists() || fs::metadata(&results_path)?.len() == 0;
        let file = OpenOptions::new().create(true).append(true).open(&results_path)?;
        let writer = Mutex::new(csv::WriterBuilder::new().has_headers(fresh).from_writer(file));
        let slots = corpus.grammar.slots();

        let run_one = |(hash, run): &(String, DistillConfig)| -> Result<()> {
            let (_, result) = distill::<f64>(run, slots, &corpus.train, &corpus.test, sources)?;
            let row = ResultRow {
                config_hash: hash.clone(),
                seed: run.seed,
                distance: run.distance.to_string(),
                gamma_mode: run.gamma_mode.to_string(),
                schedule: run.schedule.to_string(),
                fraction: run.fraction,
                test_err: result.test.full,
                converged: result.converged,
                wall_s: result.wall_s,
            };
            let detail = out_dir.join("runs").join(format!("{hash}_{}.json", run.seed));
            fs::write(detail, serde_json::to_vec(&result)?)?;
            let mut w = writer.lock().expect("results writer poisoned");
            w.serialize(&row)?;
            w.flush()?;
            Ok(())
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads.unwrap_or(0))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(run_one).collect::<Result<Vec<()>>>())?;
    }

    let rows = read_results(&results_path)?;
    let mut w = csv::Writer::from_path(out_dir.join(AGGREGATE_FILE))?;
    for a in aggregate(&rows) {
        w.serialize(a)?;
    }
    w.flush()?;
    Ok(rows)
}
