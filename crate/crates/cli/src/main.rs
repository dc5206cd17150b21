use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use kdslu::corpus::{self, CorpusConfig, Example, Grammar, NoiseChannel};
use kdslu::harness::{
    distill, evaluate, evaluate_text, export_logits, pipeline_baseline, run_grid, train_teacher, DistillConfig,
    GammaMode, GridConfig, LogitTable, Sources, TrainConfig,
};
use kdslu::losses::DistanceKind;
use kdslu::models::{Checkpoint, CheckpointKind, StudentModel, TextModel, TextVariant};
use kdslu::schedule::Schedule;
use serde::de::DeserializeOwned;

const CORPUS_META: &str = "corpus.json";

#[derive(Parser)]
#[command(name = "kdslu", version, about = "Logit distillation from text teachers into a word-posterior SLU student")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic corpus generation and rendering.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Text teacher / professor training and logit export.
    #[command(subcommand)]
    Teacher(TeacherCmd),
    /// Student distillation.
    #[command(subcommand)]
    Distill(DistillCmd),
    /// Error rates of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Experiment grids.
    #[command(subcommand)]
    Grid(GridCmd),
    /// Reference baselines.
    #[command(subcommand)]
    Baseline(BaselineCmd),
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Writes clean train/valid/test splits and the corpus config to a directory.
    Generate {
        /// Corpus config (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adds posterior frames to a dataset file.
    Render {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Corpus config written by `generate`; defaults to corpus.json next to the input.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Rendering seed; defaults to the corpus seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Teacher,
    Professor,
}

impl From<Variant> for TextVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Teacher => TextVariant::Teacher,
            Variant::Professor => TextVariant::Professor,
        }
    }
}

#[derive(Args)]
struct DataArgs {
    /// Corpus config; defaults to corpus.json next to the first data file.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Subcommand)]
enum TeacherCmd {
    /// Fine-tunes a text model on clean scripts and writes a checkpoint.
    Train {
        #[arg(long, value_enum)]
        variant: Variant,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Training config (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the run result (JSON).
        #[arg(long)]
        result: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Writes one JSON line of slot logits per example.
    ExportLogits {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        corpus: DataArgs,
    },
}

#[derive(Subcommand)]
enum DistillCmd {
    /// Trains a student on rendered frames with CE and optional KD.
    Run {
        /// Distillation config (JSON); flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        teacher_logits: Option<PathBuf>,
        #[arg(long)]
        professor_logits: Option<PathBuf>,
        /// mse or mae
        #[arg(long)]
        distance: Option<DistanceKind>,
        /// none, teacher, professor or hybrid
        #[arg(long)]
        gamma: Option<GammaMode>,
        /// fixed:<beta>, err, exp, tri or tri:<T>
        #[arg(long)]
        schedule: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        result: Option<PathBuf>,
        /// Per-epoch training log (CSV).
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    corpus: DataArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Whole,
    Shortage,
}

#[derive(Subcommand)]
enum GridCmd {
    /// Runs every missing (cell, seed) pair and writes results and aggregates.
    Run {
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// Full subset counts for the shortage preset.
        #[arg(long)]
        full: bool,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum BaselineCmd {
    /// Text model error on token-corrupted scripts.
    Pipeline {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        corpus: DataArgs,
    },
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(f).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

struct Setting {
    config: CorpusConfig,
    grammar: Grammar,
}

impl Setting {
    fn load(explicit: &Option<PathBuf>, data: &Path) -> Result<Self> {
        let path = match explicit {
            Some(p) => p.clone(),
            None => data.parent().unwrap_or(Path::new(".")).join(CORPUS_META),
        };
        let config: CorpusConfig = read_json(&path)?;
        let grammar = match &config.grammar {
            Some(g) => Grammar::build(g.clone())?,
            None => Grammar::default_grammar(),
        };
        Ok(Self { config, grammar })
    }

    fn channel(&self) -> Result<NoiseChannel> {
        Ok(NoiseChannel::from_spec(&self.grammar.vocab, &self.config.channel)?)
    }

    fn read(&self, path: &Path) -> Result<Vec<Example>> {
        corpus::read_jsonl(path, &self.grammar).with_context(|| format!("reading {}", path.display()))
    }
}

fn corpus_cmd(cmd: CorpusCmd) -> Result<()> {
    match cmd {
        CorpusCmd::Generate { config, seed, out } => {
            let mut cfg: CorpusConfig = match config {
                Some(p) => read_json(&p)?,
                None => CorpusConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let grammar = match &cfg.grammar {
                Some(g) => Grammar::build(g.clone())?,
                None => Grammar::default_grammar(),
            };
            let n = cfg.n_train + cfg.n_valid + cfg.n_test;
            let data = corpus::generate(&grammar, n, cfg.seed)?;
            let nf = n as f64;
            let fractions = [cfg.n_train as f64 / nf, cfg.n_valid as f64 / nf, cfg.n_test as f64 / nf];
            let (train, valid, test) = corpus::split(&data, fractions, cfg.seed)?;
            fs::create_dir_all(&out)?;
            for (name, part) in [("train", &train), ("valid", &valid), ("test", &test)] {
                corpus::write_jsonl(out.join(format!("{name}.jsonl")), part, &grammar)?;
            }
            write_json(&out.join(CORPUS_META), &cfg)?;
            println!(
                "{} intents, vocabulary {}, {} / {} / {} examples",
                grammar.intents.len(),
                grammar.vocab_size(),
                train.len(),
                valid.len(),
                test.len()
            );
        }
        CorpusCmd::Render { input, out, corpus: meta, seed } => {
            let s = Setting::load(&meta, &input)?;
            let data = s.read(&input)?;
            let rendered = corpus::render_all(&data, &s.channel()?, seed.unwrap_or(s.config.seed))?;
            corpus::write_jsonl(&out, &rendered, &s.grammar)?;
            println!("rendered {} examples", rendered.len());
        }
    }
    Ok(())
}

fn teacher_cmd(cmd: TeacherCmd) -> Result<()> {
    match cmd {
        TeacherCmd::Train { variant, train, test, config, epochs, seed, out, result, data } => {
            let s = Setting::load(&data.corpus, &train)?;
            let mut cfg: TrainConfig = match config {
                Some(p) => read_json(&p)?,
                None => TrainConfig::default(),
            };
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(x) = seed {
                cfg.seed = x;
            }
            let (train, test) = (s.read(&train)?, s.read(&test)?);
            let (model, run) = train_teacher::<f64>(variant.into(), s.grammar.vocab_size(), s.grammar.slots(), &train, &test, &cfg)?;
            Checkpoint::from_text(&model).save(&out)?;
            if let Some(r) = result {
                write_json(&r, &run)?;
            }
            println!("train_err {} test_err {} converged {}", run.train.full, run.test.full, run.converged);
        }
        TeacherCmd::ExportLogits { checkpoint, data, out, corpus } => {
            let s = Setting::load(&corpus.corpus, &data)?;
            let model: TextModel<f64> = Checkpoint::load(&checkpoint)?.to_text()?;
            if model.config.slots != s.grammar.slots() {
                bail!("checkpoint slot sizes do not match the corpus");
            }
            let table = export_logits(&model, &s.read(&data)?, &out)?;
            println!("wrote {} rows", table.len());
        }
    }
    Ok(())
}

fn distill_cmd(cmd: DistillCmd) -> Result<()> {
    let DistillCmd::Run {
        config,
        train,
        test,
        teacher_logits,
        professor_logits,
        distance,
        gamma,
        schedule,
        epochs,
        seed,
        fraction,
        out,
        result,
        log,
        data,
    } = cmd;
    let mut cfg: DistillConfig = match config {
        Some(p) => read_json(&p)?,
        None => DistillConfig::default(),
    };
    if let Some(d) = distance {
        cfg.distance = d;
    }
    if let Some(g) = gamma {
        cfg.gamma_mode = g;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if let Some(sch) = schedule {
        cfg.schedule = Schedule::parse(&sch, cfg.epochs)?;
    }
    if let Some(x) = seed {
        cfg.seed = x;
    }
    if let Some(f) = fraction {
        cfg.fraction = f;
    }
    let s = Setting::load(&data.corpus, &train)?;
    let (train, test) = (s.read(&train)?, s.read(&test)?);
    let t = teacher_logits.map(LogitTable::read_jsonl).transpose()?;
    let p = professor_logits.map(LogitTable::read_jsonl).transpose()?;
    let sources = Sources { teacher: t.as_ref(), professor: p.as_ref() };
    let (model, run): (StudentModel<f64>, _) = distill(&cfg, s.grammar.slots(), &train, &test, sources)?;
    Checkpoint::from_student(&model).save(&out)?;
    if let Some(r) = result {
        write_json(&r, &run)?;
    }
    if let Some(l) = log {
        let mut w = csv::Writer::from_path(&l)?;
        for e in &run.epochs {
            w.serialize(e)?;
        }
        w.flush()?;
    }
    println!("test_err {} converged {} wall_s {:.1}", run.test.full, run.converged, run.wall_s);
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let s = Setting::load(&args.corpus.corpus, &args.data)?;
    let data = s.read(&args.data)?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let rates = match ckpt.model {
        CheckpointKind::Student { .. } => evaluate(&ckpt.to_student::<f64>()?, &data)?,
        CheckpointKind::Text { .. } => evaluate_text(&ckpt.to_text::<f64>()?, &data)?,
    };
    println!("{}", serde_json::to_string(&rates)?);
    Ok(())
}

fn grid_cmd(cmd: GridCmd) -> Result<()> {
    let GridCmd::Run { config, preset, full, threads, out } = cmd;
    let mut cfg: GridConfig = match (config, preset) {
        (Some(p), _) => read_json(&p)?,
        (None, Some(Preset::Whole)) => GridConfig::whole_data_preset(),
        (None, Some(Preset::Shortage)) => GridConfig::shortage_preset(full),
        (None, None) => bail!("grid run needs --config or --preset"),
    };
    if threads.is_some() {
        cfg.threads = threads;
    }
    fs::create_dir_all(&out)?;
    write_json(&out.join("grid.json"), &cfg)?;
    let rows = run_grid(&cfg, &out)?;
    println!("{} result rows in {}", rows.len(), out.join("results.csv").display());
    Ok(())
}

fn baseline_cmd(cmd: BaselineCmd) -> Result<()> {
    let BaselineCmd::Pipeline { checkpoint, data, rate, seed, corpus } = cmd;
    let s = Setting::load(&corpus.corpus, &data)?;
    let model: TextModel<f64> = Checkpoint::load(&checkpoint)?.to_text()?;
    let rates = pipeline_baseline(&model, &s.read(&data)?, &s.channel()?, rate, seed)?;
    println!("{}", serde_json::to_string(&rates)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Corpus(c) => corpus_cmd(c),
        Command::Teacher(c) => teacher_cmd(c),
        Command::Distill(c) => distill_cmd(c),
        Command::Eval(a) => eval_cmd(a),
        Command::Grid(c) => grid_cmd(c),
        Command::Baseline(c) => baseline_cmd(c),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
