use std::collections::BTreeMap;
use std::fs;

use kdslu::corpus::{Corpus, CorpusConfig, Example};
use kdslu::harness::*;
use kdslu::losses::DistanceKind;
use kdslu::models::{Checkpoint, SlotLabel, StudentConfig, StudentModel, TextModel, TextVariant};
use kdslu::schedule::{alpha, Schedule};
use kdslu::Error;

fn small_corpus() -> Corpus {
    Corpus::synthesize(&CorpusConfig {
        n_train: 300,
        n_valid: 20,
        n_test: 100,
        seed: 11,
        ..CorpusConfig::default()
    })
    .unwrap()
}

fn teacher(c: &Corpus, variant: TextVariant, epochs: usize) -> (TextModel<f64>, RunResult) {
    let cfg = TrainConfig { epochs, seed: 3, ..TrainConfig::default() };
    train_teacher(variant, c.grammar.vocab_size(), c.grammar.slots(), &c.train, &c.test, &cfg).unwrap()
}

fn tables(c: &Corpus) -> (LogitTable, LogitTable) {
    let (t, _) = teacher(c, TextVariant::Teacher, 2);
    let (p, _) = teacher(c, TextVariant::Professor, 2);
    (LogitTable::from_model(&t, &c.train).unwrap(), LogitTable::from_model(&p, &c.train).unwrap())
}

fn params_bits(m: &StudentModel<f64>) -> Vec<(String, Vec<u64>)> {
    m.params
        .iter()
        .map(|(n, t)| (n.to_string(), t.data().iter().map(|x| x.to_bits()).collect()))
        .collect()
}

#[test]
fn logit_export_round_trip_is_exact_and_idempotent() {
    let c = small_corpus();
    let (model, _) = teacher(&c, TextVariant::Professor, 1);
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let table = export_logits(&model, &c.train, &a).unwrap();
    let back = LogitTable::read_jsonl(&a).unwrap();
    assert_eq!(back, table);
    for (x, y) in back.rows.values().zip(table.rows.values()) {
        for (u, v) in x.concat().iter().zip(y.concat()) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), c.train.len());
    assert!(c.train.iter().all(|e| back.rows.contains_key(&e.id)));
    back.write_jsonl(&b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn fixed_zero_schedule_matches_ce_only_bitwise() {
    let c = small_corpus();
    let (t, p) = tables(&c);
    let sources = Sources { teacher: Some(&t), professor: Some(&p) };
    let base = DistillConfig { epochs: 3, seed: 5, ..DistillConfig::baseline(3, 5) };
    let (m0, r0) = distill::<f64>(&base, c.grammar.slots(), &c.train, &c.test, sources).unwrap();
    for mode in [GammaMode::Teacher, GammaMode::Hybrid] {
        for distance in [DistanceKind::Mse, DistanceKind::SmoothL1] {
            let kd = DistillConfig { gamma_mode: mode, distance, schedule: Schedule::Fixed { beta: 0.0 }, ..base.clone() };
            let (m1, r1) = distill::<f64>(&kd, c.grammar.slots(), &c.train, &c.test, sources).unwrap();
            assert_eq!(params_bits(&m0), params_bits(&m1), "{mode} {distance}");
            assert_eq!(r0.test, r1.test);
            let ce0: Vec<u64> = r0.batches.iter().map(|b| b.l_ce.to_bits()).collect();
            let ce1: Vec<u64> = r1.batches.iter().map(|b| b.l_ce.to_bits()).collect();
            assert_eq!(ce0, ce1);
        }
    }
}

#[test]
fn teacher_untouched_and_logged_weights_follow_schedule() {
    let c = small_corpus();
    let (tm, _) = teacher(&c, TextVariant::Teacher, 1);
    let (pm, _) = teacher(&c, TextVariant::Professor, 1);
    let before = (tm.params.checksum(), pm.params.checksum());
    let t = LogitTable::from_model(&tm, &c.train).unwrap();
    let p = LogitTable::from_model(&pm, &c.train).unwrap();
    let sources = Sources { teacher: Some(&t), professor: Some(&p) };
    for schedule in [Schedule::Err, Schedule::Exp, Schedule::Tri { epochs: 4 }, Schedule::Fixed { beta: 0.3 }] {
        let cfg = DistillConfig { schedule, epochs: 4, seed: 2, ..DistillConfig::default() };
        let (_, r) = distill::<f64>(&cfg, c.grammar.slots(), &c.train, &c.test, sources).unwrap();
        assert_eq!(r.epochs.len(), 4);
        for b in &r.batches {
            let beta = schedule.beta(b.epoch, b.err).unwrap();
            assert_eq!(b.beta.to_bits(), beta.to_bits(), "{schedule}");
            assert_eq!(b.alpha.to_bits(), alpha(beta).unwrap().to_bits());
            assert_eq!(b.gamma.to_bits(), b.err.to_bits());
        }
        for e in &r.epochs {
            let bs: Vec<_> = r.batches.iter().filter(|b| b.epoch == e.epoch).collect();
            let mean_beta = bs.iter().map(|b| b.beta).sum::<f64>() / bs.len() as f64;
            assert!((e.beta - mean_beta).abs() < 1e-15);
            assert!((e.alpha + e.beta - 1.0).abs() < 1e-12);
        }
    }
    assert_eq!(before, (tm.params.checksum(), pm.params.checksum()));
}

#[test]
fn distill_rejects_missing_sources() {
    let c = small_corpus();
    let (t, _) = tables(&c);
    let hybrid = DistillConfig { epochs: 1, ..DistillConfig::default() };
    let only_t = Sources { teacher: Some(&t), professor: None };
    assert!(matches!(
        distill::<f64>(&hybrid, c.grammar.slots(), &c.train, &c.test, only_t),
        Err(Error::Config(_))
    ));
    let mut partial = t.clone();
    let gone = c.train[7].id;
    partial.rows.remove(&gone);
    let teacher_only = DistillConfig { gamma_mode: GammaMode::Teacher, ..hybrid };
    let r = distill::<f64>(&teacher_only, c.grammar.slots(), &c.train, &c.test, Sources { teacher: Some(&partial), professor: None });
    assert!(matches!(r, Err(Error::MissingLogits { id, .. }) if id == gone));
}

#[test]
fn non_finite_loss_marks_run_failed() {
    let c = small_corpus();
    let (mut t, _) = tables(&c);
    for row in t.rows.values_mut() {
        row.action[0] = 1e300;
    }
    let cfg = DistillConfig {
        gamma_mode: GammaMode::Teacher,
        distance: DistanceKind::Mse,
        schedule: Schedule::Fixed { beta: 0.5 },
        epochs: 3,
        ..DistillConfig::default()
    };
    let (_, r) = distill::<f64>(&cfg, c.grammar.slots(), &c.train, &c.test, Sources { teacher: Some(&t), professor: None }).unwrap();
    assert!(!r.converged);
    assert_eq!(r.batches.len(), 1);
    assert!(!r.batches[0].total.is_finite());
}

#[test]
fn zero_epoch_teacher_is_near_chance() {
    let c = Corpus::synthesize(&CorpusConfig { n_train: 200, n_test: 600, ..CorpusConfig::default() }).unwrap();
    let chance = 1.0 - 1.0 / c.grammar.intents.len() as f64;
    for variant in [TextVariant::Teacher, TextVariant::Professor] {
        let (_, r) = teacher(&c, variant, 0);
        assert!(r.epochs.is_empty());
        assert!(r.test.full >= chance - 0.1, "{variant:?}: {}", r.test.full);
    }
}

#[test]
fn constant_model_error_is_one_minus_modal_frequency() {
    let c = small_corpus();
    let mut counts: BTreeMap<SlotLabel, usize> = BTreeMap::new();
    for e in &c.test {
        *counts.entry(e.label).or_default() += 1;
    }
    let (&modal, &n) = counts.iter().max_by_key(|(_, &n)| n).unwrap();
    let oracle = 1.0 - n as f64 / c.test.len() as f64;

    let cfg = StudentConfig::new(c.grammar.vocab_size(), c.grammar.slots());
    let mut m = StudentModel::<f64>::zeros(cfg);
    for (slot, idx) in ["action", "object", "location"].iter().zip(modal.as_array()) {
        m.params.by_name_mut(&format!("head.{slot}.b")).unwrap().data_mut()[idx] = 1.0;
    }
    let r = evaluate(&m, &c.test).unwrap();
    assert!((r.full - oracle).abs() < 1e-15);
    assert!(r.full >= r.action.max(r.object).max(r.location));
}

#[test]
fn evaluate_requires_frames() {
    let c = small_corpus();
    let m = StudentModel::<f64>::new(StudentConfig::new(c.grammar.vocab_size(), c.grammar.slots()), 1);
    let bare: Vec<Example> = c.test.iter().map(|e| Example { frames: vec![], ..e.clone() }).collect();
    assert!(evaluate(&m, &bare).is_err());
}

#[test]
fn clean_pipeline_equals_clean_teacher_error() {
    let c = small_corpus();
    let (m, _) = teacher(&c, TextVariant::Teacher, 2);
    let clean = evaluate_text(&m, &c.test).unwrap();
    assert_eq!(pipeline_baseline(&m, &c.test, &c.channel, 0.0, 9).unwrap(), clean);
    assert!(pipeline_baseline(&m, &c.test, &c.channel, 1.5, 9).is_err());
}

#[test]
fn teacher_checkpoint_round_trip() {
    let c = small_corpus();
    let (m, _) = teacher(&c, TextVariant::Professor, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    Checkpoint::from_text(&m).save(&path).unwrap();
    let back: TextModel<f64> = Checkpoint::load(&path).unwrap().to_text().unwrap();
    assert_eq!(LogitTable::from_model(&back, &c.test).unwrap(), LogitTable::from_model(&m, &c.test).unwrap());
}

/// Regression bound pinned from the first full-size baseline run.
#[test]
fn teacher_reaches_regression_bound_on_default_corpus() {
    let c = Corpus::synthesize(&CorpusConfig::default()).unwrap();
    let (_, r) = teacher(&c, TextVariant::Teacher, 30);
    assert!(r.test.full <= 0.02, "teacher test error {}", r.test.full);
    assert!(r.converged);
}

fn grid_config() -> GridConfig {
    let cell = |gamma_mode, schedule| GridCell {
        config: DistillConfig {
            gamma_mode,
            schedule,
            distance: DistanceKind::SmoothL1,
            epochs: 2,
            fraction: 0.5,
            hidden: 16,
            ..DistillConfig::default()
        },
        seeds: None,
    };
    GridConfig {
        corpus: CorpusConfig { n_train: 200, n_valid: 10, n_test: 60, seed: 4, ..CorpusConfig::default() },
        teacher: TrainConfig { epochs: 1, ..TrainConfig::default() },
        teacher_logits: None,
        professor_logits: None,
        seeds: vec![1, 2],
        cells: vec![cell(GammaMode::None, Schedule::Fixed { beta: 0.0 }), cell(GammaMode::Teacher, Schedule::Exp)],
        threads: Some(1),
    }
}

fn strip_wall(mut rows: Vec<ResultRow>) -> Vec<ResultRow> {
    for r in &mut rows {
        r.wall_s = 0.0;
    }
    rows.sort_by(|a, b| (&a.config_hash, a.seed).cmp(&(&b.config_hash, b.seed)));
    rows
}

#[test]
fn grid_rows_resume_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = grid_config();
    let rows = run_grid(&cfg, dir.path()).unwrap();
    assert_eq!(rows.len(), 4);
    let cached: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".jsonl"))
        .collect();
    assert_eq!(cached.len(), 1);
    assert!(cached[0].starts_with("teacher_logits_"));

    // Drop one row and resume: only that run comes back.
    let results = dir.path().join("results.csv");
    let text = fs::read_to_string(&results).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let removed = lines.remove(2).to_string();
    fs::write(&results, lines.join("\n") + "\n").unwrap();
    let resumed = run_grid(&cfg, dir.path()).unwrap();
    assert_eq!(resumed.len(), 4);
    let last = resumed.last().unwrap();
    let old: Vec<&str> = removed.split(',').collect();
    assert_eq!((last.config_hash.as_str(), last.seed.to_string()), (old[0], old[1].to_string()));
    assert_eq!(last.test_err.to_bits(), old[6].parse::<f64>().unwrap().to_bits());
    assert_eq!(strip_wall(rows), strip_wall(resumed.clone()));

    // A third call has nothing left to run.
    assert_eq!(run_grid(&cfg, dir.path()).unwrap(), resumed);

    let mut r = csv::Reader::from_path(dir.path().join("aggregate.csv")).unwrap();
    let agg: Vec<AggregateRow> = r.deserialize().map(|x| x.unwrap()).collect();
    assert_eq!(agg.len(), 2);
    for a in &agg {
        let errs: Vec<f64> = resumed.iter().filter(|r| r.config_hash == a.config_hash).map(|r| r.test_err).collect();
        assert_eq!(a.n, 2);
        assert!((a.mean - (errs[0] + errs[1]) / 2.0).abs() < 1e-15);
    }
}

#[test]
fn grid_header_matches_contract() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = grid_config();
    cfg.cells.truncate(1);
    cfg.seeds = vec![8];
    run_grid(&cfg, dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "config_hash,seed,distance,gamma_mode,schedule,fraction,test_err,converged,wall_s"
    );
}
