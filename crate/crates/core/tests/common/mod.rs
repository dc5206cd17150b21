#![allow(dead_code)]

use kdslu::autodiff::gradcheck::{self, relative_error};
use kdslu::autodiff::{Graph, NodeId, Tensor};
use kdslu::losses::{cross_entropy_node, kd_node, total_node, DistanceKind};
use kdslu::models::{SlotLabel, SlotSpace, StudentModel, TextConfig, TextModel, TextVariant};
use kdslu::models::StudentConfig;
use kdslu::params::{Bound, ParamStore};
use kdslu::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub const PRIMITIVES: &[&str] = &[
    "matmul", "matmul_nt", "add", "sub", "mul", "add_row", "scale", "tanh", "sigmoid", "log",
    "softmax", "log_softmax", "layer_norm", "smooth_l1", "max_pool", "mean_rows", "sum_all",
    "mean_all", "gather_rows", "slice_rows", "slice_cols", "concat_rows", "concat_cols", "select",
];

fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
    Tensor::normal(r, c, 1.0, rng)
}

/// Reduces `x` against a fixed random weight so every entry gets a distinct
/// upstream gradient.
fn reduce(g: &mut Graph<f64>, x: NodeId, rng: &mut ChaCha8Rng) -> Result<NodeId> {
    let [r, c] = g.shape(x);
    let w = g.constant(rand_t(rng, r, c));
    let y = g.mul(x, w)?;
    Ok(g.sum_all(y))
}

/// Worst relative error of one random instance of primitive `name`.
pub fn check_primitive(name: &str, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rng.gen_range(1..5);
    let c = rng.gen_range(1..5);
    let k = rng.gen_range(1..5);
    let wseed: u64 = rng.gen();
    let inputs: Vec<Tensor<f64>> = match name {
        "matmul" => vec![rand_t(&mut rng, r, k), rand_t(&mut rng, k, c)],
        "matmul_nt" => vec![rand_t(&mut rng, r, k), rand_t(&mut rng, c, k)],
        "add" | "sub" | "mul" | "concat_rows" | "concat_cols" | "select" => {
            vec![rand_t(&mut rng, r, c), rand_t(&mut rng, r, c)]
        }
        "add_row" => vec![rand_t(&mut rng, r, c), rand_t(&mut rng, 1, c)],
        "log" => vec![Tensor::new(r, c, (0..r * c).map(|_| rng.gen_range(0.3..3.0)).collect()).unwrap()],
        "layer_norm" => vec![rand_t(&mut rng, r, c + 1)],
        "smooth_l1" => vec![Tensor::new(r, c, (0..r * c).map(|_| {
            // keep clear of the kink at |x| = 1
            let v: f64 = rng.gen_range(0.05..2.5);
            let v = if (v - 1.0).abs() < 0.05 { v + 0.1 } else { v };
            if rng.gen() { v } else { -v }
        }).collect()).unwrap()],
        "max_pool" | "slice_rows" | "gather_rows" => vec![rand_t(&mut rng, r + 1, c)],
        "slice_cols" => vec![rand_t(&mut rng, r, c + 1)],
        _ => vec![rand_t(&mut rng, r, c)],
    };
    let mask: Vec<bool> = (0..r * c).map(|_| rng.gen()).collect();
    let rows: Vec<usize> = {
        let n = inputs[0].rows();
        let mut v: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.7)).collect();
        if v.is_empty() {
            v.push(rng.gen_range(0..n));
        }
        v
    };
    let gather: Vec<usize> = (0..rng.gen_range(1..6)).map(|_| rng.gen_range(0..inputs[0].rows())).collect();
    let factor: f64 = rng.gen_range(-2.0..2.0);
    let name = name.to_string();
    let report = gradcheck::check(&inputs, STEP, |g, x| {
        let mut wrng = ChaCha8Rng::seed_from_u64(wseed);
        let out = match name.as_str() {
            "matmul" => g.matmul(x[0], x[1])?,
            "matmul_nt" => g.matmul_nt(x[0], x[1])?,
            "add" => g.add(x[0], x[1])?,
            "sub" => g.sub(x[0], x[1])?,
            "mul" => g.mul(x[0], x[1])?,
            "add_row" => g.add_row(x[0], x[1])?,
            "scale" => g.scale(x[0], factor),
            "tanh" => g.tanh(x[0]),
            "sigmoid" => g.sigmoid(x[0]),
            "log" => g.log(x[0]),
            "softmax" => g.softmax(x[0]),
            "log_softmax" => g.log_softmax(x[0]),
            "layer_norm" => g.layer_norm(x[0], 1e-5),
            "smooth_l1" => g.smooth_l1(x[0]),
            "max_pool" => g.max_pool(x[0], rows.clone())?,
            "mean_rows" => g.mean_rows(x[0]),
            "sum_all" => g.sum_all(x[0]),
            "mean_all" => g.mean_all(x[0]),
            "gather_rows" => g.gather_rows(x[0], gather.clone())?,
            "slice_rows" => g.slice_rows(x[0], 1, g.shape(x[0])[0])?,
            "slice_cols" => g.slice_cols(x[0], 0, g.shape(x[0])[1] - 1)?,
            "concat_rows" => g.concat_rows(vec![x[0], x[1]])?,
            "concat_cols" => g.concat_cols(vec![x[1], x[0]])?,
            "select" => g.select(mask.clone(), x[0], x[1])?,
            other => panic!("unknown primitive {other}"),
        };
        reduce(g, out, &mut wrng)
    })
    .unwrap();
    assert!(report.checked > 0);
    report.max_rel_error
}

/// Builds a scalar loss for a model; `true` binds trainable parameters.
pub type LossFn<M> = dyn Fn(&M, &mut Graph<f64>, bool) -> (Bound, NodeId);

/// Central differences over every parameter entry of `params`.
pub fn param_check<M>(model: &mut M, params: fn(&mut M) -> &mut ParamStore<f64>, loss: &LossFn<M>) -> f64 {
    let mut g = Graph::new();
    let (bound, l) = loss(model, &mut g, true);
    let grads = g.backward(l).unwrap();
    let value = |m: &M| {
        let mut g = Graph::new();
        let (_, l) = loss(m, &mut g, false);
        g.value(l).item()
    };
    let ids: Vec<_> = params(model).ids().collect();
    let mut worst: f64 = 0.0;
    for id in ids {
        let shape = params(model).get(id).shape();
        let zeros = Tensor::zeros(shape[0], shape[1]);
        let analytic = grads.get(bound.node(id)).unwrap_or(&zeros).clone();
        for i in 0..analytic.len() {
            let orig = params(model).get(id).data()[i];
            params(model).get_mut(id).data_mut()[i] = orig + STEP;
            let plus = value(model);
            params(model).get_mut(id).data_mut()[i] = orig - STEP;
            let minus = value(model);
            params(model).get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
    }
    worst
}

pub fn tiny_space() -> SlotSpace {
    SlotSpace { action: 3, object: 4, location: 2 }
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize, s: &SlotSpace) -> Vec<SlotLabel> {
    (0..n)
        .map(|_| SlotLabel {
            action: rng.gen_range(0..s.action),
            object: rng.gen_range(0..s.object),
            location: rng.gen_range(0..s.location),
        })
        .collect()
}

/// Full student gradient of the weighted CE + hybrid KD objective.
pub fn check_student(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space = tiny_space();
    let v = rng.gen_range(2..5);
    let cfg = StudentConfig { input_dim: v, hidden: rng.gen_range(2..5), slots: space };
    let mut model = StudentModel::<f64>::new(cfg, seed);
    let b = rng.gen_range(1..4);
    let frames: Vec<Vec<Vec<f64>>> = (0..b)
        .map(|_| {
            (0..rng.gen_range(1..4))
                .map(|_| {
                    let raw: Vec<f64> = (0..v).map(|_| rng.gen_range(0.01..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    raw.into_iter().map(|x| x / s).collect()
                })
                .collect()
        })
        .collect();
    let labels = random_labels(&mut rng, b, &space);
    let teacher = Tensor::normal(b, space.total(), 2.0, &mut rng);
    let professor = Tensor::normal(b, space.total(), 2.0, &mut rng);
    let kind = if rng.gen() { DistanceKind::Mse } else { DistanceKind::SmoothL1 };
    let (beta, gamma) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
    let loss = move |m: &StudentModel<f64>, g: &mut Graph<f64>, train: bool| {
        let bound = if train { m.params.bind(g) } else { m.params.bind_frozen(g) };
        let batch: Vec<&[Vec<f64>]> = frames.iter().map(Vec::as_slice).collect();
        let out = m.forward_batch(g, &bound, &batch).unwrap();
        let ce = cross_entropy_node(g, out, &labels, &space).unwrap();
        let t = g.constant(teacher.clone());
        let p = g.constant(professor.clone());
        let kd = kd_node(g, kind, out, Some(t), Some(p), gamma).unwrap();
        (bound, total_node(g, ce, kd, 1.0 - beta, beta).unwrap())
    };
    param_check(&mut model, |m| &mut m.params, &loss)
}

/// Full text-model gradient of slot-wise CE on a padded batch.
pub fn check_text(variant: TextVariant, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space = tiny_space();
    let vocab = 5;
    let mut cfg = TextConfig::new(vocab, space);
    cfg.d_model = 4;
    cfg.heads = if rng.gen() { 1 } else { 2 };
    cfg.ff = rng.gen_range(2..5);
    cfg.layers = rng.gen_range(1..3);
    let mut model = TextModel::<f64>::new(cfg, variant, seed).unwrap();
    // Default embeddings are tiny; widen them so the check sees curvature.
    let t = model.params_mut_by_name("embed").unwrap();
    let (r, c) = (t.rows(), t.cols());
    *t = Tensor::normal(r, c, 1.0, &mut rng);
    let b = rng.gen_range(1..4);
    let seqs: Vec<Vec<usize>> = (0..b)
        .map(|_| {
            let mut s: Vec<usize> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..vocab)).collect();
            if rng.gen_bool(0.3) {
                s.push(cfg.pad_id());
            }
            s
        })
        .collect();
    let labels = random_labels(&mut rng, b, &space);
    let loss = move |m: &TextModel<f64>, g: &mut Graph<f64>, train: bool| {
        let bound = if train { m.params.bind(g) } else { m.params.bind_frozen(g) };
        let batch: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
        let out = m.forward_batch(g, &bound, &batch).unwrap();
        (bound, cross_entropy_node(g, out, &labels, &space).unwrap())
    };
    param_check(&mut model, |m| &mut m.params, &loss)
}
