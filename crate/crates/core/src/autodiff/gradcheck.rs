//! Central finite-difference checks against [`Graph::backward`].

use crate::error::Result;
use crate::scalar::Scalar;

use super::{Graph, NodeId, Tensor};

/// Relative error with the denominator floored at `1e-4`, so that
/// gradients close to zero are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-4);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone, Copy)]
pub struct CheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Compares analytic gradients of a scalar function of `inputs` against
/// central differences with the given step.
///
/// `build` receives a fresh graph and the parameter leaf ids, one per input,
/// and must return a `1 x 1` node.
pub fn check<S, F>(inputs: &[Tensor<S>], step: f64, build: F) -> Result<CheckReport>
where
    S: Scalar,
    F: Fn(&mut Graph<S>, &[NodeId]) -> Result<NodeId>,
{
    let eval = |xs: &[Tensor<S>]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<_> = xs.iter().map(|x| g.param(x.clone())).collect();
        let out = build(&mut g, &ids)?;
        Ok(g.value(out).item().f64())
    };

    let mut g = Graph::new();
    let ids: Vec<_> = inputs.iter().map(|x| g.param(x.clone())).collect();
    let out = build(&mut g, &ids)?;
    let grads = g.backward(out)?;

    let mut report = CheckReport {
        max_rel_error: 0.0,
        checked: 0,
    };
    let mut work = inputs.to_vec();
    for (k, id) in ids.iter().enumerate() {
        let zeros = Tensor::zeros(inputs[k].rows(), inputs[k].cols());
        let analytic = grads.get(*id).unwrap_or(&zeros).clone();
        for i in 0..inputs[k].len() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = S::of(orig.f64() + step);
            let plus = eval(&work)?;
            work[k].data_mut()[i] = S::of(orig.f64() - step);
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(analytic.data()[i].f64(), numeric);
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}
