use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

use super::tensor::Tensor;

/// Index of a node inside its [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub enum Op<S> {
    /// Trainable leaf.
    Param,
    /// Leaf that never receives a gradient.
    Const,
    MatMul(NodeId, NodeId),
    /// `a · bᵀ`
    MatMulNT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Adds a `1 x c` row to every row of an `r x c` matrix.
    AddRow(NodeId, NodeId),
    Scale(NodeId, S),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Log(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    /// Row-wise normalisation to zero mean and unit variance.
    LayerNorm(NodeId, S),
    /// Elementwise Huber penalty with transition point 1.
    SmoothL1(NodeId),
    /// Column-wise max over the listed rows; gradient goes to the first argmax.
    MaxPool { x: NodeId, rows: Vec<usize>, argmax: Vec<usize> },
    MeanRows(NodeId),
    SumAll(NodeId),
    GatherRows(NodeId, Vec<usize>),
    SliceRows(NodeId, usize, usize),
    SliceCols(NodeId, usize, usize),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    /// Elementwise `mask ? a : b`.
    Select { mask: Vec<bool>, a: NodeId, b: NodeId },
}

impl<S> Op<S> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Param => "param",
            Op::Const => "const",
            Op::MatMul(..) => "matmul",
            Op::MatMulNT(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Log(..) => "log",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::LayerNorm(..) => "layer_norm",
            Op::SmoothL1(..) => "smooth_l1",
            Op::MaxPool { .. } => "max_pool",
            Op::MeanRows(..) => "mean_rows",
            Op::SumAll(..) => "sum_all",
            Op::GatherRows(..) => "gather_rows",
            Op::SliceRows(..) => "slice_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::Select { .. } => "select",
        }
    }

    pub fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Param | Op::Const => vec![],
            Op::MatMul(a, b)
            | Op::MatMulNT(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::Select { a, b, .. } => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Log(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::LayerNorm(a, _)
            | Op::SmoothL1(a)
            | Op::MeanRows(a)
            | Op::SumAll(a)
            | Op::GatherRows(a, _)
            | Op::SliceRows(a, ..)
            | Op::SliceCols(a, ..) => vec![*a],
            Op::MaxPool { x, .. } => vec![*x],
            Op::ConcatRows(xs) | Op::ConcatCols(xs) => xs.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node<S> {
    pub op: Op<S>,
    pub value: Tensor<S>,
    pub requires_grad: bool,
}

/// Eagerly evaluated computation graph. Each builder method computes the
/// node value immediately; [`Graph::backward`] then walks the nodes in
/// reverse insertion order, which is a valid reverse topological order.
#[derive(Debug, Clone, Default)]
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
}

/// Adjoints produced by [`Graph::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<S>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

fn same_shape<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node<S> {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> [usize; 2] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, op: Op<S>, value: Tensor<S>) -> NodeId {
        let requires_grad = match &op {
            Op::Param => true,
            Op::Const => false,
            other => other
                .parents()
                .iter()
                .any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<S>) -> NodeId {
        self.push(Op::Param, value)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> NodeId {
        self.push(Op::Const, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let out = va.matmul(vb);
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let out = va.matmul_nt(vb);
        Ok(self.push(Op::MatMulNT(a, b), out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = self.value(a).zip(self.value(b), |x, y| x + y);
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = self.value(a).zip(self.value(b), |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), out))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = self.value(a).zip(self.value(b), |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.rows() != 1 || vr.cols() != va.cols() {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                left: va.shape(),
                right: vr.shape(),
            });
        }
        let mut out = va.clone();
        let c = va.cols();
        for (i, x) in out.data_mut().iter_mut().enumerate() {
            *x = *x + vr.data()[i % c];
        }
        Ok(self.push(Op::AddRow(a, row), out))
    }

    pub fn scale(&mut self, a: NodeId, factor: S) -> NodeId {
        let out = self.value(a).map(|x| x * factor);
        self.push(Op::Scale(a, factor), out)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(S::tanh);
        self.push(Op::Tanh(a), out)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), out)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(S::ln);
        self.push(Op::Log(a), out)
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let mut out = v.clone();
        let c = v.cols();
        for row in out.data_mut().chunks_mut(c) {
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let mut sum = S::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum = sum + *x;
            }
            for x in row.iter_mut() {
                *x = *x / sum;
            }
        }
        self.push(Op::Softmax(a), out)
    }

    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let mut out = v.clone();
        let c = v.cols();
        for row in out.data_mut().chunks_mut(c) {
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let sum: S = row.iter().map(|&x| (x - max).exp()).sum();
            let lse = max + sum.ln();
            for x in row.iter_mut() {
                *x = *x - lse;
            }
        }
        self.push(Op::LogSoftmax(a), out)
    }

    pub fn layer_norm(&mut self, a: NodeId, eps: S) -> NodeId {
        let v = self.value(a);
        let mut out = v.clone();
        let c = v.cols();
        let n = S::of(c as f64);
        for row in out.data_mut().chunks_mut(c) {
            let mean = row.iter().copied().sum::<S>() / n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() / n;
            let inv = (var + eps).sqrt().recip();
            for x in row.iter_mut() {
                *x = (*x - mean) * inv;
            }
        }
        self.push(Op::LayerNorm(a, eps), out)
    }

    pub fn smooth_l1(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(huber);
        self.push(Op::SmoothL1(a), out)
    }

    /// Column-wise maximum over `rows`, producing a `1 x c` row.
    pub fn max_pool(&mut self, x: NodeId, rows: Vec<usize>) -> Result<NodeId> {
        let v = self.value(x);
        if rows.is_empty() || rows.iter().any(|&r| r >= v.rows()) {
            return Err(invalid(
                "max_pool",
                format!("row set {rows:?} invalid for shape {:?}", v.shape()),
            ));
        }
        let c = v.cols();
        let mut argmax = vec![rows[0]; c];
        let mut out = v.row_slice(rows[0]).to_vec();
        for &r in &rows[1..] {
            for (j, &x) in v.row_slice(r).iter().enumerate() {
                if x > out[j] {
                    out[j] = x;
                    argmax[j] = r;
                }
            }
        }
        let out = Tensor::row(out);
        Ok(self.push(Op::MaxPool { x, rows, argmax }, out))
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let (r, c) = (v.rows(), v.cols());
        let mut out = vec![S::zero(); c];
        for row in v.data().chunks(c) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o = *o + x;
            }
        }
        let n = S::of(r as f64);
        for o in &mut out {
            *o = *o / n;
        }
        self.push(Op::MeanRows(a), Tensor::row(out))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: S = self.value(a).data().iter().copied().sum();
        self.push(Op::SumAll(a), Tensor::scalar(s))
    }

    /// Mean of all entries as a `1 x 1` node.
    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len();
        let s = self.sum_all(a);
        self.scale(s, S::one() / S::of(n as f64))
    }

    /// Row gather; serves as embedding lookup when `a` is a table.
    pub fn gather_rows(&mut self, a: NodeId, idx: Vec<usize>) -> Result<NodeId> {
        let v = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= v.rows()) {
            return Err(Error::OutOfVocab {
                id: bad,
                vocab: v.rows(),
            });
        }
        let c = v.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            data.extend_from_slice(v.row_slice(i));
        }
        let out = Tensor::new(idx.len(), c, data)?;
        Ok(self.push(Op::GatherRows(a, idx), out))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = self.value(a);
        if start >= end || end > v.rows() {
            return Err(invalid(
                "slice_rows",
                format!("range {start}..{end} invalid for shape {:?}", v.shape()),
            ));
        }
        let c = v.cols();
        let out = Tensor::new(end - start, c, v.data()[start * c..end * c].to_vec())?;
        Ok(self.push(Op::SliceRows(a, start, end), out))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = self.value(a);
        if start >= end || end > v.cols() {
            return Err(invalid(
                "slice_cols",
                format!("range {start}..{end} invalid for shape {:?}", v.shape()),
            ));
        }
        let mut data = Vec::with_capacity(v.rows() * (end - start));
        for r in 0..v.rows() {
            data.extend_from_slice(&v.row_slice(r)[start..end]);
        }
        let out = Tensor::new(v.rows(), end - start, data)?;
        Ok(self.push(Op::SliceCols(a, start, end), out))
    }

    pub fn concat_rows(&mut self, xs: Vec<NodeId>) -> Result<NodeId> {
        let first = *xs.first().ok_or_else(|| invalid("concat_rows", "no inputs"))?;
        let c = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &x in &xs {
            let v = self.value(x);
            if v.cols() != c {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    left: self.shape(first),
                    right: v.shape(),
                });
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::new(rows, c, data)?;
        Ok(self.push(Op::ConcatRows(xs), out))
    }

    pub fn concat_cols(&mut self, xs: Vec<NodeId>) -> Result<NodeId> {
        let first = *xs.first().ok_or_else(|| invalid("concat_cols", "no inputs"))?;
        let r = self.value(first).rows();
        let mut cols = 0;
        for &x in &xs {
            let v = self.value(x);
            if v.rows() != r {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    left: self.shape(first),
                    right: v.shape(),
                });
            }
            cols += v.cols();
        }
        let mut data = Vec::with_capacity(r * cols);
        for i in 0..r {
            for &x in &xs {
                data.extend_from_slice(self.value(x).row_slice(i));
            }
        }
        let out = Tensor::new(r, cols, data)?;
        Ok(self.push(Op::ConcatCols(xs), out))
    }

    pub fn select(&mut self, mask: Vec<bool>, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("select", self.value(a), self.value(b))?;
        if mask.len() != self.value(a).len() {
            return Err(invalid(
                "select",
                format!("mask length {} for shape {:?}", mask.len(), self.shape(a)),
            ));
        }
        let data = mask
            .iter()
            .zip(self.value(a).data().iter().zip(self.value(b).data()))
            .map(|(&m, (&x, &y))| if m { x } else { y })
            .collect();
        let [r, c] = self.shape(a);
        let out = Tensor::new(r, c, data)?;
        Ok(self.push(Op::Select { mask, a, b }, out))
    }

    /// Reverse sweep from a `1 x 1` loss. The seed adjoint is 1.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<S>> {
        let shape = self.shape(loss);
        if shape != [1, 1] {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(S::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<S>, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let needs = |id: NodeId| self.nodes[id.0].requires_grad;
        let mut acc = |id: NodeId, t: Tensor<S>| {
            if !needs(id) {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Param | Op::Const => {}
            Op::MatMul(a, b) => {
                if needs(*a) {
                    acc(*a, g.matmul_nt(self.value(*b)));
                }
                if needs(*b) {
                    acc(*b, self.value(*a).matmul_tn(g));
                }
            }
            Op::MatMulNT(a, b) => {
                // y = a bᵀ: da = g b, db = gᵀ a
                if needs(*a) {
                    acc(*a, g.matmul(self.value(*b)));
                }
                if needs(*b) {
                    acc(*b, g.matmul_tn(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    acc(*a, g.zip(self.value(*b), |x, y| x * y));
                }
                if needs(*b) {
                    acc(*b, g.zip(self.value(*a), |x, y| x * y));
                }
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                if needs(*row) {
                    let c = g.cols();
                    let mut sum = vec![S::zero(); c];
                    for r in g.data().chunks(c) {
                        for (s, &x) in sum.iter_mut().zip(r) {
                            *s = *s + x;
                        }
                    }
                    acc(*row, Tensor::row(sum));
                }
            }
            Op::Scale(a, f) => acc(*a, g.map(|x| x * *f)),
            Op::Tanh(a) => acc(*a, g.zip(y, |gx, t| gx * (S::one() - t * t))),
            Op::Sigmoid(a) => acc(*a, g.zip(y, |gx, s| gx * s * (S::one() - s))),
            Op::Log(a) => acc(*a, g.zip(self.value(*a), |gx, x| gx / x)),
            Op::Softmax(a) => {
                let c = y.cols();
                let mut out = g.clone();
                for (o, (gr, yr)) in out
                    .data_mut()
                    .chunks_mut(c)
                    .zip(g.data().chunks(c).zip(y.data().chunks(c)))
                {
                    let dot: S = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((o, &gi), &yi) in o.iter_mut().zip(gr).zip(yr) {
                        *o = yi * (gi - dot);
                    }
                }
                acc(*a, out);
            }
            Op::LogSoftmax(a) => {
                let c = y.cols();
                let mut out = g.clone();
                for (o, (gr, yr)) in out
                    .data_mut()
                    .chunks_mut(c)
                    .zip(g.data().chunks(c).zip(y.data().chunks(c)))
                {
                    let gsum: S = gr.iter().copied().sum();
                    for ((o, &gi), &yi) in o.iter_mut().zip(gr).zip(yr) {
                        *o = gi - yi.exp() * gsum;
                    }
                }
                acc(*a, out);
            }
            Op::LayerNorm(a, eps) => {
                let x = self.value(*a);
                let c = x.cols();
                let n = S::of(c as f64);
                let mut out = g.clone();
                for (o, ((gr, yr), xr)) in out.data_mut().chunks_mut(c).zip(
                    g.data()
                        .chunks(c)
                        .zip(y.data().chunks(c))
                        .zip(x.data().chunks(c)),
                ) {
                    let mean = xr.iter().copied().sum::<S>() / n;
                    let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
                    let inv = (var + *eps).sqrt().recip();
                    let gmean = gr.iter().copied().sum::<S>() / n;
                    let gy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<S>() / n;
                    for ((o, &gi), &yi) in o.iter_mut().zip(gr).zip(yr) {
                        *o = inv * (gi - gmean - yi * gy);
                    }
                }
                acc(*a, out);
            }
            Op::SmoothL1(a) => acc(
                *a,
                g.zip(self.value(*a), |gx, r| gx * r.max(-S::one()).min(S::one())),
            ),
            Op::MaxPool { x, argmax, .. } => {
                let v = self.value(*x);
                let mut out = Tensor::zeros(v.rows(), v.cols());
                let c = v.cols();
                for (j, &r) in argmax.iter().enumerate() {
                    out.data_mut()[r * c + j] = g.data()[j];
                }
                acc(*x, out);
            }
            Op::MeanRows(a) => {
                let v = self.value(*a);
                let n = S::of(v.rows() as f64);
                let mut out = Tensor::zeros(v.rows(), v.cols());
                let c = v.cols();
                for row in out.data_mut().chunks_mut(c) {
                    for (o, &gx) in row.iter_mut().zip(g.data()) {
                        *o = gx / n;
                    }
                }
                acc(*a, out);
            }
            Op::SumAll(a) => {
                let [r, c] = self.shape(*a);
                acc(*a, Tensor::full(r, c, g.item()));
            }
            Op::GatherRows(a, idx) => {
                let [r, c] = self.shape(*a);
                let mut out = Tensor::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    let dst = &mut out.data_mut()[i * c..(i + 1) * c];
                    for (d, &gx) in dst.iter_mut().zip(g.row_slice(k)) {
                        *d = *d + gx;
                    }
                }
                acc(*a, out);
            }
            Op::SliceRows(a, start, _) => {
                let [r, c] = self.shape(*a);
                let mut out = Tensor::zeros(r, c);
                out.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                acc(*a, out);
            }
            Op::SliceCols(a, start, end) => {
                let [r, c] = self.shape(*a);
                let w = end - start;
                let mut out = Tensor::zeros(r, c);
                for i in 0..r {
                    out.data_mut()[i * c + start..i * c + end]
                        .copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                }
                acc(*a, out);
            }
            Op::ConcatRows(xs) => {
                let c = g.cols();
                let mut offset = 0;
                for &x in xs {
                    let r = self.value(x).rows();
                    if needs(x) {
                        let part = g.data()[offset * c..(offset + r) * c].to_vec();
                        acc(x, Tensor::new(r, c, part).expect("slice shape"));
                    }
                    offset += r;
                }
            }
            Op::ConcatCols(xs) => {
                let rows = g.rows();
                let mut offset = 0;
                for &x in xs {
                    let w = self.value(x).cols();
                    if needs(x) {
                        let mut part = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            part.extend_from_slice(&g.row_slice(i)[offset..offset + w]);
                        }
                        acc(x, Tensor::new(rows, w, part).expect("slice shape"));
                    }
                    offset += w;
                }
            }
            Op::Select { mask, a, b } => {
                if needs(*a) {
                    let mut ga = g.clone();
                    for (x, &m) in ga.data_mut().iter_mut().zip(mask) {
                        if !m {
                            *x = S::zero();
                        }
                    }
                    acc(*a, ga);
                }
                if needs(*b) {
                    let mut gb = g.clone();
                    for (x, &m) in gb.data_mut().iter_mut().zip(mask) {
                        if m {
                            *x = S::zero();
                        }
                    }
                    acc(*b, gb);
                }
            }
        }
    }
}

#[inline]
fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

#[inline]
pub(crate) fn huber<S: Scalar>(r: S) -> S {
    let a = r.abs();
    if a < S::one() {
        S::of(0.5) * r * r
    } else {
        a - S::of(0.5)
    }
}
