//! The recording tape and its primitive operations.
//!
//! Every primitive computes its forward value eagerly and appends a node to
//! the tape. [`Tape::backward`] walks the nodes in exact reverse append order
//! and accumulates gradients into the parameter leaves only.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::AdError;
use crate::matrix::{gemm, Matrix};
use crate::param::ParamId;
use crate::segments::Segments;

/// Epsilon used by [`Tape::batch_norm`].
pub const BATCH_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Tensor {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Tensor {
    pub fn id(&self) -> usize {
        self.id
    }
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

impl FromStr for Reduce {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sum" => Ok(Reduce::Sum),
            "mean" => Ok(Reduce::Mean),
            "max" => Ok(Reduce::Max),
            other => Err(format!("unknown reduction `{other}` (expected sum, mean or max)")),
        }
    }
}

impl fmt::Display for Reduce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reduce::Sum => "sum",
            Reduce::Mean => "mean",
            Reduce::Max => "max",
        })
    }
}

/// Primitive kinds, used to name ops in diagnostics and for fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    MatMul,
    Add,
    Mul,
    AddRowBroadcast,
    Scale,
    ScaleRows,
    ConcatCols,
    ConcatRows,
    Tanh,
    Logistic,
    LogSigmoid,
    MeanAll,
    RowGather,
    SegmentSum,
    SegmentMean,
    SegmentMax,
    BatchNorm,
    CrossEntropy,
}

impl OpKind {
    pub const ALL: [OpKind; 18] = [
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Mul,
        OpKind::AddRowBroadcast,
        OpKind::Scale,
        OpKind::ScaleRows,
        OpKind::ConcatCols,
        OpKind::ConcatRows,
        OpKind::Tanh,
        OpKind::Logistic,
        OpKind::LogSigmoid,
        OpKind::MeanAll,
        OpKind::RowGather,
        OpKind::SegmentSum,
        OpKind::SegmentMean,
        OpKind::SegmentMax,
        OpKind::BatchNorm,
        OpKind::CrossEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::AddRowBroadcast => "add_row_broadcast",
            OpKind::Scale => "scale",
            OpKind::ScaleRows => "scale_rows",
            OpKind::ConcatCols => "concat_cols",
            OpKind::ConcatRows => "concat_rows",
            OpKind::Tanh => "tanh",
            OpKind::Logistic => "logistic",
            OpKind::LogSigmoid => "log_sigmoid",
            OpKind::MeanAll => "mean_all",
            OpKind::RowGather => "row_gather",
            OpKind::SegmentSum => "segment_sum",
            OpKind::SegmentMean => "segment_mean",
            OpKind::SegmentMax => "segment_max",
            OpKind::BatchNorm => "batch_norm",
            OpKind::CrossEntropy => "cross_entropy",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown op `{s}`"))
    }
}

enum Op {
    Constant,
    Param(ParamId),
    MatMul { a: usize, b: usize, trans_b: bool },
    Add(usize, usize),
    Mul(usize, usize),
    AddRow { a: usize, bias: usize },
    Scale { a: usize, c: f64 },
    ScaleRows { a: usize, weights: Arc<Vec<f64>> },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    Tanh(usize),
    Logistic(usize),
    LogSigmoid(usize),
    MeanAll(usize),
    RowGather { a: usize, idx: Arc<Vec<usize>> },
    Segment {
        a: usize,
        seg: Arc<Segments>,
        mode: Reduce,
        /// Row index of the winning entry per output element (max only).
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        logits: usize,
        labels: Arc<Vec<usize>>,
        probs: Matrix,
    },
}

impl Op {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Constant | Op::Param(_) => return None,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Mul(..) => OpKind::Mul,
            Op::AddRow { .. } => OpKind::AddRowBroadcast,
            Op::Scale { .. } => OpKind::Scale,
            Op::ScaleRows { .. } => OpKind::ScaleRows,
            Op::ConcatCols(_) => OpKind::ConcatCols,
            Op::ConcatRows(_) => OpKind::ConcatRows,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Logistic(_) => OpKind::Logistic,
            Op::LogSigmoid(_) => OpKind::LogSigmoid,
            Op::MeanAll(_) => OpKind::MeanAll,
            Op::RowGather { .. } => OpKind::RowGather,
            Op::Segment { mode, .. } => match mode {
                Reduce::Sum => OpKind::SegmentSum,
                Reduce::Mean => OpKind::SegmentMean,
                Reduce::Max => OpKind::SegmentMax,
            },
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        })
    }
}

struct Node {
    value: Matrix,
    op: Op,
    /// True when a parameter is reachable from this node.
    tracked: bool,
}

/// Gradients produced by one backward pass, keyed by parameter.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    by_param: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.by_param.get(id.index()).and_then(|g| g.as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.by_param
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId::new(i), g)))
    }

    fn accumulate(&mut self, id: ParamId, g: Matrix) {
        let i = id.index();
        if self.by_param.len() <= i {
            self.by_param.resize(i + 1, None);
        }
        match &mut self.by_param[i] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

/// Append-only record of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<OpKind>,
}

fn shape_err(op: &'static str, detail: String) -> AdError {
    AdError::Shape { op, detail }
}

#[inline]
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose backward rule for `kind` is deliberately wrong. Only
    /// meant for negative-control runs of the gradient checker.
    pub fn with_fault(kind: Option<OpKind>) -> Self {
        Self {
            nodes: Vec::new(),
            fault: kind,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, t: Tensor) -> &Matrix {
        &self.nodes[t.id].value
    }

    /// Reads a 1x1 tensor.
    pub fn scalar(&self, t: Tensor) -> f64 {
        self.nodes[t.id].value.as_slice()[0]
    }

    fn push(&mut self, value: Matrix, op: Op, tracked: bool) -> Tensor {
        let (rows, cols) = value.shape();
        let id = self.nodes.len();
        self.nodes.push(Node { value, op, tracked });
        Tensor { id, rows, cols }
    }

    fn tracked(&self, id: usize) -> bool {
        self.nodes[id].tracked
    }

    pub fn constant(&mut self, value: Matrix) -> Tensor {
        self.push(value, Op::Constant, false)
    }

    pub fn param(&mut self, id: ParamId, value: Matrix) -> Tensor {
        self.push(value, Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, AdError> {
        if a.cols != b.rows {
            return Err(shape_err("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
        }
        let v = gemm(self.value(a), false, self.value(b), false);
        let tracked = self.tracked(a.id) || self.tracked(b.id);
        Ok(self.push(v, Op::MatMul { a: a.id, b: b.id, trans_b: false }, tracked))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, AdError> {
        if a.cols != b.cols {
            return Err(shape_err("matmul_bt", format!("{:?} x {:?}^T", a.shape(), b.shape())));
        }
        let v = gemm(self.value(a), false, self.value(b), true);
        let tracked = self.tracked(a.id) || self.tracked(b.id);
        Ok(self.push(v, Op::MatMul { a: a.id, b: b.id, trans_b: true }, tracked))
    }

    fn zip_with(
        &mut self,
        op: &'static str,
        a: Tensor,
        b: Tensor,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix, AdError> {
        if a.shape() != b.shape() {
            return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.as_slice().iter().zip(vb.as_slice()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Matrix::from_vec(a.rows, a.cols, data).expect("shape preserved"))
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, AdError> {
        let v = self.zip_with("add", a, b, |x, y| x + y)?;
        let tracked = self.tracked(a.id) || self.tracked(b.id);
        Ok(self.push(v, Op::Add(a.id, b.id), tracked))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, AdError> {
        let v = self.zip_with("mul", a, b, |x, y| x * y)?;
        let tracked = self.tracked(a.id) || self.tracked(b.id);
        Ok(self.push(v, Op::Mul(a.id, b.id), tracked))
    }

    /// Adds the 1 x cols row `bias` to every row of `a`.
    pub fn add_row_broadcast(&mut self, a: Tensor, bias: Tensor) -> Result<Tensor, AdError> {
        if bias.rows != 1 || bias.cols != a.cols {
            return Err(shape_err(
                "add_row_broadcast",
                format!("{:?} + row {:?}", a.shape(), bias.shape()),
            ));
        }
        let mut v = self.value(a).clone();
        let b = self.value(bias).as_slice().to_vec();
        for r in 0..a.rows {
            for (x, y) in v.row_mut(r).iter_mut().zip(&b) {
                *x += *y;
            }
        }
        let tracked = self.tracked(a.id) || self.tracked(bias.id);
        Ok(self.push(v, Op::AddRow { a: a.id, bias: bias.id }, tracked))
    }

    pub fn scale(&mut self, a: Tensor, c: f64) -> Tensor {
        let v = self.value(a).map(|x| c * x);
        let tracked = self.tracked(a.id);
        self.push(v, Op::Scale { a: a.id, c }, tracked)
    }

    /// Multiplies row `i` of `a` by the constant `weights[i]`.
    pub fn scale_rows(&mut self, a: Tensor, weights: Arc<Vec<f64>>) -> Result<Tensor, AdError> {
        if weights.len() != a.rows {
            return Err(shape_err(
                "scale_rows",
                format!("{} weights for {} rows", weights.len(), a.rows),
            ));
        }
        let mut v = self.value(a).clone();
        for (r, &w) in weights.iter().enumerate() {
            v.row_mut(r).iter_mut().for_each(|x| *x *= w);
        }
        let tracked = self.tracked(a.id);
        Ok(self.push(v, Op::ScaleRows { a: a.id, weights }, tracked))
    }

    pub fn concat_cols(&mut self, parts: &[Tensor]) -> Result<Tensor, AdError> {
        let first = parts.first().ok_or(AdError::EmptyInput { op: "concat_cols" })?;
        let rows = first.rows;
        if let Some(bad) = parts.iter().find(|p| p.rows != rows) {
            return Err(shape_err("concat_cols", format!("{} rows vs {}", bad.rows, rows)));
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut v = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let src = self.nodes[p.id].value.row(r);
                v.row_mut(r)[off..off + p.cols].copy_from_slice(src);
                off += p.cols;
            }
        }
        let tracked = parts.iter().any(|p| self.tracked(p.id));
        Ok(self.push(v, Op::ConcatCols(parts.iter().map(|p| p.id).collect()), tracked))
    }

    pub fn concat_rows(&mut self, parts: &[Tensor]) -> Result<Tensor, AdError> {
        let first = parts.first().ok_or(AdError::EmptyInput { op: "concat_rows" })?;
        let cols = first.cols;
        if let Some(bad) = parts.iter().find(|p| p.cols != cols) {
            return Err(shape_err("concat_rows", format!("{} cols vs {}", bad.cols, cols)));
        }
        let mats: Vec<&Matrix> = parts.iter().map(|p| &self.nodes[p.id].value).collect();
        let v = Matrix::vstack(&mats);
        let tracked = parts.iter().any(|p| self.tracked(p.id));
        Ok(self.push(v, Op::ConcatRows(parts.iter().map(|p| p.id).collect()), tracked))
    }

    pub fn tanh(&mut self, a: Tensor) -> Tensor {
        let v = self.value(a).map(f64::tanh);
        let tracked = self.tracked(a.id);
        self.push(v, Op::Tanh(a.id), tracked)
    }

    /// Elementwise logistic sigmoid.
    pub fn logistic(&mut self, a: Tensor) -> Tensor {
        let v = self.value(a).map(logistic);
        let tracked = self.tracked(a.id);
        self.push(v, Op::Logistic(a.id), tracked)
    }

    /// Elementwise `ln σ(x)`, evaluated as `-softplus(-x)`.
    pub fn log_sigmoid(&mut self, a: Tensor) -> Tensor {
        let v = self.value(a).map(|x| -softplus(-x));
        let tracked = self.tracked(a.id);
        self.push(v, Op::LogSigmoid(a.id), tracked)
    }

    pub fn mean_all(&mut self, a: Tensor) -> Result<Tensor, AdError> {
        let n = a.rows * a.cols;
        if n == 0 {
            return Err(AdError::EmptyInput { op: "mean_all" });
        }
        let m = self.value(a).sum() / n as f64;
        let tracked = self.tracked(a.id);
        Ok(self.push(Matrix::filled(1, 1, m), Op::MeanAll(a.id), tracked))
    }

    /// Output row `k` is row `idx[k]` of `a`.
    pub fn row_gather(&mut self, a: Tensor, idx: Arc<Vec<usize>>) -> Result<Tensor, AdError> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= a.rows) {
            return Err(AdError::IndexOutOfRange {
                op: "row_gather",
                index: bad,
                rows: a.rows,
            });
        }
        let v = self.value(a).select_rows(&idx);
        let tracked = self.tracked(a.id);
        Ok(self.push(v, Op::RowGather { a: a.id, idx }, tracked))
    }

    /// Reduces the rows listed in each group of `seg` to one output row.
    ///
    /// Empty groups give a zero row under `Sum` and are an error for `Mean`
    /// and `Max`. Max ties resolve to the lowest row index.
    pub fn segment_reduce(
        &mut self,
        a: Tensor,
        seg: Arc<Segments>,
        mode: Reduce,
    ) -> Result<Tensor, AdError> {
        let op = match mode {
            Reduce::Sum => "segment_sum",
            Reduce::Mean => "segment_mean",
            Reduce::Max => "segment_max",
        };
        if let Some(max) = seg.max_index() {
            if max >= a.rows {
                return Err(AdError::IndexOutOfRange {
                    op,
                    index: max,
                    rows: a.rows,
                });
            }
        }
        let cols = a.cols;
        let groups = seg.num_groups();
        let input = &self.nodes[a.id].value;
        let mut out = Matrix::zeros(groups, cols);
        let mut argmax = Vec::new();
        match mode {
            Reduce::Sum | Reduce::Mean => {
                for g in 0..groups {
                    let members = seg.group(g);
                    if mode == Reduce::Mean && members.is_empty() {
                        return Err(AdError::EmptySegment { op, segment: g });
                    }
                    let dst = out.row_mut(g);
                    for &i in members {
                        for (d, s) in dst.iter_mut().zip(input.row(i)) {
                            *d += *s;
                        }
                    }
                    if mode == Reduce::Mean {
                        let inv = 1.0 / members.len() as f64;
                        dst.iter_mut().for_each(|d| *d *= inv);
                    }
                }
            }
            Reduce::Max => {
                argmax = vec![0usize; groups * cols];
                for g in 0..groups {
                    let members = seg.group(g);
                    let Some(&first) = members.first() else {
                        return Err(AdError::EmptySegment { op, segment: g });
                    };
                    let win = &mut argmax[g * cols..(g + 1) * cols];
                    win.iter_mut().for_each(|w| *w = first);
                    let dst = out.row_mut(g);
                    dst.copy_from_slice(input.row(first));
                    for &i in &members[1..] {
                        for (c, &x) in input.row(i).iter().enumerate() {
                            if x > dst[c] || (x == dst[c] && i < win[c]) {
                                dst[c] = x;
                                win[c] = i;
                            }
                        }
                    }
                }
            }
        }
        let tracked = self.tracked(a.id);
        Ok(self.push(out, Op::Segment { a: a.id, seg, mode, argmax }, tracked))
    }

    /// Column-wise normalization over the full batch followed by the affine
    /// map `γ ⊙ x̂ + β`; `gamma` and `beta` are 1 x cols.
    pub fn batch_norm(&mut self, x: Tensor, gamma: Tensor, beta: Tensor) -> Result<Tensor, AdError> {
        if gamma.shape() != (1, x.cols) || beta.shape() != (1, x.cols) {
            return Err(shape_err(
                "batch_norm",
                format!("x {:?}, gamma {:?}, beta {:?}", x.shape(), gamma.shape(), beta.shape()),
            ));
        }
        if x.rows == 0 {
            return Err(AdError::EmptyInput { op: "batch_norm" });
        }
        let (n, c) = x.shape();
        let xv = &self.nodes[x.id].value;
        let mut mean = vec![0.0; c];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(xv.row(r)) {
                *m += *v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; c];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let inv_std: Vec<f64> = var
            .iter()
            .map(|s| 1.0 / (s / n as f64 + BATCH_NORM_EPS).sqrt())
            .collect();
        let mut xhat = Matrix::zeros(n, c);
        for r in 0..n {
            for (j, v) in xv.row(r).iter().enumerate() {
                xhat.set(r, j, (v - mean[j]) * inv_std[j]);
            }
        }
        let g = self.nodes[gamma.id].value.as_slice();
        let b = self.nodes[beta.id].value.as_slice();
        let mut out = xhat.clone();
        for r in 0..n {
            for (j, y) in out.row_mut(r).iter_mut().enumerate() {
                *y = g[j] * *y + b[j];
            }
        }
        let tracked = self.tracked(x.id) || self.tracked(gamma.id) || self.tracked(beta.id);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x: x.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
            },
            tracked,
        ))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of
    /// `logits`. Returns a 1x1 tensor.
    pub fn cross_entropy(&mut self, logits: Tensor, labels: Arc<Vec<usize>>) -> Result<Tensor, AdError> {
        if labels.len() != logits.rows {
            return Err(shape_err(
                "cross_entropy",
                format!("{} labels for {} rows", labels.len(), logits.rows),
            ));
        }
        if logits.rows == 0 {
            return Err(AdError::EmptyInput { op: "cross_entropy" });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= logits.cols) {
            return Err(AdError::IndexOutOfRange {
                op: "cross_entropy",
                index: bad,
                rows: logits.cols,
            });
        }
        let lv = &self.nodes[logits.id].value;
        let mut probs = Matrix::zeros(logits.rows, logits.cols);
        let mut nll = 0.0;
        for r in 0..logits.rows {
            let row = lv.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
            let lse = m + z.ln();
            for (p, x) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
            nll += lse - row[labels[r]];
        }
        let loss = nll / logits.rows as f64;
        let tracked = self.tracked(logits.id);
        Ok(self.push(
            Matrix::filled(1, 1, loss),
            Op::CrossEntropy {
                logits: logits.id,
                labels,
                probs,
            },
            tracked,
        ))
    }

    /// Reverse sweep from a 1x1 `loss`. Only parameter leaves receive
    /// gradients; constants are skipped.
    pub fn backward(&self, loss: Tensor) -> Result<Gradients, AdError> {
        if loss.shape() != (1, 1) {
            return Err(AdError::NonScalarLoss {
                rows: loss.rows,
                cols: loss.cols,
            });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.id + 1];
        let mut out = Gradients::default();
        if !self.nodes[loss.id].tracked {
            return Ok(out);
        }
        grads[loss.id] = Some(Matrix::filled(1, 1, 1.0));
        for id in (0..=loss.id).rev() {
            let Some(mut g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if self.fault.is_some() && node.op.kind() == self.fault {
                // Negative control: a wrong backward rule.
                g.as_mut_slice().iter_mut().for_each(|x| *x *= 0.5);
            }
            self.propagate(id, g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn send(&self, grads: &mut [Option<Matrix>], id: usize, g: Matrix) {
        if !self.nodes[id].tracked {
            return;
        }
        match &mut grads[id] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, id: usize, g: Matrix, grads: &mut [Option<Matrix>], out: &mut Gradients) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Constant => {}
            Op::Param(pid) => out.accumulate(*pid, g),
            &Op::MatMul { a, b, trans_b } => {
                let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                if self.tracked(a) {
                    // C = A·B  -> dA = G·Bᵀ ; C = A·Bᵀ -> dA = G·B
                    self.send(grads, a, gemm(&g, false, vb, !trans_b));
                }
                if self.tracked(b) {
                    let gb = if trans_b {
                        gemm(&g, true, va, false)
                    } else {
                        gemm(va, true, &g, false)
                    };
                    self.send(grads, b, gb);
                }
            }
            &Op::Add(a, b) => {
                if self.tracked(b) {
                    self.send(grads, b, g.clone());
                }
                self.send(grads, a, g);
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                if self.tracked(a) {
                    let mut ga = g.clone();
                    ga.as_mut_slice().iter_mut().zip(vb.as_slice()).for_each(|(x, y)| *x *= y);
                    self.send(grads, a, ga);
                }
                if self.tracked(b) {
                    let mut gb = g;
                    gb.as_mut_slice().iter_mut().zip(va.as_slice()).for_each(|(x, y)| *x *= y);
                    self.send(grads, b, gb);
                }
            }
            &Op::AddRow { a, bias } => {
                if self.tracked(bias) {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (s, x) in gb.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *s += *x;
                        }
                    }
                    self.send(grads, bias, gb);
                }
                self.send(grads, a, g);
            }
            &Op::Scale { a, c } => self.send(grads, a, g.map(|x| c * x)),
            Op::ScaleRows { a, weights } => {
                let mut ga = g;
                for (r, &w) in weights.iter().enumerate() {
                    ga.row_mut(r).iter_mut().for_each(|x| *x *= w);
                }
                self.send(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = self.nodes[p].value.cols();
                    if self.tracked(p) {
                        let mut gp = Matrix::zeros(g.rows(), pc);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + pc]);
                        }
                        self.send(grads, p, gp);
                    }
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (pr, pc) = self.nodes[p].value.shape();
                    if self.tracked(p) {
                        let slice = g.as_slice()[off * pc..(off + pr) * pc].to_vec();
                        self.send(grads, p, Matrix::from_vec(pr, pc, slice).expect("row slice"));
                    }
                    off += pr;
                }
            }
            &Op::Tanh(a) => {
                let mut ga = g;
                ga.as_mut_slice()
                    .iter_mut()
                    .zip(node.value.as_slice())
                    .for_each(|(x, y)| *x *= 1.0 - y * y);
                self.send(grads, a, ga);
            }
            &Op::Logistic(a) => {
                let mut ga = g;
                ga.as_mut_slice()
                    .iter_mut()
                    .zip(node.value.as_slice())
                    .for_each(|(x, s)| *x *= s * (1.0 - s));
                self.send(grads, a, ga);
            }
            &Op::LogSigmoid(a) => {
                let mut ga = g;
                ga.as_mut_slice()
                    .iter_mut()
                    .zip(self.nodes[a].value.as_slice())
                    .for_each(|(x, &z)| *x *= logistic(-z));
                self.send(grads, a, ga);
            }
            &Op::MeanAll(a) => {
                let (r, c) = self.nodes[a].value.shape();
                let v = g.as_slice()[0] / (r * c) as f64;
                self.send(grads, a, Matrix::filled(r, c, v));
            }
            Op::RowGather { a, idx } => {
                let (r, c) = self.nodes[*a].value.shape();
                let mut ga = Matrix::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    for (d, s) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *d += *s;
                    }
                }
                self.send(grads, *a, ga);
            }
            Op::Segment { a, seg, mode, argmax } => {
                let (r, c) = self.nodes[*a].value.shape();
                let mut ga = Matrix::zeros(r, c);
                match mode {
                    Reduce::Sum | Reduce::Mean => {
                        for grp in 0..seg.num_groups() {
                            let members = seg.group(grp);
                            let w = if *mode == Reduce::Mean {
                                1.0 / members.len() as f64
                            } else {
                                1.0
                            };
                            for &i in members {
                                for (d, s) in ga.row_mut(i).iter_mut().zip(g.row(grp)) {
                                    *d += w * *s;
                                }
                            }
                        }
                    }
                    Reduce::Max => {
                        for grp in 0..seg.num_groups() {
                            for col in 0..c {
                                let i = argmax[grp * c + col];
                                let cur = ga.get(i, col);
                                ga.set(i, col, cur + g.get(grp, col));
                            }
                        }
                    }
                }
                self.send(grads, *a, ga);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (n, c) = xhat.shape();
                let gv = self.nodes[*gamma].value.as_slice();
                let mut dgamma = Matrix::zeros(1, c);
                let mut dbeta = Matrix::zeros(1, c);
                let mut sum_dxhat = vec![0.0; c];
                let mut sum_dxhat_xhat = vec![0.0; c];
                for r in 0..n {
                    for j in 0..c {
                        let dy = g.get(r, j);
                        let xh = xhat.get(r, j);
                        dgamma.as_mut_slice()[j] += dy * xh;
                        dbeta.as_mut_slice()[j] += dy;
                        let dxh = dy * gv[j];
                        sum_dxhat[j] += dxh;
                        sum_dxhat_xhat[j] += dxh * xh;
                    }
                }
                if self.tracked(*x) {
                    let nf = n as f64;
                    let mut dx = Matrix::zeros(n, c);
                    for r in 0..n {
                        for j in 0..c {
                            let dxh = g.get(r, j) * gv[j];
                            let v = inv_std[j] / nf
                                * (nf * dxh - sum_dxhat[j] - xhat.get(r, j) * sum_dxhat_xhat[j]);
                            dx.set(r, j, v);
                        }
                    }
                    self.send(grads, *x, dx);
                }
                self.send(grads, *gamma, dgamma);
                self.send(grads, *beta, dbeta);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let n = probs.rows() as f64;
                let scale = g.as_slice()[0] / n;
                let mut gl = probs.clone();
                for (r, &y) in labels.iter().enumerate() {
                    let cur = gl.get(r, y);
                    gl.set(r, y, cur - 1.0);
                }
                gl.as_mut_slice().iter_mut().for_each(|x| *x *= scale);
                self.send(grads, *logits, gl);
            }
        }
    }
}
