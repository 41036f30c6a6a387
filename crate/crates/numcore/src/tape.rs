//! Reverse-mode automatic differentiation over a Wengert list.
//!
//! Every operation appends one node holding its forward value. Nodes only
//! reference earlier nodes, so the node vector is already in topological
//! order and `backward` is a single reverse sweep.

use crate::error::{NumError, Result};
use crate::tensor::{matmul_at_into, matmul_bt_into, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Powi(Var, u32),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Transpose(Var),
    Concat(Axis, Vec<Var>),
    Slice(Axis, Var, usize),
    Softmax(Var, Vec<bool>),
    LogSoftmax(Var, Vec<bool>),
    Pick(Var, usize),
    Sum(Var),
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Statistics computed by a training-mode batch normalisation.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance per column.
    pub var: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Tensor {
        let [r, c] = self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(r, c, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(r, c),
        }
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> NumError {
    NumError::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Smallest `|x|` over the inputs of differentiable `relu` nodes: how far
    /// the recorded point is from a kink. Infinite when there are none.
    pub fn kink_margin(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) if n.requires_grad => Some(
                    self.value(x)
                        .data()
                        .iter()
                        .fold(f64::INFINITY, |m, v| m.min(v.abs())),
                ),
                _ => None,
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable leaf (a parameter).
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out = ta.matmul(tb)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(ta.rows(), ta.cols(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the `1 x d` row `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        if tb.rows() != 1 || tb.cols() != tx.cols() {
            return Err(shape_err("add_row", tx, tb));
        }
        let d = tx.cols();
        let mut out = tx.clone();
        for row in out.data_mut().chunks_mut(d.max(1)) {
            for (o, &bv) in row.iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(out, Op::AddRow(x, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, c), rg)
    }

    /// Element-wise integer power `x^p`, `p >= 1`.
    pub fn powi(&mut self, x: Var, p: u32) -> Result<Var> {
        if p == 0 {
            return Err(NumError::ZeroPower(p));
        }
        if p == 1 {
            return Ok(x);
        }
        let out = self.value(x).map(|v| v.powi(p as i32));
        let rg = self.rg(x);
        Ok(self.push(out, Op::Powi(x, p), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        let rg = self.rg(x);
        self.push(out, Op::Tanh(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::exp);
        let rg = self.rg(x);
        self.push(out, Op::Exp(x), rg)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::ln);
        let rg = self.rg(x);
        self.push(out, Op::Log(x), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        let rg = self.rg(x);
        self.push(out, Op::Transpose(x), rg)
    }

    pub fn concat(&mut self, axis: Axis, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| NumError::Invalid("concat of zero tensors".into()))?;
        let t0 = self.value(first);
        let out = match axis {
            Axis::Cols => {
                let rows = t0.rows();
                let mut cols = 0;
                for &p in parts {
                    let t = self.value(p);
                    if t.rows() != rows {
                        return Err(shape_err("concat_cols", t0, t));
                    }
                    cols += t.cols();
                }
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(r));
                    }
                }
                Tensor::new(rows, cols, data)?
            }
            Axis::Rows => {
                let cols = t0.cols();
                let mut data = Vec::new();
                let mut rows = 0;
                for &p in parts {
                    let t = self.value(p);
                    if t.cols() != cols {
                        return Err(shape_err("concat_rows", t0, t));
                    }
                    rows += t.rows();
                    data.extend_from_slice(t.data());
                }
                Tensor::new(rows, cols, data)?
            }
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::Concat(axis, parts.to_vec()), rg))
    }

    /// Rows or columns `start..end` of `x`.
    pub fn slice(&mut self, axis: Axis, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        let limit = match axis {
            Axis::Rows => t.rows(),
            Axis::Cols => t.cols(),
        };
        if start > end || end > limit {
            return Err(NumError::Invalid(format!(
                "slice {start}..{end} out of bounds for shape {:?}",
                t.shape()
            )));
        }
        let out = match axis {
            Axis::Rows => {
                let c = t.cols();
                Tensor::new(end - start, c, t.data()[start * c..end * c].to_vec())?
            }
            Axis::Cols => {
                let mut data = Vec::with_capacity(t.rows() * (end - start));
                for r in 0..t.rows() {
                    data.extend_from_slice(&t.row_slice(r)[start..end]);
                }
                Tensor::new(t.rows(), end - start, data)?
            }
        };
        let rg = self.rg(x);
        Ok(self.push(out, Op::Slice(axis, x, start), rg))
    }

    fn check_mask(&self, x: Var, mask: &[bool], name: &'static str) -> Result<()> {
        let t = self.value(x);
        if t.rows() != 1 || mask.len() != t.cols() {
            return Err(NumError::Shape {
                op: name,
                left: t.shape(),
                right: [1, mask.len()],
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(NumError::NoFeasibleAction);
        }
        Ok(())
    }

    /// Softmax of a `1 x n` row restricted to entries where `mask` is true.
    /// Masked entries are exactly zero.
    pub fn softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        self.check_mask(x, mask, "softmax")?;
        let out = Tensor::row(masked_softmax(self.value(x).data(), mask));
        let rg = self.rg(x);
        Ok(self.push(out, Op::Softmax(x, mask.to_vec()), rg))
    }

    /// Log-softmax of a `1 x n` row over entries where `mask` is true;
    /// masked entries hold `-inf` and receive no gradient.
    pub fn log_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        self.check_mask(x, mask, "log_softmax")?;
        let xs = self.value(x).data();
        let max = max_unmasked(xs, mask);
        let lse = max
            + xs.iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(&v, _)| (v - max).exp())
                .sum::<f64>()
                .ln();
        let data = xs
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { v - lse } else { f64::NEG_INFINITY })
            .collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::row(data), Op::LogSoftmax(x, mask.to_vec()), rg))
    }

    /// Single entry (row-major flat index) as a `1 x 1` tensor.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let t = self.value(x);
        if index >= t.len() {
            return Err(NumError::Invalid(format!(
                "pick index {index} out of bounds for shape {:?}",
                t.shape()
            )));
        }
        let out = Tensor::scalar(t.data()[index]);
        let rg = self.rg(x);
        Ok(self.push(out, Op::Pick(x, index), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).data().iter().sum());
        let rg = self.rg(x);
        self.push(out, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// `x W + b` with `W: d_in x d_out` and `b: 1 x d_out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    fn check_norm_shapes(&self, x: Var, gamma: Var, beta: Var) -> Result<()> {
        let tx = self.value(x);
        for p in [gamma, beta] {
            let tp = self.value(p);
            if tp.shape() != [1, tx.cols()] {
                return Err(shape_err("batch_norm", tx, tp));
            }
        }
        Ok(())
    }

    /// Batch normalisation using the statistics of the rows of `x`.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        self.check_norm_shapes(x, gamma, beta)?;
        let tx = self.value(x);
        let (n, d) = (tx.rows(), tx.cols());
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, &v) in mean.iter_mut().zip(tx.row_slice(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in 0..n {
            for ((s, &v), &m) in var.iter_mut().zip(tx.row_slice(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let v = self.push_norm(x, gamma, beta, &mean, inv_std, true)?;
        Ok((v, BatchStats { mean, var }))
    }

    /// Batch normalisation with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        self.check_norm_shapes(x, gamma, beta)?;
        let d = self.value(x).cols();
        if mean.len() != d || var.len() != d {
            return Err(NumError::Invalid(format!(
                "running statistics have width {} but input has {d}",
                mean.len()
            )));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.push_norm(x, gamma, beta, mean, inv_std, false)
    }

    fn push_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: Vec<f64>,
        batch_stats: bool,
    ) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let (n, d) = (tx.rows(), tx.cols());
        let mut xhat = Vec::with_capacity(n * d);
        let mut out = Vec::with_capacity(n * d);
        for r in 0..n {
            for (j, &v) in tx.row_slice(r).iter().enumerate() {
                let h = (v - mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(tg.data()[j] * h + tb.data()[j]);
            }
        }
        let out = Tensor::new(n, d, out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        ))
    }

    /// Reverse sweep from the `1 x 1` node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != [1, 1] {
            return Err(NumError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(node, &g, &mut grads);
            // Keep interior gradients available for inspection.
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn backprop(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let gt = Tensor::new(out.rows(), out.cols(), g.to_vec()).expect("grad shape");
                if self.rg(*a) {
                    let acc = slot(grads, *a, ta.len());
                    matmul_bt_into(&gt, tb, acc);
                }
                if self.rg(*b) {
                    let acc = slot(grads, *b, tb.len());
                    matmul_at_into(ta, &gt, acc);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.iter().copied());
                self.accumulate(grads, *b, g.iter().copied());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.iter().copied());
                self.accumulate(grads, *b, g.iter().map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, g.iter().zip(tb.data()).map(|(g, y)| g * y));
                self.accumulate(grads, *b, g.iter().zip(ta.data()).map(|(g, x)| g * x));
            }
            Op::AddRow(x, b) => {
                self.accumulate(grads, *x, g.iter().copied());
                if self.rg(*b) {
                    let d = out.cols();
                    let acc = slot(grads, *b, d);
                    for row in g.chunks(d.max(1)) {
                        for (a, &v) in acc.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                }
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, g.iter().map(|v| v * c)),
            Op::Powi(x, p) => {
                let tx = self.value(*x);
                let p = *p;
                self.accumulate(
                    grads,
                    *x,
                    g.iter()
                        .zip(tx.data())
                        .map(|(g, &v)| g * p as f64 * v.powi(p as i32 - 1)),
                );
            }
            Op::Relu(x) => {
                let tx = self.value(*x);
                self.accumulate(
                    grads,
                    *x,
                    g.iter()
                        .zip(tx.data())
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }),
                );
            }
            Op::Tanh(x) => self.accumulate(
                grads,
                *x,
                g.iter().zip(out.data()).map(|(g, y)| g * (1.0 - y * y)),
            ),
            Op::Exp(x) => self.accumulate(grads, *x, g.iter().zip(out.data()).map(|(g, y)| g * y)),
            Op::Log(x) => {
                let tx = self.value(*x);
                self.accumulate(grads, *x, g.iter().zip(tx.data()).map(|(g, v)| g / v));
            }
            Op::Transpose(x) => {
                let gt = Tensor::new(out.rows(), out.cols(), g.to_vec()).expect("grad shape");
                self.accumulate(grads, *x, gt.transpose().into_data().into_iter());
            }
            Op::Concat(axis, parts) => match axis {
                Axis::Rows => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        self.accumulate(grads, p, g[offset..offset + len].iter().copied());
                        offset += len;
                    }
                }
                Axis::Cols => {
                    let total = out.cols();
                    let mut col = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        if self.rg(p) {
                            let acc = slot(grads, p, out.rows() * w);
                            for r in 0..out.rows() {
                                let src = &g[r * total + col..r * total + col + w];
                                for (a, &v) in acc[r * w..(r + 1) * w].iter_mut().zip(src) {
                                    *a += v;
                                }
                            }
                        }
                        col += w;
                    }
                }
            },
            Op::Slice(axis, x, start) => {
                if !self.rg(*x) {
                    return;
                }
                let tx = self.value(*x);
                let acc = slot(grads, *x, tx.len());
                match axis {
                    Axis::Rows => {
                        let off = start * tx.cols();
                        for (a, &v) in acc[off..off + g.len()].iter_mut().zip(g) {
                            *a += v;
                        }
                    }
                    Axis::Cols => {
                        let w = out.cols();
                        let c = tx.cols();
                        for r in 0..out.rows() {
                            let dst = &mut acc[r * c + start..r * c + start + w];
                            for (a, &v) in dst.iter_mut().zip(&g[r * w..(r + 1) * w]) {
                                *a += v;
                            }
                        }
                    }
                }
            }
            Op::Softmax(x, mask) => {
                let y = out.data();
                let dot: f64 = y.iter().zip(g).map(|(y, g)| y * g).sum();
                self.accumulate(
                    grads,
                    *x,
                    y.iter()
                        .zip(g)
                        .zip(mask)
                        .map(|((y, g), &m)| if m { y * (g - dot) } else { 0.0 }),
                );
            }
            Op::LogSoftmax(x, mask) => {
                let y = out.data();
                let gsum: f64 = g.iter().zip(mask).filter(|(_, &m)| m).map(|(g, _)| g).sum();
                self.accumulate(
                    grads,
                    *x,
                    y.iter().zip(g).zip(mask).map(
                        |((y, g), &m)| {
                            if m {
                                g - y.exp() * gsum
                            } else {
                                0.0
                            }
                        },
                    ),
                );
            }
            Op::Pick(x, idx) => {
                if self.rg(*x) {
                    let len = self.value(*x).len();
                    slot(grads, *x, len)[*idx] += g[0];
                }
            }
            Op::Sum(x) => {
                let len = self.value(*x).len();
                self.accumulate(grads, *x, std::iter::repeat_n(g[0], len));
            }
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let d = out.cols();
                let n = out.rows();
                let tg = self.value(*gamma).data();
                if self.rg(*gamma) {
                    let acc = slot(grads, *gamma, d);
                    for r in 0..n {
                        for j in 0..d {
                            acc[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if self.rg(*beta) {
                    let acc = slot(grads, *beta, d);
                    for r in 0..n {
                        for j in 0..d {
                            acc[j] += g[r * d + j];
                        }
                    }
                }
                if self.rg(*x) {
                    let mut dx = vec![0.0; n * d];
                    if *batch_stats {
                        // dx = inv_std / n * (n*dxh - sum(dxh) - xhat*sum(dxh*xhat))
                        for j in 0..d {
                            let mut s1 = 0.0;
                            let mut s2 = 0.0;
                            for r in 0..n {
                                let dxh = g[r * d + j] * tg[j];
                                s1 += dxh;
                                s2 += dxh * xhat[r * d + j];
                            }
                            let nf = n as f64;
                            for r in 0..n {
                                let dxh = g[r * d + j] * tg[j];
                                dx[r * d + j] =
                                    inv_std[j] / nf * (nf * dxh - s1 - xhat[r * d + j] * s2);
                            }
                        }
                    } else {
                        for r in 0..n {
                            for j in 0..d {
                                dx[r * d + j] = g[r * d + j] * tg[j] * inv_std[j];
                            }
                        }
                    }
                    self.accumulate(grads, *x, dx.into_iter());
                }
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: impl Iterator<Item = f64>) {
        if !self.rg(v) {
            return;
        }
        let len = self.value(v).len();
        let acc = slot(grads, v, len);
        for (a, x) in acc.iter_mut().zip(g) {
            *a += x;
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn max_unmasked(xs: &[f64], mask: &[bool]) -> f64 {
    xs.iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Max-shifted softmax over the unmasked entries; masked entries are 0.
pub fn masked_softmax(xs: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = max_unmasked(xs, mask);
    let mut out: Vec<f64> = xs
        .iter()
        .zip(mask)
        .map(|(&v, &m)| if m { (v - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    out
}
