//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every executed operation in order. Operations return
//! lightweight [`Var`] handles; [`Graph::backward`] walks the tape once in
//! reverse and accumulates adjoints. Graphs are rebuilt per example and are
//! never shared across threads.

use std::sync::atomic::{AtomicU32, Ordering};

use super::tensor::{log_add_exp, Tensor};
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a node of one particular [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u32,
    index: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    PairSum(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Pick(Var, usize),
    Sum(Var),
    LogSoftmaxRows(Var),
    SoftmaxRows(Var),
    LogSumExpRows(Var),
    Transducer(Box<TransducerTape>),
}

#[derive(Debug)]
struct TransducerTape {
    grid: Var,
    frames: usize,
    labels: Vec<usize>,
    blank: usize,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    log_likelihood: f64,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Execution record for one forward pass.
#[derive(Debug)]
pub struct Graph {
    id: u32,
    nodes: Vec<Node>,
    record: bool,
    adjoints: Vec<Option<Vec<f64>>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// A recording graph that supports [`Graph::backward`].
    pub fn new() -> Self {
        Self::with_recording(true)
    }

    /// A value-only graph: same kernels, no tape.
    pub fn inference() -> Self {
        Self::with_recording(false)
    }

    fn with_recording(record: bool) -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            record,
            adjoints: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<&Node> {
        if v.graph != self.id {
            return Err(Error::ForeignVar);
        }
        self.nodes.get(v.index()).ok_or(Error::ForeignVar)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        debug_assert_eq!(v.graph, self.id, "var from another graph");
        &self.nodes[v.index()].value
    }

    pub fn try_value(&self, v: Var) -> Result<&Tensor> {
        self.check(v).map(|n| &n.value)
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.try_value(v)?.as_scalar()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let needs_grad = self.record && inputs.iter().any(|v| self.nodes[v.index()].needs_grad);
        let op = if needs_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var {
            graph: self.id,
            index: (self.nodes.len() - 1) as u32,
        })
    }

    fn leaf(&mut self, value: Tensor, needs_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: needs_grad && self.record,
        });
        Ok(Var {
            graph: self.id,
            index: (self.nodes.len() - 1) as u32,
        })
    }

    /// A differentiable input.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        self.check(v)?.value.dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.check(a)?.value.matmul(&self.check(b)?.value)?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.check(a)?.value.transpose()?;
        self.push("transpose", out, Op::Transpose(a), &[a])
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (&self.check(a)?.value, &self.check(b)?.value);
        if ta.dims2()? != tb.dims2()? {
            return Err(Error::shape(op, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let (r, c) = ta.dims2()?;
        Tensor::matrix(r, c, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.map(a, |x| x * c)?;
        self.push("scale", out, Op::Scale(a, c), &[a])
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let t = &self.check(a)?.value;
        let (r, c) = t.dims2()?;
        Tensor::matrix(r, c, t.data().iter().map(|x| f(*x)).collect())
    }

    /// `m[r×c] + row[1×c]` broadcast over rows.
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let (r, c) = self.dims(m)?;
        if self.dims(row)? != (1, c) {
            return Err(Error::shape("add_row", format!("{r}x{c} + {:?}", self.dims(row)?)));
        }
        let (tm, tr) = (&self.nodes[m.index()].value, &self.nodes[row.index()].value);
        let mut data = tm.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += tr.data()[j];
            }
        }
        let out = Tensor::matrix(r, c, data)?;
        self.push("add_row", out, Op::AddRow(m, row), &[m, row])
    }

    /// All pairwise row sums: row `i·rb + j` of the result is `a[i] + b[j]`.
    pub fn pair_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, c) = self.dims(a)?;
        let (rb, cb) = self.dims(b)?;
        if c != cb {
            return Err(Error::shape("pair_sum", format!("{c} vs {cb} columns")));
        }
        let (ta, tb) = (&self.nodes[a.index()].value, &self.nodes[b.index()].value);
        let mut data = Vec::with_capacity(ra * rb * c);
        for i in 0..ra {
            let arow = ta.row_slice(i);
            for j in 0..rb {
                data.extend(arow.iter().zip(tb.row_slice(j)).map(|(x, y)| x + y));
            }
        }
        let out = Tensor::matrix(ra * rb, c, data)?;
        self.push("pair_sum", out, Op::PairSum(a, b), &[a, b])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, f64::tanh)?;
        self.push("tanh", out, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, sigmoid)?;
        self.push("sigmoid", out, Op::Sigmoid(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, f64::exp)?;
        self.push("exp", out, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, f64::ln)?;
        self.push("log", out, Op::Log(a), &[a])
    }

    /// Horizontal concatenation of equal-height matrices.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptyInput("concat_cols"))?;
        let rows = self.dims(first)?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p)?;
            if r != rows {
                return Err(Error::shape("concat_cols", format!("{r} vs {rows} rows")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.nodes[p.index()].value.row_slice(i));
            }
        }
        let out = Tensor::matrix(rows, total, data)?;
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Vertical stacking of equal-width matrices.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptyInput("concat_rows"))?;
        let cols = self.dims(first)?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.dims(p)?;
            if c != cols {
                return Err(Error::shape("concat_rows", format!("{c} vs {cols} columns")));
            }
            rows += r;
            data.extend_from_slice(self.nodes[p.index()].value.data());
        }
        let out = Tensor::matrix(rows, cols, data)?;
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        if len == 0 || start + len > c {
            return Err(Error::shape("slice_cols", format!("{start}+{len} of {c}")));
        }
        let t = &self.nodes[a.index()].value;
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&t.row_slice(i)[start..start + len]);
        }
        let out = Tensor::matrix(r, len, data)?;
        self.push("slice_cols", out, Op::SliceCols(a, start), &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        if len == 0 || start + len > r {
            return Err(Error::shape("slice_rows", format!("{start}+{len} of {r}")));
        }
        let data = self.nodes[a.index()].value.data()[start * c..(start + len) * c].to_vec();
        let out = Tensor::matrix(len, c, data)?;
        self.push("slice_rows", out, Op::SliceRows(a, start), &[a])
    }

    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        self.slice_rows(a, r, 1)
    }

    /// Single element as a `1 × 1` scalar.
    pub fn pick(&mut self, a: Var, r: usize, c: usize) -> Result<Var> {
        let (rows, cols) = self.dims(a)?;
        if r >= rows || c >= cols {
            return Err(Error::shape("pick", format!("({r},{c}) of {rows}x{cols}")));
        }
        let flat = r * cols + c;
        let out = Tensor::scalar(self.nodes[a.index()].value.data()[flat]);
        self.push("pick", out, Op::Pick(a, flat), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.check(a)?.value.data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    fn rowwise(&self, a: Var, f: impl Fn(&[f64]) -> Result<Vec<f64>>) -> Result<Tensor> {
        let t = &self.check(a)?.value;
        let (r, c) = t.dims2()?;
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            data.extend(f(t.row_slice(i))?);
        }
        Tensor::matrix(r, c, data)
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let out = self.rowwise(a, super::tensor::log_softmax)?;
        self.push("log_softmax", out, Op::LogSoftmaxRows(a), &[a])
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = self.rowwise(a, super::tensor::softmax)?;
        self.push("softmax", out, Op::SoftmaxRows(a), &[a])
    }

    /// Per-row log-sum-exp, giving an `r × 1` column.
    pub fn logsumexp(&mut self, a: Var) -> Result<Var> {
        let t = &self.check(a)?.value;
        let (r, _) = t.dims2()?;
        let mut data = Vec::with_capacity(r);
        for i in 0..r {
            data.push(super::tensor::logsumexp(t.row_slice(i))?);
        }
        let out = Tensor::matrix(r, 1, data)?;
        self.push("logsumexp", out, Op::LogSumExpRows(a), &[a])
    }

    /// Negative log-likelihood of `labels` under a transducer lattice.
    ///
    /// `grid` holds normalized log-probabilities with row `t·(U+1) + u` for
    /// frame `t` after `u` emitted labels. The forward variables give the
    /// value; the backward variables are kept on the tape for the gradient.
    pub fn transducer_nll(&mut self, grid: Var, frames: usize, labels: &[usize], blank: usize) -> Result<Var> {
        let (rows, vocab) = self.dims(grid)?;
        let width = labels.len() + 1;
        if frames == 0 || rows != frames * width {
            return Err(Error::shape(
                "transducer_nll",
                format!("{rows} rows for {frames} frames x {width} label states"),
            ));
        }
        if blank >= vocab || labels.iter().any(|&l| l >= vocab) {
            return Err(Error::shape("transducer_nll", "label outside vocabulary"));
        }
        let lp = self.nodes[grid.index()].value.data();
        let at = |t: usize, u: usize, k: usize| lp[(t * width + u) * vocab + k];
        let mut alpha = vec![f64::NEG_INFINITY; frames * width];
        for t in 0..frames {
            for u in 0..width {
                let a = if t == 0 && u == 0 {
                    0.0
                } else {
                    let from_blank = if t > 0 {
                        alpha[(t - 1) * width + u] + at(t - 1, u, blank)
                    } else {
                        f64::NEG_INFINITY
                    };
                    let from_label = if u > 0 {
                        alpha[t * width + u - 1] + at(t, u - 1, labels[u - 1])
                    } else {
                        f64::NEG_INFINITY
                    };
                    log_add_exp(from_blank, from_label)
                };
                alpha[t * width + u] = a;
            }
        }
        let last = frames - 1;
        let log_likelihood = alpha[last * width + width - 1] + at(last, width - 1, blank);
        let mut beta = vec![f64::NEG_INFINITY; frames * width];
        for t in (0..frames).rev() {
            for u in (0..width).rev() {
                let b = if t == last && u == width - 1 {
                    at(t, u, blank)
                } else {
                    let via_blank = if t < last {
                        beta[(t + 1) * width + u] + at(t, u, blank)
                    } else {
                        f64::NEG_INFINITY
                    };
                    let via_label = if u < width - 1 {
                        beta[t * width + u + 1] + at(t, u, labels[u])
                    } else {
                        f64::NEG_INFINITY
                    };
                    log_add_exp(via_blank, via_label)
                };
                beta[t * width + u] = b;
            }
        }
        let tape = TransducerTape {
            grid,
            frames,
            labels: labels.to_vec(),
            blank,
            alpha,
            beta,
            log_likelihood,
        };
        self.push(
            "transducer_nll",
            Tensor::scalar(-log_likelihood),
            Op::Transducer(Box::new(tape)),
            &[grid],
        )
    }

    /// Reverse sweep from a scalar `loss`, populating adjoints.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let node = self.check(loss)?;
        if node.value.len() != 1 {
            return Err(Error::NotScalar(node.value.shape().to_vec()));
        }
        if !self.record {
            return Err(Error::InvalidArgument("backward on a non-recording graph".into()));
        }
        let end = loss.index();
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[end] = Some(vec![1.0]);
        for i in (0..=end).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(i, &g, &mut adj)?;
            }
            adj[i] = Some(g);
        }
        self.adjoints = adj;
        Ok(())
    }

    /// Adjoint recorded by the last [`Graph::backward`], if the node was reached.
    pub fn adjoint(&self, v: Var) -> Option<Tensor> {
        let node = self.check(v).ok()?;
        let g = self.adjoints.get(v.index())?.as_ref()?;
        Tensor::new(node.value.shape().to_vec(), g.clone()).ok()
    }

    /// Like [`Graph::adjoint`] but zeros for nodes the sweep never reached.
    pub fn adjoint_or_zero(&self, v: Var) -> Tensor {
        self.adjoint(v).unwrap_or_else(|| {
            let t = self.value(v);
            Tensor::zeros(t.shape()).expect("valid shape")
        })
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) -> Result<()> {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.index()].value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &nodes[v.index()];
            if !n.needs_grad {
                return;
            }
            let slot = adj[v.index()].get_or_insert_with(|| vec![0.0; n.value.len()]);
            f(slot);
        };
        let y = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2()?;
                let n = val(*b).cols();
                let (av, bv) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |s| {
                    for r in 0..m {
                        for p in 0..k {
                            let mut d = 0.0;
                            for j in 0..n {
                                d += g[r * n + j] * bv[p * n + j];
                            }
                            s[r * k + p] += d;
                        }
                    }
                });
                acc(*b, &mut |s| {
                    for r in 0..m {
                        for p in 0..k {
                            let x = av[r * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                s[p * n + j] += x * g[r * n + j];
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (r, c) = val(*a).dims2()?;
                acc(*a, &mut |s| {
                    for p in 0..r {
                        for q in 0..c {
                            s[p * c + q] += g[q * r + p];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, d)| *x -= d));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * bv[j];
                    }
                });
                acc(*b, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * av[j];
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, d)| *x += c * d)),
            Op::AddRow(m, row) => {
                acc(*m, &mut |s| add_into(s, g));
                let c = val(*row).len();
                acc(*row, &mut |s| {
                    for (j, d) in g.iter().enumerate() {
                        s[j % c] += d;
                    }
                });
            }
            Op::PairSum(a, b) => {
                let (ra, c) = val(*a).dims2()?;
                let rb = val(*b).rows();
                acc(*a, &mut |s| {
                    for p in 0..ra {
                        for q in 0..rb {
                            let off = (p * rb + q) * c;
                            for j in 0..c {
                                s[p * c + j] += g[off + j];
                            }
                        }
                    }
                });
                acc(*b, &mut |s| {
                    for p in 0..ra {
                        for q in 0..rb {
                            let off = (p * rb + q) * c;
                            for j in 0..c {
                                s[q * c + j] += g[off + j];
                            }
                        }
                    }
                });
            }
            Op::Tanh(a) => {
                let yv = y.data();
                acc(*a, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * (1.0 - yv[j] * yv[j]);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let yv = y.data();
                acc(*a, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * yv[j] * (1.0 - yv[j]);
                    }
                });
            }
            Op::Exp(a) => {
                let yv = y.data();
                acc(*a, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * yv[j];
                    }
                });
            }
            Op::Log(a) => {
                let xv = val(*a).data();
                acc(*a, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] / xv[j];
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = y.cols();
                let mut start = 0;
                for p in parts {
                    let c = val(*p).cols();
                    acc(*p, &mut |s| {
                        for r in 0..y.rows() {
                            for j in 0..c {
                                s[r * c + j] += g[r * total + start + j];
                            }
                        }
                    });
                    start += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = val(*p).len();
                    acc(*p, &mut |s| add_into(s, &g[off..off + n]));
                    off += n;
                }
            }
            Op::SliceCols(a, start) => {
                let c = val(*a).cols();
                let len = y.cols();
                acc(*a, &mut |s| {
                    for r in 0..y.rows() {
                        for j in 0..len {
                            s[r * c + start + j] += g[r * len + j];
                        }
                    }
                });
            }
            Op::SliceRows(a, start) => {
                let c = val(*a).cols();
                acc(*a, &mut |s| add_into(&mut s[start * c..start * c + g.len()], g));
            }
            Op::Pick(a, flat) => acc(*a, &mut |s| s[*flat] += g[0]),
            Op::Sum(a) => acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0])),
            Op::LogSoftmaxRows(a) => {
                let (r, c) = y.dims2()?;
                let yv = y.data();
                acc(*a, &mut |s| {
                    for p in 0..r {
                        let gs: f64 = g[p * c..(p + 1) * c].iter().sum();
                        for j in 0..c {
                            s[p * c + j] += g[p * c + j] - yv[p * c + j].exp() * gs;
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let (r, c) = y.dims2()?;
                let yv = y.data();
                acc(*a, &mut |s| {
                    for p in 0..r {
                        let dot: f64 = (0..c).map(|j| g[p * c + j] * yv[p * c + j]).sum();
                        for j in 0..c {
                            s[p * c + j] += yv[p * c + j] * (g[p * c + j] - dot);
                        }
                    }
                });
            }
            Op::LogSumExpRows(a) => {
                let x = val(*a);
                let (r, c) = x.dims2()?;
                let (xv, yv) = (x.data(), y.data());
                acc(*a, &mut |s| {
                    for p in 0..r {
                        for j in 0..c {
                            s[p * c + j] += g[p] * (xv[p * c + j] - yv[p]).exp();
                        }
                    }
                });
            }
            Op::Transducer(tape) => {
                let grid = val(tape.grid);
                let vocab = grid.cols();
                let lp = grid.data();
                let width = tape.labels.len() + 1;
                let last = tape.frames - 1;
                let ll = tape.log_likelihood;
                acc(tape.grid, &mut |s| {
                    for t in 0..tape.frames {
                        for u in 0..width {
                            let cell = (t * width + u) * vocab;
                            let a = tape.alpha[t * width + u];
                            let next_blank = if t == last && u == width - 1 {
                                0.0
                            } else if t < last {
                                tape.beta[(t + 1) * width + u]
                            } else {
                                f64::NEG_INFINITY
                            };
                            let k = tape.blank;
                            s[cell + k] -= g[0] * (a + lp[cell + k] + next_blank - ll).exp();
                            if u < width - 1 {
                                let k = tape.labels[u];
                                let nb = tape.beta[t * width + u + 1];
                                s[cell + k] -= g[0] * (a + lp[cell + k] + nb - ll).exp();
                            }
                        }
                    }
                });
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
