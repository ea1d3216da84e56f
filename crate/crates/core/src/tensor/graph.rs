//! Recording graph for reverse-mode differentiation.
//!
//! Every op appends a node holding its output value and enough context for
//! its local gradient. Node inputs always have smaller indices than the node
//! itself, so a single reverse sweep over the node list is a valid
//! topological traversal and visits each record once.

use super::array::Tensor;
use super::kernels::{logsumexp, matmul, matmul_nt, matmul_tn, sigmoid, softmax_into};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Square(Var),
    MatMul(Var, Var),
    Softmax {
        x: Var,
        inner: usize,
        len: usize,
    },
    LogSumExpRows(Var),
    RmsNorm {
        x: Var,
        gain: Var,
        eps: f64,
    },
    SwiGlu(Var, Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        n_heads: usize,
        seq_len: usize,
        probs: Vec<f64>,
    },
    Rope {
        x: Var,
        n_heads: usize,
        seq_len: usize,
        base: f64,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    ScatterRows {
        x: Var,
        rows: Vec<usize>,
    },
    Pick {
        x: Var,
        cells: Vec<(usize, usize)>,
    },
    ScaleRows {
        x: Var,
        w: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn expect_rank2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(op, format!("expected a matrix, got shape {s:?}"))),
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = Tensor::from_op("add", x.shape().to_vec(), data)?;
        Ok(self.push(Op::Add(a, b), out, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::from_op("mul", x.shape().to_vec(), data)?;
        Ok(self.push(Op::Mul(a, b), out, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let x = self.value(a);
        let data = x.data().iter().map(|p| p * c).collect();
        let out = Tensor::from_op("scale", x.shape().to_vec(), data)?;
        Ok(self.push(Op::Scale(a, c), out, &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let out = Tensor::from_op("sum", vec![1], vec![s])?;
        Ok(self.push(Op::Sum(a), out, &[a]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let s = x.data().iter().sum::<f64>() / x.len() as f64;
        let out = Tensor::from_op("mean", vec![1], vec![s])?;
        Ok(self.push(Op::Mean(a), out, &[a]))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let data = x.data().iter().map(|p| p * p).collect();
        let out = Tensor::from_op("square", x.shape().to_vec(), data)?;
        Ok(self.push(Op::Square(a), out, &[a]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = expect_rank2("matmul", self.value(a))?;
        let (k2, n) = expect_rank2("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner extents differ: {m}x{k} · {k2}x{n}"),
            ));
        }
        let data = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = Tensor::from_op("matmul", vec![m, n], data)?;
        Ok(self.push(Op::MatMul(a, b), out, &[a, b]))
    }

    /// Softmax along `axis`, max-subtracted.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(
                "softmax",
                format!("axis {axis} out of range for shape {shape:?}"),
            ));
        }
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut data = vec![0.0; x.len()];
        let mut lane = vec![0.0; len];
        let mut res = vec![0.0; len];
        for o in 0..outer {
            for n in 0..inner {
                for i in 0..len {
                    lane[i] = x.data()[(o * len + i) * inner + n];
                }
                softmax_into(&lane, &mut res);
                for i in 0..len {
                    data[(o * len + i) * inner + n] = res[i];
                }
            }
        }
        let out = Tensor::from_op("softmax", shape, data)?;
        Ok(self.push(Op::Softmax { x: a, inner, len }, out, &[a]))
    }

    /// Row-wise log-sum-exp over the last axis; output has one entry per row.
    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let data: Vec<f64> = (0..x.rows()).map(|r| logsumexp(x.row(r))).collect();
        let out = Tensor::from_op("logsumexp", vec![data.len()], data)?;
        Ok(self.push(Op::LogSumExpRows(a), out, &[a]))
    }

    /// `x / sqrt(mean(x²) + eps) * gain` over the last axis.
    pub fn rms_norm(&mut self, a: Var, gain: Var, eps: f64) -> Result<Var> {
        let x = self.value(a);
        let g = self.value(gain);
        let c = x.cols();
        if g.shape() != [c] {
            return Err(Error::shape(
                "rms_norm",
                format!("gain shape {:?}, last extent {c}", g.shape()),
            ));
        }
        let mut data = vec![0.0; x.len()];
        for r in 0..x.rows() {
            let row = x.row(r);
            let inv = 1.0 / (row.iter().map(|v| v * v).sum::<f64>() / c as f64 + eps).sqrt();
            for j in 0..c {
                data[r * c + j] = row[j] * inv * g.data()[j];
            }
        }
        let out = Tensor::from_op("rms_norm", x.shape().to_vec(), data)?;
        Ok(self.push(Op::RmsNorm { x: a, gain, eps }, out, &[a, gain]))
    }

    /// Gated linear unit with SiLU gate: `silu(gate) ⊙ up`.
    pub fn swiglu(&mut self, gate: Var, up: Var) -> Result<Var> {
        let (a, b) = (self.value(gate), self.value(up));
        same_shape("swiglu", a, b)?;
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| x * sigmoid(x) * y)
            .collect();
        let out = Tensor::from_op("swiglu", a.shape().to_vec(), data)?;
        Ok(self.push(Op::SwiGlu(gate, up), out, &[gate, up]))
    }

    /// Row lookup `table[ids[i]]`; the gradient scatter-adds into the table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, h) = expect_rank2("embedding", self.value(table))?;
        if ids.is_empty() {
            return Err(Error::shape("embedding", "no ids"));
        }
        let mut data = Vec::with_capacity(ids.len() * h);
        for &id in ids {
            if id >= v {
                return Err(Error::index(
                    "embedding",
                    format!("token id {id} >= vocab size {v}"),
                ));
            }
            data.extend_from_slice(self.value(table).row(id));
        }
        let out = Tensor::from_op("embedding", vec![ids.len(), h], data)?;
        Ok(self.push(
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            out,
            &[table],
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits` (log-sum-exp form).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (t, v) = expect_rank2("cross_entropy", self.value(logits))?;
        if targets.len() != t {
            return Err(Error::shape(
                "cross_entropy",
                format!("{t} rows but {} targets", targets.len()),
            ));
        }
        let x = self.value(logits);
        let mut total = 0.0;
        for (r, &target) in targets.iter().enumerate() {
            if target >= v {
                return Err(Error::index(
                    "cross_entropy",
                    format!("target id {target} >= vocab size {v}"),
                ));
            }
            let row = x.row(r);
            total += logsumexp(row) - row[target];
        }
        let out = Tensor::from_op("cross_entropy", vec![1], vec![total / t as f64])?;
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            out,
            &[logits],
        ))
    }

    /// Multi-head causal scaled-dot-product attention.
    ///
    /// `q`, `k`, `v` are `[n_seq·seq_len × hidden]` with sequences stacked
    /// along rows; tokens attend only to earlier positions of their own
    /// sequence. Heads are contiguous column blocks of width
    /// `hidden / n_heads`.
    pub fn causal_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        n_heads: usize,
        seq_len: usize,
    ) -> Result<Var> {
        let (rows, hidden) = expect_rank2("attention", self.value(q))?;
        same_shape("attention", self.value(q), self.value(k))?;
        same_shape("attention", self.value(q), self.value(v))?;
        if n_heads == 0 || hidden % n_heads != 0 {
            return Err(Error::shape(
                "attention",
                format!("hidden {hidden} not divisible by {n_heads} heads"),
            ));
        }
        if seq_len == 0 || rows % seq_len != 0 {
            return Err(Error::shape(
                "attention",
                format!("{rows} rows not a multiple of seq_len {seq_len}"),
            ));
        }
        let dh = hidden / n_heads;
        let blocks = rows / seq_len;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut probs = vec![0.0; blocks * n_heads * seq_len * seq_len];
        let mut out = vec![0.0; rows * hidden];
        let mut scores = vec![0.0; seq_len];
        for b in 0..blocks {
            for h in 0..n_heads {
                let col = h * dh;
                for i in 0..seq_len {
                    let ri = b * seq_len + i;
                    let qi = &qd[ri * hidden + col..ri * hidden + col + dh];
                    for j in 0..=i {
                        let rj = b * seq_len + j;
                        let kj = &kd[rj * hidden + col..rj * hidden + col + dh];
                        scores[j] = qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale;
                    }
                    let base = ((b * n_heads + h) * seq_len + i) * seq_len;
                    softmax_into(&scores[..=i], &mut probs[base..base + i + 1]);
                    let orow = &mut out[ri * hidden + col..ri * hidden + col + dh];
                    for j in 0..=i {
                        let p = probs[base + j];
                        let rj = b * seq_len + j;
                        let vj = &vd[rj * hidden + col..rj * hidden + col + dh];
                        for (o, &vv) in orow.iter_mut().zip(vj) {
                            *o += p * vv;
                        }
                    }
                }
            }
        }
        let out = Tensor::from_op("attention", vec![rows, hidden], out)?;
        Ok(self.push(
            Op::Attention {
                q,
                k,
                v,
                n_heads,
                seq_len,
                probs,
            },
            out,
            &[q, k, v],
        ))
    }

    /// Rotary position embedding applied per head to adjacent column pairs.
    /// Position of row `r` is `r % seq_len`.
    pub fn rope(&mut self, a: Var, n_heads: usize, seq_len: usize, base: f64) -> Result<Var> {
        let (rows, hidden) = expect_rank2("rope", self.value(a))?;
        if n_heads == 0 || hidden % n_heads != 0 || (hidden / n_heads) % 2 != 0 {
            return Err(Error::shape(
                "rope",
                format!("hidden {hidden} with {n_heads} heads needs an even head dim"),
            ));
        }
        if seq_len == 0 || rows % seq_len != 0 {
            return Err(Error::shape("rope", "rows not a multiple of seq_len"));
        }
        let data = rope_apply(
            self.value(a).data(),
            rows,
            hidden,
            n_heads,
            seq_len,
            base,
            false,
        );
        let out = Tensor::from_op("rope", vec![rows, hidden], data)?;
        Ok(self.push(
            Op::Rope {
                x: a,
                n_heads,
                seq_len,
                base,
            },
            out,
            &[a],
        ))
    }

    /// Select rows of a matrix.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (n, c) = expect_rank2("gather_rows", self.value(a))?;
        if rows.is_empty() {
            return Err(Error::shape("gather_rows", "empty row set"));
        }
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if r >= n {
                return Err(Error::index("gather_rows", format!("row {r} >= {n}")));
            }
            data.extend_from_slice(self.value(a).row(r));
        }
        let out = Tensor::from_op("gather_rows", vec![rows.len(), c], data)?;
        Ok(self.push(
            Op::GatherRows {
                x: a,
                rows: rows.to_vec(),
            },
            out,
            &[a],
        ))
    }

    /// Place row `i` of `a` at row `rows[i]` of a zero matrix with `total`
    /// rows. Target rows must be distinct.
    pub fn scatter_rows(&mut self, a: Var, rows: &[usize], total: usize) -> Result<Var> {
        let (n, c) = expect_rank2("scatter_rows", self.value(a))?;
        if rows.len() != n {
            return Err(Error::shape("scatter_rows", "row count mismatch"));
        }
        let mut data = vec![0.0; total * c];
        let mut seen = vec![false; total];
        for (i, &r) in rows.iter().enumerate() {
            if r >= total || seen[r] {
                return Err(Error::index(
                    "scatter_rows",
                    format!("target row {r} invalid or repeated"),
                ));
            }
            seen[r] = true;
            data[r * c..(r + 1) * c].copy_from_slice(self.value(a).row(i));
        }
        let out = Tensor::from_op("scatter_rows", vec![total, c], data)?;
        Ok(self.push(
            Op::ScatterRows {
                x: a,
                rows: rows.to_vec(),
            },
            out,
            &[a],
        ))
    }

    /// Pick individual matrix cells into a vector.
    pub fn pick(&mut self, a: Var, cells: &[(usize, usize)]) -> Result<Var> {
        let (n, c) = expect_rank2("pick", self.value(a))?;
        if cells.is_empty() {
            return Err(Error::shape("pick", "no cells"));
        }
        let x = self.value(a);
        let mut data = Vec::with_capacity(cells.len());
        for &(r, col) in cells {
            if r >= n || col >= c {
                return Err(Error::index("pick", format!("cell ({r}, {col})")));
            }
            data.push(x.data()[r * c + col]);
        }
        let out = Tensor::from_op("pick", vec![cells.len()], data)?;
        Ok(self.push(
            Op::Pick {
                x: a,
                cells: cells.to_vec(),
            },
            out,
            &[a],
        ))
    }

    /// Multiply row `i` of `a` by `w[i]`.
    pub fn scale_rows(&mut self, a: Var, w: Var) -> Result<Var> {
        let (n, c) = expect_rank2("scale_rows", self.value(a))?;
        if self.value(w).shape() != [n] {
            return Err(Error::shape("scale_rows", "weight length != row count"));
        }
        let (x, wt) = (self.value(a).data(), self.value(w).data());
        let data = (0..n * c).map(|i| x[i] * wt[i / c]).collect();
        let out = Tensor::from_op("scale_rows", vec![n, c], data)?;
        Ok(self.push(Op::ScaleRows { x: a, w }, out, &[a, w]))
    }

    /// Reverse sweep from a scalar. Returns gradients for every node that
    /// requires one; contributions from multiple uses are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar seed, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut out = Vec::with_capacity(self.nodes.len());
        for (node, g) in self.nodes.iter().zip(grads) {
            match g {
                Some(g) => {
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite { op: "backward" });
                    }
                    out.push(Some(Tensor::raw(node.value.shape().to_vec(), g)));
                }
                None => out.push(None),
            }
        }
        Ok(Gradients { grads: out })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &mut |s| s.iter_mut().zip(g).for_each(|(o, gi)| *o += gi));
                }
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * y[i];
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * x[i];
                    }
                });
            }
            Op::Scale(a, c) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(o, gi)| *o += c * gi));
            }
            Op::Sum(a) => acc(*a, &mut |s| s.iter_mut().for_each(|o| *o += g[0])),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                acc(*a, &mut |s| s.iter_mut().for_each(|o| *o += g[0] / n));
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += 2.0 * x[i] * g[i];
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (xa, xb) = (self.value(*a), self.value(*b));
                let (m, k) = (xa.shape()[0], xa.shape()[1]);
                let n = xb.shape()[1];
                acc(*a, &mut |s| {
                    let d = matmul_nt(g, xb.data(), m, n, k);
                    s.iter_mut().zip(d).for_each(|(o, v)| *o += v);
                });
                acc(*b, &mut |s| {
                    let d = matmul_tn(xa.data(), g, m, k, n);
                    s.iter_mut().zip(d).for_each(|(o, v)| *o += v);
                });
            }
            Op::Softmax { x, inner, len } => {
                let y = node.value.data();
                let (inner, len) = (*inner, *len);
                let outer = y.len() / (inner * len);
                acc(*x, &mut |s| {
                    for o in 0..outer {
                        for n in 0..inner {
                            let idx = |i: usize| (o * len + i) * inner + n;
                            let dot: f64 = (0..len).map(|i| g[idx(i)] * y[idx(i)]).sum();
                            for i in 0..len {
                                s[idx(i)] += y[idx(i)] * (g[idx(i)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LogSumExpRows(a) => {
                let x = self.value(*a);
                let c = x.cols();
                let lse = node.value.data();
                acc(*a, &mut |s| {
                    for r in 0..x.rows() {
                        for j in 0..c {
                            s[r * c + j] += g[r] * (x.data()[r * c + j] - lse[r]).exp();
                        }
                    }
                });
            }
            Op::RmsNorm { x, gain, eps } => {
                let xv = self.value(*x);
                let gv = self.value(*gain).data();
                let c = xv.cols();
                let inv: Vec<f64> = (0..xv.rows())
                    .map(|r| {
                        let row = xv.row(r);
                        1.0 / (row.iter().map(|v| v * v).sum::<f64>() / c as f64 + eps).sqrt()
                    })
                    .collect();
                acc(*x, &mut |s| {
                    for (r, &ir) in inv.iter().enumerate() {
                        let row = xv.row(r);
                        let gr = &g[r * c..(r + 1) * c];
                        let dot: f64 = (0..c).map(|j| gr[j] * gv[j] * row[j]).sum();
                        let k = ir * ir * ir / c as f64 * dot;
                        for j in 0..c {
                            s[r * c + j] += ir * gv[j] * gr[j] - k * row[j];
                        }
                    }
                });
                acc(*gain, &mut |s| {
                    for (r, &ir) in inv.iter().enumerate() {
                        let row = xv.row(r);
                        for j in 0..c {
                            s[j] += g[r * c + j] * row[j] * ir;
                        }
                    }
                });
            }
            Op::SwiGlu(a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        let sg = sigmoid(x[i]);
                        s[i] += g[i] * y[i] * sg * (1.0 + x[i] * (1.0 - sg));
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * x[i] * sigmoid(x[i]);
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let h = self.value(*table).cols();
                acc(*table, &mut |s| {
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..h {
                            s[id * h + j] += g[r * h + j];
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, targets } => {
                let x = self.value(*logits);
                let v = x.cols();
                let scale = g[0] / targets.len() as f64;
                acc(*logits, &mut |s| {
                    let mut p = vec![0.0; v];
                    for (r, &t) in targets.iter().enumerate() {
                        softmax_into(x.row(r), &mut p);
                        p[t] -= 1.0;
                        for j in 0..v {
                            s[r * v + j] += scale * p[j];
                        }
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                n_heads,
                seq_len,
                probs,
            } => {
                let (rows, hidden) = (node.value.shape()[0], node.value.shape()[1]);
                let (nh, sl) = (*n_heads, *seq_len);
                let dh = hidden / nh;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qd, kd, vd) = (
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                );
                let mut gq = vec![0.0; rows * hidden];
                let mut gk = vec![0.0; rows * hidden];
                let mut gv = vec![0.0; rows * hidden];
                let mut ds = vec![0.0; sl];
                for b in 0..rows / sl {
                    for h in 0..nh {
                        let col = h * dh;
                        for i in 0..sl {
                            let ri = b * sl + i;
                            let base = ((b * nh + h) * sl + i) * sl;
                            let gi = &g[ri * hidden + col..ri * hidden + col + dh];
                            let mut dot = 0.0;
                            for j in 0..=i {
                                let rj = b * sl + j;
                                let vj = &vd[rj * hidden + col..rj * hidden + col + dh];
                                let dp: f64 = gi.iter().zip(vj).map(|(x, y)| x * y).sum();
                                ds[j] = dp;
                                dot += probs[base + j] * dp;
                            }
                            for j in 0..=i {
                                let p = probs[base + j];
                                let d = p * (ds[j] - dot) * scale;
                                let rj = b * sl + j;
                                for c in 0..dh {
                                    gq[ri * hidden + col + c] += d * kd[rj * hidden + col + c];
                                    gk[rj * hidden + col + c] += d * qd[ri * hidden + col + c];
                                    gv[rj * hidden + col + c] += p * gi[c];
                                }
                            }
                        }
                    }
                }
                for (var, buf) in [(*q, gq), (*k, gk), (*v, gv)] {
                    acc(var, &mut |s| s.iter_mut().zip(&buf).for_each(|(o, d)| *o += d));
                }
            }
            Op::Rope {
                x,
                n_heads,
                seq_len,
                base,
            } => {
                let (rows, hidden) = (node.value.shape()[0], node.value.shape()[1]);
                let d = rope_apply(g, rows, hidden, *n_heads, *seq_len, *base, true);
                acc(*x, &mut |s| s.iter_mut().zip(&d).for_each(|(o, v)| *o += v));
            }
            Op::GatherRows { x, rows } => {
                let c = node.value.cols();
                acc(*x, &mut |s| {
                    for (i, &r) in rows.iter().enumerate() {
                        for j in 0..c {
                            s[r * c + j] += g[i * c + j];
                        }
                    }
                });
            }
            Op::ScatterRows { x, rows } => {
                let c = node.value.cols();
                acc(*x, &mut |s| {
                    for (i, &r) in rows.iter().enumerate() {
                        for j in 0..c {
                            s[i * c + j] += g[r * c + j];
                        }
                    }
                });
            }
            Op::Pick { x, cells } => {
                let c = self.value(*x).cols();
                acc(*x, &mut |s| {
                    for (i, &(r, col)) in cells.iter().enumerate() {
                        s[r * c + col] += g[i];
                    }
                });
            }
            Op::ScaleRows { x, w } => {
                let c = node.value.cols();
                let (xd, wd) = (self.value(*x).data(), self.value(*w).data());
                acc(*x, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * wd[i / c];
                    }
                });
                acc(*w, &mut |s| {
                    for (r, o) in s.iter_mut().enumerate() {
                        *o += (0..c).map(|j| g[r * c + j] * xd[r * c + j]).sum::<f64>();
                    }
                });
            }
        }
    }
}

/// Rotate adjacent pairs within each head by position-dependent angles.
/// `inverse` applies the transpose rotation, which is the backward map.
fn rope_apply(
    x: &[f64],
    rows: usize,
    hidden: usize,
    n_heads: usize,
    seq_len: usize,
    base: f64,
    inverse: bool,
) -> Vec<f64> {
    let dh = hidden / n_heads;
    let sign = if inverse { -1.0 } else { 1.0 };
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        let pos = (r % seq_len) as f64;
        for h in 0..n_heads {
            for i in 0..dh / 2 {
                let theta = pos * base.powf(-2.0 * i as f64 / dh as f64);
                let (sin, cos) = theta.sin_cos();
                let c0 = r * hidden + h * dh + 2 * i;
                let (a, b) = (x[c0], x[c0 + 1]);
                out[c0] = a * cos - sign * b * sin;
                out[c0 + 1] = sign * a * sin + b * cos;
            }
        }
    }
    out
}
