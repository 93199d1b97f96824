//! Tape-based reverse-mode autodiff.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order; `backward` walks it once in reverse.

use super::kernels::{gemm, View};
use super::ops::{self, LayerNormCache};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulNt(usize, usize),
    Add(usize, usize),
    AddRowBias(usize, usize),
    Scale(usize, f64),
    Transpose(usize),
    SliceCols {
        x: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    GatherRows {
        table: usize,
        ids: Vec<usize>,
    },
    CausalMask(usize),
    Softmax(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        cache: LayerNormCache,
    },
    Gelu(usize),
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        row_weights: Vec<f64>,
        probs: Vec<f64>,
    },
    Sum(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A recorded computation. Build it forward with the op methods, then call
/// [`Graph::backward`] on a scalar node.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[usize]) -> bool {
        vars.iter().any(|&v| self.nodes[v].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` root with respect to `v`, if any
    /// flowed into it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grad_data(v)
            .map(|g| Tensor::from_parts(self.nodes[v.0].value.shape().to_vec(), g.to_vec()))
    }

    pub fn grad_data(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::matmul(self.value(a), self.value(b))?;
        let rg = self.needs(&[a.0, b.0]);
        Ok(self.push(value, Op::MatMul(a.0, b.0), rg))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::matmul_nt(self.value(a), self.value(b))?;
        let rg = self.needs(&[a.0, b.0]);
        Ok(self.push(value, Op::MatMulNt(a.0, b.0), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::add(self.value(a), self.value(b))?;
        let rg = self.needs(&[a.0, b.0]);
        Ok(self.push(value, Op::Add(a.0, b.0), rg))
    }

    /// Adds a length-`cols` bias to every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        let cols = xv.cols();
        if bv.len() != cols {
            return Err(Error::Shape(format!(
                "bias {:?} does not match rows of {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(cols) {
            row.iter_mut().zip(bv.data()).for_each(|(a, b)| *a += b);
        }
        let value = Tensor::from_parts(xv.shape().to_vec(), data);
        let rg = self.needs(&[x.0, bias.0]);
        Ok(self.push(value, Op::AddRowBias(x.0, bias.0), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let xv = self.value(x);
        let value = Tensor::from_parts(
            xv.shape().to_vec(),
            xv.data().iter().map(|v| v * factor).collect(),
        );
        let rg = self.needs(&[x.0]);
        self.push(value, Op::Scale(x.0, factor), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = ops::transpose(self.value(x))?;
        let rg = self.needs(&[x.0]);
        Ok(self.push(value, Op::Transpose(x.0), rg))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || len == 0 || start + len > xv.cols() {
            return Err(Error::Shape(format!(
                "cannot slice columns {start}..{} of {:?}",
                start + len,
                xv.shape()
            )));
        }
        let rows = xv.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let value = Tensor::from_parts(vec![rows, len], data);
        let rg = self.needs(&[x.0]);
        Ok(self.push(value, Op::SliceCols { x: x.0, start }, rg))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let rows = self.value(*first).rows();
        for p in parts {
            let pv = self.value(*p);
            if pv.rank() != 2 || pv.rows() != rows {
                return Err(Error::Shape(format!(
                    "concat needs rank-2 parts with {rows} rows, got {:?}",
                    pv.shape()
                )));
            }
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let value = Tensor::from_parts(vec![rows, total], data);
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.needs(&idx);
        Ok(self.push(value, Op::ConcatCols(idx), rg))
    }

    /// Row lookup: output row `i` is `table[ids[i]]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 || ids.is_empty() {
            return Err(Error::Shape(format!(
                "gather of {} rows from {:?}",
                ids.len(),
                tv.shape()
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= tv.rows()) {
            return Err(Error::Data(format!(
                "row id {bad} out of range for table {:?}",
                tv.shape()
            )));
        }
        let cols = tv.cols();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            data.extend_from_slice(tv.row(i));
        }
        let value = Tensor::from_parts(vec![ids.len(), cols], data);
        let rg = self.needs(&[table.0]);
        Ok(self.push(
            value,
            Op::GatherRows {
                table: table.0,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn causal_mask(&mut self, x: Var) -> Result<Var> {
        let value = ops::causal_mask(self.value(x))?;
        let rg = self.needs(&[x.0]);
        Ok(self.push(value, Op::CausalMask(x.0), rg))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let value = ops::softmax_rows(self.value(x));
        let rg = self.needs(&[x.0]);
        self.push(value, Op::Softmax(x.0), rg)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (value, cache) =
            ops::layer_norm_with_cache(self.value(x), self.value(gain), self.value(bias), eps)?;
        let rg = self.needs(&[x.0, gain.0, bias.0]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                cache,
            },
            rg,
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let value = ops::gelu(self.value(x));
        let rg = self.needs(&[x.0]);
        self.push(value, Op::Gelu(x.0), rg)
    }

    /// Weighted mean over rows of `−log softmax(logits)[target]`.
    ///
    /// With `weights = None` every row counts equally; otherwise row `i`
    /// contributes `weights[i] / Σ weights`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: Option<&[f64]>,
    ) -> Result<Var> {
        let lv = self.value(logits);
        ops::check_targets(lv, targets)?;
        let rows = targets.len();
        let raw: Vec<f64> = match weights {
            Some(w) if w.len() != rows => {
                return Err(Error::Shape(format!(
                    "{} loss weights for {rows} targets",
                    w.len()
                )))
            }
            Some(w) => w.to_vec(),
            None => vec![1.0; rows],
        };
        let total: f64 = raw.iter().sum();
        if rows == 0 || total <= 0.0 || raw.iter().any(|w| *w < 0.0) {
            return Err(Error::Data(
                "cross_entropy needs at least one positively weighted target".into(),
            ));
        }
        let row_weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let cols = lv.cols();
        let mut probs = Vec::with_capacity(rows * cols);
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let logp = ops::log_softmax_row(lv.row(r));
            loss -= row_weights[r] * logp[t];
            probs.extend(logp.iter().map(|l| l.exp()));
        }
        let rg = self.needs(&[logits.0]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
                row_weights,
                probs,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        let rg = self.needs(&[x.0]);
        self.push(Tensor::scalar(total), Op::Sum(x.0), rg)
    }

    /// Reverse pass from a scalar root. Replaces gradients from any earlier
    /// call.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_value = &self.nodes[root.0].value;
        if !root_value.is_scalar() {
            return Err(Error::Shape(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let Graph { nodes, grads } = self;
        grads.clear();
        grads.resize(nodes.len(), None);
        if !nodes[root.0].requires_grad {
            return Ok(());
        }
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            backprop_node(nodes, grads, i, &g);
            grads[i] = Some(g);
        }
        Ok(())
    }
}

fn buf<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], idx: usize) -> Option<&'g mut [f64]> {
    if !nodes[idx].requires_grad {
        return None;
    }
    let len = nodes[idx].value.len();
    Some(grads[idx].get_or_insert_with(|| vec![0.0; len]))
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn backprop_node(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
    let node = &nodes[i];
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul(a, b) => {
            let (m, k) = (nodes[a].value.rows(), nodes[a].value.cols());
            let n = nodes[b].value.cols();
            let av = nodes[a].value.data();
            let bv = nodes[b].value.data();
            if let Some(da) = buf(nodes, grads, a) {
                gemm(m, n, k, View::normal(g, n), View::transposed(bv, n), 1.0, da);
            }
            if let Some(db) = buf(nodes, grads, b) {
                gemm(k, m, n, View::transposed(av, k), View::normal(g, n), 1.0, db);
            }
        }
        &Op::MatMulNt(a, b) => {
            let (m, k) = (nodes[a].value.rows(), nodes[a].value.cols());
            let n = nodes[b].value.rows();
            let av = nodes[a].value.data();
            let bv = nodes[b].value.data();
            if let Some(da) = buf(nodes, grads, a) {
                gemm(m, n, k, View::normal(g, n), View::normal(bv, k), 1.0, da);
            }
            if let Some(db) = buf(nodes, grads, b) {
                gemm(n, m, k, View::transposed(g, n), View::normal(av, k), 1.0, db);
            }
        }
        &Op::Add(a, b) => {
            if let Some(da) = buf(nodes, grads, a) {
                accumulate(da, g);
            }
            if let Some(db) = buf(nodes, grads, b) {
                accumulate(db, g);
            }
        }
        &Op::AddRowBias(x, bias) => {
            if let Some(dx) = buf(nodes, grads, x) {
                accumulate(dx, g);
            }
            let cols = nodes[bias].value.len();
            if let Some(db) = buf(nodes, grads, bias) {
                for row in g.chunks(cols) {
                    accumulate(db, row);
                }
            }
        }
        &Op::Scale(x, factor) => {
            if let Some(dx) = buf(nodes, grads, x) {
                dx.iter_mut().zip(g).for_each(|(d, s)| *d += factor * s);
            }
        }
        &Op::Transpose(x) => {
            let (r, c) = (nodes[x].value.rows(), nodes[x].value.cols());
            if let Some(dx) = buf(nodes, grads, x) {
                for a in 0..r {
                    for b in 0..c {
                        dx[a * c + b] += g[b * r + a];
                    }
                }
            }
        }
        &Op::SliceCols { x, start } => {
            let cx = nodes[x].value.cols();
            let len = node.value.cols();
            if let Some(dx) = buf(nodes, grads, x) {
                for (r, grow) in g.chunks(len).enumerate() {
                    accumulate(&mut dx[r * cx + start..r * cx + start + len], grow);
                }
            }
        }
        Op::ConcatCols(parts) => {
            let total = node.value.cols();
            let mut offset = 0;
            for &p in parts {
                let pc = nodes[p].value.cols();
                if let Some(dp) = buf(nodes, grads, p) {
                    for (r, drow) in dp.chunks_mut(pc).enumerate() {
                        accumulate(drow, &g[r * total + offset..r * total + offset + pc]);
                    }
                }
                offset += pc;
            }
        }
        Op::GatherRows { table, ids } => {
            let cols = nodes[*table].value.cols();
            if let Some(dt) = buf(nodes, grads, *table) {
                for (r, &id) in ids.iter().enumerate() {
                    accumulate(&mut dt[id * cols..(id + 1) * cols], &g[r * cols..(r + 1) * cols]);
                }
            }
        }
        &Op::CausalMask(x) => {
            let n = node.value.cols();
            if let Some(dx) = buf(nodes, grads, x) {
                for r in 0..n {
                    accumulate(&mut dx[r * n..r * n + r + 1], &g[r * n..r * n + r + 1]);
                }
            }
        }
        &Op::Softmax(x) => {
            let cols = node.value.cols();
            let y = node.value.data();
            if let Some(dx) = buf(nodes, grads, x) {
                for ((dxr, yr), gr) in dx.chunks_mut(cols).zip(y.chunks(cols)).zip(g.chunks(cols)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        dxr[c] += yr[c] * (gr[c] - dot);
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            cache,
        } => {
            let cols = node.value.cols();
            let n = cols as f64;
            let gainv = nodes[*gain].value.data();
            if let Some(dgain) = buf(nodes, grads, *gain) {
                for (gr, xh) in g.chunks(cols).zip(cache.normalized.chunks(cols)) {
                    for c in 0..cols {
                        dgain[c] += gr[c] * xh[c];
                    }
                }
            }
            if let Some(dbias) = buf(nodes, grads, *bias) {
                for gr in g.chunks(cols) {
                    accumulate(dbias, gr);
                }
            }
            if let Some(dx) = buf(nodes, grads, *x) {
                let mut dxhat = vec![0.0; cols];
                for (r, gr) in g.chunks(cols).enumerate() {
                    let xh = &cache.normalized[r * cols..(r + 1) * cols];
                    for c in 0..cols {
                        dxhat[c] = gr[c] * gainv[c];
                    }
                    let sum: f64 = dxhat.iter().sum();
                    let dot: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
                    let istd = cache.inv_std[r];
                    let dxr = &mut dx[r * cols..(r + 1) * cols];
                    for c in 0..cols {
                        dxr[c] += istd / n * (n * dxhat[c] - sum - xh[c] * dot);
                    }
                }
            }
        }
        &Op::Gelu(x) => {
            let xv = nodes[x].value.data();
            if let Some(dx) = buf(nodes, grads, x) {
                for ((d, &v), &s) in dx.iter_mut().zip(xv).zip(g) {
                    *d += s * ops::gelu_derivative(v);
                }
            }
        }
        Op::CrossEntropy {
            logits,
            targets,
            row_weights,
            probs,
        } => {
            let cols = nodes[*logits].value.cols();
            let upstream = g[0];
            if let Some(dl) = buf(nodes, grads, *logits) {
                for (r, &t) in targets.iter().enumerate() {
                    let w = upstream * row_weights[r];
                    if w == 0.0 {
                        continue;
                    }
                    let row = &mut dl[r * cols..(r + 1) * cols];
                    let pr = &probs[r * cols..(r + 1) * cols];
                    for c in 0..cols {
                        row[c] += w * pr[c];
                    }
                    row[t] -= w;
                }
            }
        }
        &Op::Sum(x) => {
            if let Some(dx) = buf(nodes, grads, x) {
                dx.iter_mut().for_each(|d| *d += g[0]);
            }
        }
    }
}
