//! Reverse-mode differentiation over a flat tape of 2-D primitives.
//!
//! Values are recorded in execution order, so walking the tape backwards is a
//! valid reverse topological order and each node is visited exactly once.

use std::collections::HashMap;

use super::tensor::{gemm, gemm_at, gemm_bt, Tensor};
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named learnable tensors in a fixed registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }
}

/// Per-parameter gradients aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Gradients {
            grads: params.values.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Adds `other` into `self`, parameter by parameter, in index order.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g))
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Affine { x: Var, w: Var, b: Var },
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Concat { parts: Vec<Var>, axis: usize },
    SliceCols { x: Var, start: usize },
    ScaleRows { x: Var, s: Var },
    Reshape(Var),
    Gather { table: Var, idx: Vec<usize> },
    GatherSum { table: Var, idx: Vec<usize>, k: usize },
    MatMul(Var, Var),
    SliceRows { x: Var, start: usize },
    SumGroups { x: Var, group: usize },
    MaskedMaxPool { x: Var, argmax: Vec<Option<usize>> },
    SquaredError { pred: Var, target: Var, mask: Vec<f64> },
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Single-threaded record of executed primitives.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant input.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push("leaf", value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.params.get(id).clone();
        self.nodes.push(Node {
            value,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    fn matrix(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = self.value(v);
        if !t.is_matrix() {
            return Err(Error::shape(op, format!("expected a matrix, got {:?}", t.shape())));
        }
        Ok((t.rows(), t.cols()))
    }

    /// `x[n×i] · w[i×o] + b[o]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, i) = self.matrix(x, "affine")?;
        let (wi, o) = self.matrix(w, "affine")?;
        let bt = self.value(b);
        if wi != i || bt.shape() != [o] {
            return Err(Error::shape(
                "affine",
                format!(
                    "x {:?}, w {:?}, b {:?}",
                    self.value(x).shape(),
                    self.value(w).shape(),
                    bt.shape()
                ),
            ));
        }
        let mut out = vec![0.0; n * o];
        for row in out.chunks_mut(o.max(1)) {
            row.copy_from_slice(bt.data());
        }
        gemm(n, i, o, self.value(x).data(), self.value(w).data(), &mut out, true);
        self.push("affine", Tensor::matrix(n, o, out)?, Op::Affine { x, w, b })
    }

    /// Convolution whose stride equals its window: each row of `x` is cut
    /// into `cols / window` consecutive blocks, and every block is mapped by
    /// the same `w[window×m]` plus `b[m]`. Output is `[n × blocks·m]`.
    pub fn conv1d_nonoverlap(&mut self, x: Var, w: Var, b: Var, window: usize) -> Result<Var> {
        let (n, c) = self.matrix(x, "conv1d_nonoverlap")?;
        let (wi, m) = self.matrix(w, "conv1d_nonoverlap")?;
        if window == 0 || c % window != 0 || wi != window {
            return Err(Error::shape(
                "conv1d_nonoverlap",
                format!("input width {c}, window {window}, kernel rows {wi}"),
            ));
        }
        let blocks = c / window;
        let flat = self.reshape(x, vec![n * blocks, window])?;
        let y = self.affine(flat, w, b)?;
        self.reshape(y, vec![n, blocks * m])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        self.push("reshape", value, Op::Reshape(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| tanh(v)).collect())?;
        self.push("tanh", value, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| sigmoid(v)).collect())?;
        self.push("sigmoid", value, Op::Sigmoid(x))
    }

    /// Row-wise softmax of a matrix, computed with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (n, c) = self.matrix(x, "softmax")?;
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(c.max(1)).take(n) {
            softmax_in_place(row);
        }
        self.push("softmax", Tensor::matrix(n, c, out)?, Op::Softmax(x))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("add", value, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("mul", value, Op::Mul(a, b))
    }

    /// Concatenates matrices along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(Error::shape("concat", "need at least one part and axis 0 or 1"));
        }
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|&p| self.matrix(p, "concat"))
            .collect::<Result<_>>()?;
        let value = if axis == 0 {
            let c = dims[0].1;
            if dims.iter().any(|d| d.1 != c) {
                return Err(Error::shape("concat", format!("column mismatch {dims:?}")));
            }
            let mut data = Vec::with_capacity(dims.iter().map(|d| d.0 * c).sum());
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::matrix(dims.iter().map(|d| d.0).sum(), c, data)?
        } else {
            let n = dims[0].0;
            if dims.iter().any(|d| d.0 != n) {
                return Err(Error::shape("concat", format!("row mismatch {dims:?}")));
            }
            let total: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(n * total);
            for r in 0..n {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row(r));
                }
            }
            Tensor::matrix(n, total, data)?
        };
        self.push(
            "concat",
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, c) = self.matrix(x, "slice_cols")?;
        if start + len > c {
            return Err(Error::shape("slice_cols", format!("[{start}, {}) of {c}", start + len)));
        }
        let t = self.value(x);
        let mut data = Vec::with_capacity(n * len);
        for r in 0..n {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        self.push("slice_cols", Tensor::matrix(n, len, data)?, Op::SliceCols { x, start })
    }

    /// Multiplies row `i` of `x[n×d]` by `s[i, 0]` for `s[n×1]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (n, d) = self.matrix(x, "scale_rows")?;
        if self.value(s).shape() != [n, 1] {
            return Err(Error::shape("scale_rows", format!("scale {:?}", self.value(s).shape())));
        }
        let (tx, ts) = (self.value(x), self.value(s));
        let mut data = tx.data().to_vec();
        for (r, row) in data.chunks_mut(d.max(1)).take(n).enumerate() {
            let k = ts.data()[r];
            row.iter_mut().for_each(|v| *v *= k);
        }
        self.push("scale_rows", Tensor::matrix(n, d, data)?, Op::ScaleRows { x, s })
    }

    /// Embedding lookup: row `idx[k]` of `table` becomes output row `k`.
    pub fn gather(&mut self, table: Var, idx: Vec<usize>) -> Result<Var> {
        let (v, e) = self.matrix(table, "gather")?;
        if let Some(bad) = idx.iter().find(|&&i| i >= v) {
            return Err(Error::shape("gather", format!("index {bad} outside table of {v} rows")));
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(idx.len() * e);
        for &i in &idx {
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::matrix(idx.len(), e, data)?;
        self.push("gather", value, Op::Gather { table, idx })
    }

    /// Row `r` of the output is `Σ_j table[idx[r·k + j]]`.
    pub fn gather_sum(&mut self, table: Var, idx: Vec<usize>, k: usize) -> Result<Var> {
        let (v, e) = self.matrix(table, "gather_sum")?;
        if k == 0 || idx.len() % k != 0 {
            return Err(Error::shape("gather_sum", format!("{} indices, {k} per row", idx.len())));
        }
        if let Some(bad) = idx.iter().find(|&&i| i >= v) {
            return Err(Error::shape("gather_sum", format!("index {bad} outside table of {v} rows")));
        }
        let t = self.value(table).data();
        let n = idx.len() / k;
        let mut data = vec![0.0; n * e];
        for (row, ids) in data.chunks_mut(e.max(1)).zip(idx.chunks(k)) {
            for &i in ids {
                for (acc, x) in row.iter_mut().zip(&t[i * e..(i + 1) * e]) {
                    *acc += x;
                }
            }
        }
        let value = Tensor::matrix(n, e, data)?;
        self.push("gather_sum", value, Op::GatherSum { table, idx, k })
    }

    /// `a[n×k] · b[k×m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.matrix(a, "matmul")?;
        let (bk, m) = self.matrix(b, "matmul")?;
        if bk != k {
            return Err(Error::shape("matmul", format!("{n}×{k} by {bk}×{m}")));
        }
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, self.value(a).data(), self.value(b).data(), &mut out, false);
        self.push("matmul", Tensor::matrix(n, m, out)?, Op::MatMul(a, b))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, c) = self.matrix(x, "slice_rows")?;
        if start + len > n {
            return Err(Error::shape("slice_rows", format!("[{start}, {}) of {n}", start + len)));
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        self.push("slice_rows", Tensor::matrix(len, c, data)?, Op::SliceRows { x, start })
    }

    /// Sums consecutive groups of `group` rows: `[n·group × d] → [n × d]`.
    pub fn sum_groups(&mut self, x: Var, group: usize) -> Result<Var> {
        let (rows, d) = self.matrix(x, "sum_groups")?;
        if group == 0 || rows % group != 0 {
            return Err(Error::shape("sum_groups", format!("{rows} rows in groups of {group}")));
        }
        let t = self.value(x).data();
        let n = rows / group;
        let mut data = vec![0.0; n * d];
        for r in 0..rows {
            let dst = &mut data[(r / group) * d..(r / group + 1) * d];
            for (acc, v) in dst.iter_mut().zip(&t[r * d..(r + 1) * d]) {
                *acc += v;
            }
        }
        self.push("sum_groups", Tensor::matrix(n, d, data)?, Op::SumGroups { x, group })
    }

    /// Max over consecutive groups of `group` rows, skipping rows whose mask
    /// is false. Groups with no valid row yield `neutral` and pass no
    /// gradient. Ties resolve to the lowest row.
    pub fn masked_max_pool(
        &mut self,
        x: Var,
        mask: &[bool],
        group: usize,
        neutral: f64,
    ) -> Result<Var> {
        let (n, d) = self.matrix(x, "masked_max_pool")?;
        if group == 0 || n % group != 0 || mask.len() != n {
            return Err(Error::shape(
                "masked_max_pool",
                format!("{n} rows, group {group}, mask {}", mask.len()),
            ));
        }
        let g = n / group;
        let t = self.value(x);
        let mut out = vec![neutral; g * d];
        let mut argmax = vec![None; g * d];
        for gi in 0..g {
            for r in gi * group..(gi + 1) * group {
                if !mask[r] {
                    continue;
                }
                let row = t.row(r);
                for c in 0..d {
                    let slot = gi * d + c;
                    match argmax[slot] {
                        Some(_) if row[c] <= out[slot] => {}
                        _ => {
                            out[slot] = row[c];
                            argmax[slot] = Some(r);
                        }
                    }
                }
            }
        }
        self.push(
            "masked_max_pool",
            Tensor::matrix(g, d, out)?,
            Op::MaskedMaxPool { x, argmax },
        )
    }

    /// `Σ mask·(pred − target)²` as a scalar.
    pub fn squared_error(&mut self, pred: Var, target: Var, mask: &[bool]) -> Result<Var> {
        self.same_shape(pred, target, "squared_error")?;
        if mask.len() != self.value(pred).len() {
            return Err(Error::shape("squared_error", "mask length"));
        }
        let mask: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        let (tp, tt) = (self.value(pred), self.value(target));
        let total = tp
            .data()
            .iter()
            .zip(tt.data())
            .zip(&mask)
            .map(|((p, t), m)| m * (p - t) * (p - t))
            .sum();
        self.push(
            "squared_error",
            Tensor::scalar(total),
            Op::SquaredError { pred, target, mask },
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(total), Op::Sum(x))
    }

    /// Back-propagates from the scalar `loss`. Parameters not reached by the
    /// loss receive zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        let mut out = Gradients::zeros_like(self.params);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.get_mut(*id).add_assign(&g),
                Op::Affine { x, w, b } => {
                    let (n, i) = (self.value(*x).rows(), self.value(*x).cols());
                    let o = self.value(*w).cols();
                    {
                        let gb = slot(&mut adj, *b, self);
                        let gbd = gb.data_mut();
                        for row in g.data().chunks(o.max(1)).take(n) {
                            for (acc, v) in gbd.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                    }
                    let wv = self.value(*w).data();
                    gemm_bt(n, o, i, g.data(), wv, slot(&mut adj, *x, self).data_mut());
                    let xv = self.value(*x).data();
                    gemm_at(i, n, o, xv, g.data(), slot(&mut adj, *w, self).data_mut());
                }
                Op::Tanh(x) => {
                    let y = node.value.data();
                    let gx = slot(&mut adj, *x, self).data_mut();
                    for ((acc, gy), yv) in gx.iter_mut().zip(g.data()).zip(y) {
                        *acc += gy * (1.0 - yv * yv);
                    }
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    let gx = slot(&mut adj, *x, self).data_mut();
                    for ((acc, gy), yv) in gx.iter_mut().zip(g.data()).zip(y) {
                        *acc += gy * yv * (1.0 - yv);
                    }
                }
                Op::Softmax(x) => {
                    let c = node.value.cols();
                    let y = node.value.data();
                    let gx = slot(&mut adj, *x, self).data_mut();
                    for ((yr, gr), acc) in y
                        .chunks(c.max(1))
                        .zip(g.data().chunks(c.max(1)))
                        .zip(gx.chunks_mut(c.max(1)))
                    {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for k in 0..c {
                            acc[k] += yr[k] * (gr[k] - dot);
                        }
                    }
                }
                Op::Add(a, b) => {
                    slot(&mut adj, *a, self).add_assign(&g);
                    slot(&mut adj, *b, self).add_assign(&g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    {
                        let ga = slot(&mut adj, *a, self).data_mut();
                        for ((acc, gy), y) in ga.iter_mut().zip(g.data()).zip(bv) {
                            *acc += gy * y;
                        }
                    }
                    let gb = slot(&mut adj, *b, self).data_mut();
                    for ((acc, gy), y) in gb.iter_mut().zip(g.data()).zip(av) {
                        *acc += gy * y;
                    }
                }
                Op::Concat { parts, axis } => {
                    if *axis == 0 {
                        let mut off = 0;
                        for &p in parts {
                            let len = self.value(p).len();
                            let gp = slot(&mut adj, p, self).data_mut();
                            for (acc, v) in gp.iter_mut().zip(&g.data()[off..off + len]) {
                                *acc += v;
                            }
                            off += len;
                        }
                    } else {
                        let n = node.value.rows();
                        let total = node.value.cols();
                        let mut off = 0;
                        for &p in parts {
                            let c = self.value(p).cols();
                            let gp = slot(&mut adj, p, self).data_mut();
                            for r in 0..n {
                                let src = &g.data()[r * total + off..r * total + off + c];
                                for (acc, v) in gp[r * c..(r + 1) * c].iter_mut().zip(src) {
                                    *acc += v;
                                }
                            }
                            off += c;
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    let (n, len) = (node.value.rows(), node.value.cols());
                    let c = self.value(*x).cols();
                    let gx = slot(&mut adj, *x, self).data_mut();
                    for r in 0..n {
                        for k in 0..len {
                            gx[r * c + start + k] += g.data()[r * len + k];
                        }
                    }
                }
                Op::ScaleRows { x, s } => {
                    let (n, d) = (node.value.rows(), node.value.cols());
                    let (xv, sv) = (self.value(*x).data(), self.value(*s).data());
                    {
                        let gx = slot(&mut adj, *x, self).data_mut();
                        for r in 0..n {
                            for c in 0..d {
                                gx[r * d + c] += g.data()[r * d + c] * sv[r];
                            }
                        }
                    }
                    let gs = slot(&mut adj, *s, self).data_mut();
                    for r in 0..n {
                        let dot: f64 = (0..d).map(|c| g.data()[r * d + c] * xv[r * d + c]).sum();
                        gs[r] += dot;
                    }
                }
                Op::Reshape(x) => {
                    let gx = slot(&mut adj, *x, self).data_mut();
                    for (acc, v) in gx.iter_mut().zip(g.data()) {
                        *acc += v;
                    }
                }
                Op::Gather { table, idx } => {
                    let e = node.value.cols();
                    let gt = slot(&mut adj, *table, self).data_mut();
                    for (k, &i) in idx.iter().enumerate() {
                        for c in 0..e {
                            gt[i * e + c] += g.data()[k * e + c];
                        }
                    }
                }
                Op::GatherSum { table, idx, k } => {
                    let e = node.value.cols();
                    let gt = slot(&mut adj, *table, self).data_mut();
                    for (r, ids) in idx.chunks(*k).enumerate() {
                        let src = &g.data()[r * e..(r + 1) * e];
                        for &i in ids {
                            for (acc, v) in gt[i * e..(i + 1) * e].iter_mut().zip(src) {
                                *acc += v;
                            }
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (n, k) = (self.value(*a).rows(), self.value(*a).cols());
                    let m = self.value(*b).cols();
                    let bv = self.value(*b).data();
                    gemm_bt(n, m, k, g.data(), bv, slot(&mut adj, *a, self).data_mut());
                    let av = self.value(*a).data();
                    gemm_at(k, n, m, av, g.data(), slot(&mut adj, *b, self).data_mut());
                }
                Op::SliceRows { x, start } => {
                    let c = node.value.cols();
                    let gx = slot(&mut adj, *x, self).data_mut();
                    for (acc, v) in gx[start * c..].iter_mut().zip(g.data()) {
                        *acc += v;
                    }
                }
                Op::SumGroups { x, group } => {
                    let d = node.value.cols();
                    let gx = slot(&mut adj, *x, self).data_mut();
                    for (r, row) in gx.chunks_mut(d.max(1)).enumerate() {
                        let src = &g.data()[(r / group) * d..(r / group + 1) * d];
                        for (acc, v) in row.iter_mut().zip(src) {
                            *acc += v;
                        }
                    }
                }
                Op::MaskedMaxPool { x, argmax } => {
                    let d = node.value.cols();
                    let gx = slot(&mut adj, *x, self).data_mut();
                    for (k, am) in argmax.iter().enumerate() {
                        if let Some(r) = am {
                            gx[r * d + k % d] += g.data()[k];
                        }
                    }
                }
                Op::SquaredError { pred, target, mask } => {
                    let gl = g.item();
                    let (pv, tv) = (self.value(*pred).data(), self.value(*target).data());
                    {
                        let gp = slot(&mut adj, *pred, self).data_mut();
                        for k in 0..gp.len() {
                            gp[k] += gl * 2.0 * mask[k] * (pv[k] - tv[k]);
                        }
                    }
                    let gt = slot(&mut adj, *target, self).data_mut();
                    for k in 0..gt.len() {
                        gt[k] -= gl * 2.0 * mask[k] * (pv[k] - tv[k]);
                    }
                }
                Op::Sum(x) => {
                    let gl = g.item();
                    let gx = slot(&mut adj, *x, self).data_mut();
                    gx.iter_mut().for_each(|v| *v += gl);
                }
            }
        }
        for (_, g) in out.iter() {
            if !g.all_finite() {
                return Err(Error::NonFinite("backward".into()));
            }
        }
        Ok(out)
    }
}

fn slot<'a>(adj: &'a mut [Option<Tensor>], v: Var, tape: &Tape<'_>) -> &'a mut Tensor {
    adj[v.0].get_or_insert_with(|| Tensor::zeros(tape.value(v).shape()))
}

/// `tanh` through a single `exp`, about twice as fast as `f64::tanh` and
/// within a few ulps of it.
pub(crate) fn tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
