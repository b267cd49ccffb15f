//! Tape-based reverse-mode differentiation over [`Tensor3`] values.
//!
//! Every primitive appends exactly one node holding its forward value. Nodes
//! are only ever appended after their inputs, so the node order is already a
//! topological order and [`Tape::backward`] simply walks it in reverse.
//!
//! Reductions over sets (instance mean, neighbour sum) add their operands in
//! ascending value order. The result is then independent of the order in which
//! instances or vertices are stored, which makes the permutation properties of
//! the layers hold bit for bit rather than up to rounding.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor3};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Neighbour lists indexed by vertex.
pub type Neighbors = Arc<Vec<Vec<usize>>>;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    ConcatChannels(Vec<Var>),
    ConcatTime(Vec<Var>),
    SliceTime { x: Var, start: usize },
    MeanInstances { x: Var, groups: usize },
    NeighborSum { x: Var, adj: Neighbors },
    Broadcast { x: Var, reps: usize },
    Tile { x: Var, reps: usize },
    UnfoldSensors(Var),
    FoldSensors { x: Var, instances: usize },
    SumAll(Var),
    MeanAll(Var),
}

struct Node {
    value: Tensor3,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, lhs: Dims, rhs: Dims) -> Error {
    Error::Shape { op, lhs, rhs }
}

/// Sum in ascending order so the result does not depend on operand order.
#[inline]
fn ordered_sum(buf: &mut [f64]) -> f64 {
    buf.sort_unstable_by(f64::total_cmp);
    buf.iter().sum()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor3 {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> Dims {
        self.nodes[v.0].value.dims()
    }

    fn push(&mut self, value: Tensor3, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Input data; no gradient is accumulated for it.
    pub fn constant(&mut self, value: Tensor3) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf; receives a gradient on backward.
    pub fn param(&mut self, value: Tensor3) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// `x (I,T,in) · w (1,in,out) -> (I,T,out)`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (dx, dw) = (self.dims(x), self.dims(w));
        if dw.instances != 1 || dw.time != dx.channels {
            return Err(shape_err("matmul", dx, dw));
        }
        let out_dims = Dims::new(dx.instances, dx.time, dw.channels);
        let mut out = Tensor3::zeros(out_dims);
        matmul_rows(
            self.value(x).data(),
            self.value(w).data(),
            out.data_mut(),
            dx.channels,
            dw.channels,
        );
        let ng = self.ng(x) || self.ng(w);
        Ok(self.push(out, Op::MatMul(x, w), ng))
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(shape_err(name, da, db));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor3::from_vec(da, data)?, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("sub", a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("mul", a, b, |p, q| p * q, Op::Mul(a, b))
    }

    /// Adds a `(1,1,C)` vector to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (dx, db) = (self.dims(x), self.dims(b));
        if db.instances != 1 || db.time != 1 || db.channels != dx.channels {
            return Err(shape_err("add_bias", dx, db));
        }
        let mut out = self.value(x).clone();
        let bias = self.value(b).data();
        for row in out.data_mut().chunks_exact_mut(dx.channels) {
            for (o, &bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let ng = self.ng(x) || self.ng(b);
        Ok(self.push(out, Op::AddBias(x, b), ng))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x).map(|v| v * k);
        let ng = self.ng(x);
        self.push(out, Op::Scale(x, k), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let ng = self.ng(x);
        self.push(out, Op::Sigmoid(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        let ng = self.ng(x);
        self.push(out, Op::Tanh(x), ng)
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.dims(*parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?);
        let mut width = 0;
        for &p in parts {
            let d = self.dims(p);
            if d.instances != first.instances || d.time != first.time {
                return Err(shape_err("concat_channels", first, d));
            }
            width += d.channels;
        }
        let out_dims = Dims::new(first.instances, first.time, width);
        let mut data = Vec::with_capacity(out_dims.len());
        for r in 0..first.rows() {
            for &p in parts {
                let c = self.dims(p).channels;
                data.extend_from_slice(&self.value(p).data()[r * c..(r + 1) * c]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor3::from_vec(out_dims, data)?,
            Op::ConcatChannels(parts.to_vec()),
            ng,
        ))
    }

    pub fn concat_time(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor3> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor3::concat_time(&values)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::ConcatTime(parts.to_vec()), ng))
    }

    pub fn slice_time(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).slice_time(start, len)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::SliceTime { x, start }, ng))
    }

    /// Rows are laid out `instance * groups + group`; averages over instances
    /// and returns one row block per group.
    pub fn mean_instances(&mut self, x: Var, groups: usize) -> Result<Var> {
        let d = self.dims(x);
        if groups == 0 || !d.instances.is_multiple_of(groups) {
            return Err(shape_err("mean_instances", d, Dims::new(groups, 1, 1)));
        }
        let n = d.instances / groups;
        let block = d.time * d.channels;
        let out_dims = Dims::new(groups, d.time, d.channels);
        let mut out = Tensor3::zeros(out_dims);
        let src = self.value(x).data();
        let mut buf = vec![0.0; n];
        let inv = 1.0 / n as f64;
        for g in 0..groups {
            for e in 0..block {
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = src[(i * groups + g) * block + e];
                }
                out.data_mut()[g * block + e] = ordered_sum(&mut buf) * inv;
            }
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::MeanInstances { x, groups }, ng))
    }

    /// Rows are laid out `instance * C + vertex`; each output row is the sum of
    /// the rows of the vertex's neighbours within the same instance.
    pub fn neighbor_sum(&mut self, x: Var, adj: Neighbors) -> Result<Var> {
        let d = self.dims(x);
        let c = adj.len();
        if c == 0 || !d.instances.is_multiple_of(c) {
            return Err(shape_err("neighbor_sum", d, Dims::new(c.max(1), 1, 1)));
        }
        if adj.iter().flatten().any(|&j| j >= c) {
            return Err(Error::Graph("neighbour index out of range".into()));
        }
        let n = d.instances / c;
        let block = d.time * d.channels;
        let mut out = Tensor3::zeros(d);
        let src = self.value(x).data();
        let mut buf = Vec::new();
        for i in 0..n {
            for (v, nbrs) in adj.iter().enumerate() {
                if nbrs.is_empty() {
                    continue;
                }
                let dst = (i * c + v) * block;
                for e in 0..block {
                    buf.clear();
                    buf.extend(nbrs.iter().map(|&j| src[(i * c + j) * block + e]));
                    out.data_mut()[dst + e] = ordered_sum(&mut buf);
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::NeighborSum { x, adj }, ng))
    }

    /// `(G,1,F) -> (reps·G, time, F)`, row `r·G + g` copying row `g`.
    pub fn broadcast(&mut self, x: Var, reps: usize, time: usize) -> Result<Var> {
        let d = self.dims(x);
        if d.time != 1 || reps == 0 || time == 0 {
            return Err(shape_err("broadcast", d, Dims::new(reps.max(1), time.max(1), 1)));
        }
        let out_dims = Dims::new(reps * d.instances, time, d.channels);
        let mut data = Vec::with_capacity(out_dims.len());
        let src = self.value(x).data();
        for _ in 0..reps {
            for g in 0..d.instances {
                let row = &src[g * d.channels..(g + 1) * d.channels];
                for _ in 0..time {
                    data.extend_from_slice(row);
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor3::from_vec(out_dims, data)?, Op::Broadcast { x, reps }, ng))
    }

    /// `(G,T,F) -> (reps·G, T, F)`, row `r·G + g` copying row `g`.
    pub fn tile(&mut self, x: Var, reps: usize) -> Result<Var> {
        let d = self.dims(x);
        if reps == 0 {
            return Err(shape_err("tile", d, Dims::new(1, d.time, d.channels)));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(reps * src.len());
        for _ in 0..reps {
            data.extend_from_slice(src);
        }
        let out = Tensor3::from_vec(Dims::new(reps * d.instances, d.time, d.channels), data)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Tile { x, reps }, ng))
    }

    /// `(I,T,C) -> (I·C, T, 1)`: every sensor becomes its own univariate series.
    pub fn unfold_sensors(&mut self, x: Var) -> Var {
        let d = self.dims(x);
        let src = self.value(x);
        let out = Tensor3::from_fn(Dims::new(d.instances * d.channels, d.time, 1), |r, t, _| {
            src.get(r / d.channels, t, r % d.channels)
        });
        let ng = self.ng(x);
        self.push(out, Op::UnfoldSensors(x), ng)
    }

    /// `(I·C, 1, H) -> (I, H, C)`: per-sensor outputs back to frames × sensors.
    pub fn fold_sensors(&mut self, x: Var, instances: usize) -> Result<Var> {
        let d = self.dims(x);
        if d.time != 1 || instances == 0 || !d.instances.is_multiple_of(instances) {
            return Err(shape_err("fold_sensors", d, Dims::new(instances.max(1), 1, 1)));
        }
        let c = d.instances / instances;
        let src = self.value(x);
        let out = Tensor3::from_fn(Dims::new(instances, d.channels, c), |i, h, s| {
            src.get(i * c + s, 0, h)
        });
        let ng = self.ng(x);
        Ok(self.push(out, Op::FoldSensors { x, instances }, ng))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.ng(x);
        self.push(Tensor3::scalar(s), Op::SumAll(x), ng)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.sum() / v.len() as f64;
        let ng = self.ng(x);
        self.push(Tensor3::scalar(s), Op::MeanAll(x), ng)
    }

    /// Reverse sweep from a scalar node. Gradients are kept for leaves only;
    /// interior gradients are released as soon as they have been propagated.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let d = self.dims(loss);
        if d != Dims::scalar() {
            return Err(Error::NonScalarLoss(d));
        }
        let mut grads: Vec<Option<Tensor3>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].needs_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor3::scalar(1.0));
        for n in (0..=loss.0).rev() {
            let node = &self.nodes[n];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[n].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn acc<F: FnOnce(&mut [f64])>(&self, grads: &mut [Option<Tensor3>], v: Var, f: F) {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| Tensor3::zeros(node.value.dims()));
        f(slot.data_mut());
    }

    fn propagate(&self, node: &Node, g: &Tensor3, grads: &mut [Option<Tensor3>]) {
        let gd = g.data();
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(x, w) => {
                let xd = self.dims(*x);
                let wd = self.dims(*w);
                let (k_in, k_out) = (xd.channels, wd.channels);
                let wv = self.value(*w).data();
                self.acc(grads, *x, |dx| {
                    for (dx_row, g_row) in dx.chunks_exact_mut(k_in).zip(gd.chunks_exact(k_out)) {
                        for (k, dxk) in dx_row.iter_mut().enumerate() {
                            let w_row = &wv[k * k_out..(k + 1) * k_out];
                            *dxk += dot(w_row, g_row);
                        }
                    }
                });
                let xv = self.value(*x).data();
                self.acc(grads, *w, |dw| {
                    for (x_row, g_row) in xv.chunks_exact(k_in).zip(gd.chunks_exact(k_out)) {
                        for (k, &xk) in x_row.iter().enumerate() {
                            if xk == 0.0 {
                                continue;
                            }
                            axpy(xk, g_row, &mut dw[k * k_out..(k + 1) * k_out]);
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |d| axpy(1.0, gd, d));
                self.acc(grads, *b, |d| axpy(1.0, gd, d));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |d| axpy(1.0, gd, d));
                self.acc(grads, *b, |d| axpy(-1.0, gd, d));
            }
            Op::Mul(a, b) => {
                let bv = self.value(*b).data();
                self.acc(grads, *a, |d| {
                    for ((o, &gi), &bi) in d.iter_mut().zip(gd).zip(bv) {
                        *o += gi * bi;
                    }
                });
                let av = self.value(*a).data();
                self.acc(grads, *b, |d| {
                    for ((o, &gi), &ai) in d.iter_mut().zip(gd).zip(av) {
                        *o += gi * ai;
                    }
                });
            }
            Op::AddBias(x, b) => {
                self.acc(grads, *x, |d| axpy(1.0, gd, d));
                let c = self.dims(*b).channels;
                self.acc(grads, *b, |d| {
                    for row in gd.chunks_exact(c) {
                        axpy(1.0, row, d);
                    }
                });
            }
            Op::Scale(x, k) => self.acc(grads, *x, |d| axpy(*k, gd, d)),
            Op::Sigmoid(x) => self.acc(grads, *x, |d| {
                for ((o, &gi), &yi) in d.iter_mut().zip(gd).zip(y) {
                    *o += gi * yi * (1.0 - yi);
                }
            }),
            Op::Tanh(x) => self.acc(grads, *x, |d| {
                for ((o, &gi), &yi) in d.iter_mut().zip(gd).zip(y) {
                    *o += gi * (1.0 - yi * yi);
                }
            }),
            Op::ConcatChannels(parts) => {
                let width = node.value.dims().channels;
                let mut offset = 0;
                for &p in parts {
                    let c = self.dims(p).channels;
                    self.acc(grads, p, |d| {
                        for (d_row, g_row) in d.chunks_exact_mut(c).zip(gd.chunks_exact(width)) {
                            axpy(1.0, &g_row[offset..offset + c], d_row);
                        }
                    });
                    offset += c;
                }
            }
            Op::ConcatTime(parts) => {
                let od = node.value.dims();
                let mut offset = 0;
                for &p in parts {
                    let pd = self.dims(p);
                    let block = pd.time * pd.channels;
                    self.acc(grads, p, |d| {
                        for i in 0..pd.instances {
                            let src = (i * od.time + offset) * od.channels;
                            axpy(1.0, &gd[src..src + block], &mut d[i * block..(i + 1) * block]);
                        }
                    });
                    offset += pd.time;
                }
            }
            Op::SliceTime { x, start } => {
                let xd = self.dims(*x);
                let od = node.value.dims();
                let block = od.time * od.channels;
                self.acc(grads, *x, |d| {
                    for i in 0..xd.instances {
                        let dst = (i * xd.time + start) * xd.channels;
                        axpy(1.0, &gd[i * block..(i + 1) * block], &mut d[dst..dst + block]);
                    }
                });
            }
            Op::MeanInstances { x, groups } => {
                let xd = self.dims(*x);
                let n = xd.instances / groups;
                let block = xd.time * xd.channels;
                let inv = 1.0 / n as f64;
                self.acc(grads, *x, |d| {
                    for i in 0..n {
                        for g in 0..*groups {
                            let dst = (i * groups + g) * block;
                            axpy(inv, &gd[g * block..(g + 1) * block], &mut d[dst..dst + block]);
                        }
                    }
                });
            }
            Op::NeighborSum { x, adj } => {
                let xd = self.dims(*x);
                let c = adj.len();
                let n = xd.instances / c;
                let block = xd.time * xd.channels;
                self.acc(grads, *x, |d| {
                    for i in 0..n {
                        for (v, nbrs) in adj.iter().enumerate() {
                            let src = (i * c + v) * block;
                            for &j in nbrs {
                                let dst = (i * c + j) * block;
                                axpy(1.0, &gd[src..src + block], &mut d[dst..dst + block]);
                            }
                        }
                    }
                });
            }
            Op::Broadcast { x, reps } => {
                let xd = self.dims(*x);
                let od = node.value.dims();
                let f = xd.channels;
                self.acc(grads, *x, |d| {
                    for r in 0..*reps {
                        for g in 0..xd.instances {
                            for t in 0..od.time {
                                let src = ((r * xd.instances + g) * od.time + t) * f;
                                axpy(1.0, &gd[src..src + f], &mut d[g * f..(g + 1) * f]);
                            }
                        }
                    }
                });
            }
            Op::Tile { x, reps } => {
                let n = self.value(*x).len();
                self.acc(grads, *x, |d| {
                    for r in 0..*reps {
                        axpy(1.0, &gd[r * n..(r + 1) * n], d);
                    }
                });
            }
            Op::UnfoldSensors(x) => {
                let xd = self.dims(*x);
                let c = xd.channels;
                self.acc(grads, *x, |d| {
                    for r in 0..xd.instances * c {
                        let (i, s) = (r / c, r % c);
                        for t in 0..xd.time {
                            d[(i * xd.time + t) * c + s] += gd[r * xd.time + t];
                        }
                    }
                });
            }
            Op::FoldSensors { x, instances } => {
                let xd = self.dims(*x);
                let c = xd.instances / instances;
                let h = xd.channels;
                self.acc(grads, *x, |d| {
                    for i in 0..*instances {
                        for s in 0..c {
                            for k in 0..h {
                                d[(i * c + s) * h + k] += gd[(i * h + k) * c + s];
                            }
                        }
                    }
                });
            }
            Op::SumAll(x) => {
                let g0 = gd[0];
                self.acc(grads, *x, |d| d.iter_mut().for_each(|o| *o += g0));
            }
            Op::MeanAll(x) => {
                let g0 = gd[0] / self.value(*x).len() as f64;
                self.acc(grads, *x, |d| d.iter_mut().for_each(|o| *o += g0));
            }
        }
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor3>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor3> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `dims` when `v` is not reachable from the loss.
    pub fn take_or_zeros(&mut self, v: Var, dims: Dims) -> Tensor3 {
        self.grads
            .get_mut(v.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor3::zeros(dims))
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn matmul_rows(x: &[f64], w: &[f64], out: &mut [f64], k_in: usize, k_out: usize) {
    for (x_row, o_row) in x.chunks_exact(k_in).zip(out.chunks_exact_mut(k_out)) {
        for (k, &xk) in x_row.iter().enumerate() {
            if xk == 0.0 {
                continue;
            }
            axpy(xk, &w[k * k_out..(k + 1) * k_out], o_row);
        }
    }
}
