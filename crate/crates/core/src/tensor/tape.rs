//! Operation tape for reverse-mode differentiation.
//!
//! Every op pushes a node recording its inputs and enough forward state to
//! run its backward rule. Nodes only reference earlier nodes, so a single
//! reverse sweep over the tape is a valid reverse-topological order. The
//! graph is rebuilt per training step; the condition-slot count makes it
//! dynamic, so nothing is compiled or cached across steps.

use std::rc::Rc;

use super::{broadcast_offsets, broadcast_shape, numel, strides, sum_to, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`]. Only valid for the tape that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op {
    Leaf,
    Matmul { a: Var, b: Var },
    Softmax { x: Var, axis: usize },
    SumAxis { x: Var, axis: usize },
    /// `winners[i]` is the input flat index that produced output element `i`
    /// (ties at the lowest flat index, fixed at forward time).
    MaxAxis { x: Var, winners: Vec<usize> },
    SumAll { x: Var },
    Mul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Tanh { x: Var },
    Sigmoid { x: Var },
    Log { x: Var },
    Scale { x: Var, c: f64 },
    AddScalar { x: Var },
    Clamp { x: Var, lo: f64, hi: f64 },
    Concat { xs: Vec<Var>, axis: usize },
    Reshape { x: Var },
    Transpose { x: Var, perm: Vec<usize> },
    Narrow { x: Var, axis: usize, start: usize },
    GatherRows { table: Var, ids: Vec<usize> },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of executed ops with per-node gradient accumulators.
///
/// Single-threaded; independent tapes may run on separate threads.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.push_rc(Rc::new(value), op, needs_grad)
    }

    fn push_rc(&mut self, value: Rc<Tensor>, op: Op, needs_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite tensor entered the tape");
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Register `t` as a leaf. Gradients are only tracked when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    /// Leaf backed by a shared tensor; no data is copied.
    pub fn leaf_shared(&mut self, t: Rc<Tensor>, requires_grad: bool) -> Var {
        self.push_rc(t, Op::Leaf, requires_grad)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.constant(Tensor::zeros(shape))
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Tensor::scalar(x))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of `v`, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0].as_ref().map(|g| Tensor {
            shape: self.nodes[v.0].value.shape().to_vec(),
            data: g.clone(),
        })
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    // ---- ops ----------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(format!(
                "matmul needs [a x b]·[b x c], got {sa:?} and {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for kk in 0..k {
                let av = da[i * k + kk];
                if av == 0.0 {
                    continue;
                }
                let brow = &db[kk * n..(kk + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor {
                shape: vec![m, n],
                data: out,
            },
            Op::Matmul { a, b },
            needs,
        ))
    }

    /// Numerically stable softmax along `axis`; each slice sums to 1.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let data = self.value(x).data();
        let mut out = vec![0.0; data.len()];
        for_each_slice(&shape, axis, |idx| {
            let mx = idx.iter().map(|&i| data[i]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for &i in idx {
                let e = (data[i] - mx).exp();
                out[i] = e;
                z += e;
            }
            for &i in idx {
                out[i] /= z;
            }
        });
        let needs = self.needs(x);
        Ok(self.push(
            Tensor { shape, data: out },
            Op::Softmax { x, axis },
            needs,
        ))
    }

    /// Sum over one axis. `keepdim` keeps it as size 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!(
                "sum axis {axis} out of range for shape {shape:?}"
            )));
        }
        let data = self.value(x).data();
        let out_shape = reduced_shape(&shape, axis, keepdim);
        let mut out = vec![0.0; numel(&out_shape)];
        let mut slot = 0;
        for_each_slice(&shape, axis, |idx| {
            out[slot] = idx.iter().map(|&i| data[i]).sum();
            slot += 1;
        });
        let needs = self.needs(x);
        Ok(self.push(
            Tensor {
                shape: out_shape,
                data: out,
            },
            Op::SumAxis { x, axis },
            needs,
        ))
    }

    /// Max over one axis; gradient routes to the winning element only,
    /// ties broken to the lowest flat index.
    pub fn max_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!(
                "max axis {axis} out of range for shape {shape:?}"
            )));
        }
        let data = self.value(x).data();
        let out_shape = reduced_shape(&shape, axis, keepdim);
        let mut out = Vec::with_capacity(numel(&out_shape));
        let mut winners = Vec::with_capacity(numel(&out_shape));
        for_each_slice(&shape, axis, |idx| {
            let mut best = idx[0];
            for &i in &idx[1..] {
                if data[i] > data[best] {
                    best = i;
                }
            }
            out.push(data[best]);
            winners.push(best);
        });
        let needs = self.needs(x);
        Ok(self.push(
            Tensor {
                shape: out_shape,
                data: out,
            },
            Op::MaxAxis { x, winners },
            needs,
        ))
    }

    /// Sum of every element, as a [1] scalar.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::SumAll { x }, needs)
    }

    /// Element-wise product with broadcasting; size-1 axes stretch.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    /// Element-wise sum with broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    /// Element-wise difference with broadcasting.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(Var, Var) -> Op,
    ) -> Result<Var> {
        let out_shape = broadcast_shape(self.shape(a), self.shape(b))?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let oa = broadcast_offsets(self.shape(a), &out_shape);
        let ob = broadcast_offsets(self.shape(b), &out_shape);
        let out: Vec<f64> = oa
            .iter()
            .zip(&ob)
            .map(|(&ia, &ib)| f(da[ia], db[ib]))
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor {
                shape: out_shape,
                data: out,
            },
            op(a, b),
            needs,
        ))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.value(x).data().iter().map(|v| v.tanh()).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(Tensor { shape, data: out }, Op::Tanh { x }, needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(Tensor { shape, data: out }, Op::Sigmoid { x }, needs)
    }

    /// Natural log; rejects non-positive inputs. Callers clamp
    /// probabilities before taking logs.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data().iter().find(|v| **v <= 0.0) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        let out: Vec<f64> = self.value(x).data().iter().map(|v| v.ln()).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        Ok(self.push(Tensor { shape, data: out }, Op::Log { x }, needs))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out: Vec<f64> = self.value(x).data().iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(Tensor { shape, data: out }, Op::Scale { x, c }, needs)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out: Vec<f64> = self.value(x).data().iter().map(|v| v + c).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(Tensor { shape, data: out }, Op::AddScalar { x }, needs)
    }

    /// Clamp into [lo, hi]; gradient passes through in-range elements.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .map(|v| v.clamp(lo, hi))
            .collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(Tensor { shape, data: out }, Op::Clamp { x, lo, hi }, needs)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::contract("concat of zero tensors"));
        }
        let first = self.shape(xs[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::dim(format!(
                "concat axis {axis} out of range for shape {first:?}"
            )));
        }
        let mut axis_total = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::dim(format!(
                    "concat inputs disagree off-axis: {first:?} vs {s:?}"
                )));
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = vec![0.0; numel(&out_shape)];
        let mut off = 0;
        for &x in xs {
            let len = self.shape(x)[axis];
            let data = self.value(x).data();
            for o in 0..outer {
                let src = &data[o * len * inner..(o + 1) * len * inner];
                let dst_start = (o * axis_total + off) * inner;
                out[dst_start..dst_start + len * inner].copy_from_slice(src);
            }
            off += len;
        }
        let needs = xs.iter().any(|&x| self.needs(x));
        Ok(self.push(
            Tensor {
                shape: out_shape,
                data: out,
            },
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            needs,
        ))
    }

    /// Reinterpret the row-major data under a new shape of equal size.
    pub fn reshape(&mut self, x: Var, new_shape: &[usize]) -> Result<Var> {
        let old = self.shape(x);
        if numel(old) != numel(new_shape) {
            return Err(Error::dim(format!(
                "reshape {old:?} -> {new_shape:?} changes element count"
            )));
        }
        let t = Tensor {
            shape: new_shape.to_vec(),
            data: self.value(x).data().to_vec(),
        };
        let needs = self.needs(x);
        Ok(self.push(t, Op::Reshape { x }, needs))
    }

    /// Permute axes; `perm` must be a permutation of 0..rank.
    pub fn transpose(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len()
            || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::dim(format!(
                "transpose perm {perm:?} is not a permutation of shape {shape:?} axes"
            )));
        }
        let (out_shape, out) = permute_data(self.value(x).data(), &shape, perm);
        let needs = self.needs(x);
        Ok(self.push(
            Tensor {
                shape: out_shape,
                data: out,
            },
            Op::Transpose {
                x,
                perm: perm.to_vec(),
            },
            needs,
        ))
    }

    /// Swap the two axes of a matrix.
    pub fn transpose2(&mut self, x: Var) -> Result<Var> {
        self.transpose(x, &[1, 0])
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::dim(format!(
                "narrow axis {axis} range {start}..{} out of shape {shape:?}",
                start + len
            )));
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let data = self.value(x).data();
        let mut out = vec![0.0; numel(&out_shape)];
        for o in 0..outer {
            let src = (o * shape[axis] + start) * inner;
            out[o * len * inner..(o + 1) * len * inner]
                .copy_from_slice(&data[src..src + len * inner]);
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor {
                shape: out_shape,
                data: out,
            },
            Op::Narrow { x, axis, start },
            needs,
        ))
    }

    /// Select rows of a matrix by index (embedding lookup). Gradients
    /// scatter-add into the table; repeated ids accumulate.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table);
        if shape.len() != 2 {
            return Err(Error::dim(format!(
                "gather_rows needs a matrix table, got {shape:?}"
            )));
        }
        let (rows, cols) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::dim(format!(
                "row index {bad} out of range for table with {rows} rows"
            )));
        }
        let data = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            out.extend_from_slice(&data[i * cols..(i + 1) * cols]);
        }
        let needs = self.needs(table);
        Ok(self.push(
            Tensor {
                shape: vec![ids.len(), cols],
                data: out,
            },
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    // ---- backward -------------------------------------------------------

    /// Reverse sweep from a scalar loss. Leaf gradients accumulate across
    /// repeated calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        // Transient per-pass buffers: intermediate flows must not re-feed
        // earlier accumulated gradients on a second call.
        let mut pass: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        pass[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = pass[i].take() else { continue };
            self.propagate(i, &g, &mut pass);
            // fold into the persistent accumulator
            match &mut self.grads[i] {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn accum(pass: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
        match &mut pass[v.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&contrib) {
                    *a += b;
                }
            }
            slot => *slot = Some(contrib),
        }
    }

    fn propagate(&self, i: usize, g: &[f64], pass: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out_shape = node.value.shape();
        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    let mut ga = vec![0.0; m * k];
                    for ii in 0..m {
                        for j in 0..n {
                            let gv = g[ii * n + j];
                            if gv == 0.0 {
                                continue;
                            }
                            for kk in 0..k {
                                ga[ii * k + kk] += gv * db[kk * n + j];
                            }
                        }
                    }
                    Self::accum(pass, *a, ga);
                }
                if self.needs(*b) {
                    let mut gb = vec![0.0; k * n];
                    for ii in 0..m {
                        for kk in 0..k {
                            let av = da[ii * k + kk];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[kk * n + j] += av * g[ii * n + j];
                            }
                        }
                    }
                    Self::accum(pass, *b, gb);
                }
            }
            Op::Softmax { x, axis } => {
                if self.needs(*x) {
                    let y = node.value.data();
                    let mut gx = vec![0.0; y.len()];
                    for_each_slice(out_shape, *axis, |idx| {
                        let dot: f64 = idx.iter().map(|&i| g[i] * y[i]).sum();
                        for &i in idx {
                            gx[i] = y[i] * (g[i] - dot);
                        }
                    });
                    Self::accum(pass, *x, gx);
                }
            }
            Op::SumAxis { x, axis } => {
                if self.needs(*x) {
                    let in_shape = self.shape(*x);
                    let mut gx = vec![0.0; numel(in_shape)];
                    let mut slot = 0;
                    for_each_slice(in_shape, *axis, |idx| {
                        for &i in idx {
                            gx[i] = g[slot];
                        }
                        slot += 1;
                    });
                    Self::accum(pass, *x, gx);
                }
            }
            Op::MaxAxis { x, winners } => {
                if self.needs(*x) {
                    let mut gx = vec![0.0; self.value(*x).numel()];
                    for (slot, &w) in winners.iter().enumerate() {
                        gx[w] += g[slot];
                    }
                    Self::accum(pass, *x, gx);
                }
            }
            Op::SumAll { x } => {
                if self.needs(*x) {
                    Self::accum(pass, *x, vec![g[0]; self.value(*x).numel()]);
                }
            }
            Op::Mul { a, b } => {
                let oa = broadcast_offsets(self.shape(*a), out_shape);
                let ob = broadcast_offsets(self.shape(*b), out_shape);
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    let mut ga = vec![0.0; da.len()];
                    for (o, (&ia, &ib)) in oa.iter().zip(&ob).enumerate() {
                        ga[ia] += g[o] * db[ib];
                    }
                    Self::accum(pass, *a, ga);
                }
                if self.needs(*b) {
                    let mut gb = vec![0.0; db.len()];
                    for (o, (&ia, &ib)) in oa.iter().zip(&ob).enumerate() {
                        gb[ib] += g[o] * da[ia];
                    }
                    Self::accum(pass, *b, gb);
                }
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    Self::accum(pass, *a, sum_to(g, out_shape, self.shape(*a)));
                }
                if self.needs(*b) {
                    Self::accum(pass, *b, sum_to(g, out_shape, self.shape(*b)));
                }
            }
            Op::Sub { a, b } => {
                if self.needs(*a) {
                    Self::accum(pass, *a, sum_to(g, out_shape, self.shape(*a)));
                }
                if self.needs(*b) {
                    let gb: Vec<f64> = sum_to(g, out_shape, self.shape(*b))
                        .into_iter()
                        .map(|v| -v)
                        .collect();
                    Self::accum(pass, *b, gb);
                }
            }
            Op::Tanh { x } => {
                if self.needs(*x) {
                    let y = node.value.data();
                    let gx: Vec<f64> = g
                        .iter()
                        .zip(y)
                        .map(|(gv, yv)| gv * (1.0 - yv * yv))
                        .collect();
                    Self::accum(pass, *x, gx);
                }
            }
            Op::Sigmoid { x } => {
                if self.needs(*x) {
                    let y = node.value.data();
                    let gx: Vec<f64> = g
                        .iter()
                        .zip(y)
                        .map(|(gv, yv)| gv * yv * (1.0 - yv))
                        .collect();
                    Self::accum(pass, *x, gx);
                }
            }
            Op::Log { x } => {
                if self.needs(*x) {
                    let xv = self.value(*x).data();
                    let gx: Vec<f64> = g.iter().zip(xv).map(|(gv, v)| gv / v).collect();
                    Self::accum(pass, *x, gx);
                }
            }
            Op::Scale { x, c } => {
                if self.needs(*x) {
                    Self::accum(pass, *x, g.iter().map(|v| v * c).collect());
                }
            }
            Op::AddScalar { x } => {
                if self.needs(*x) {
                    Self::accum(pass, *x, g.to_vec());
                }
            }
            Op::Clamp { x, lo, hi } => {
                if self.needs(*x) {
                    let xv = self.value(*x).data();
                    let gx: Vec<f64> = g
                        .iter()
                        .zip(xv)
                        .map(|(gv, v)| if *v >= *lo && *v <= *hi { *gv } else { 0.0 })
                        .collect();
                    Self::accum(pass, *x, gx);
                }
            }
            Op::Concat { xs, axis } => {
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let total = out_shape[*axis];
                let mut off = 0;
                for &x in xs {
                    let len = self.shape(x)[*axis];
                    if self.needs(x) {
                        let mut gx = vec![0.0; self.value(x).numel()];
                        for o in 0..outer {
                            let src = (o * total + off) * inner;
                            gx[o * len * inner..(o + 1) * len * inner]
                                .copy_from_slice(&g[src..src + len * inner]);
                        }
                        Self::accum(pass, x, gx);
                    }
                    off += len;
                }
            }
            Op::Reshape { x } => {
                if self.needs(*x) {
                    Self::accum(pass, *x, g.to_vec());
                }
            }
            Op::Transpose { x, perm } => {
                if self.needs(*x) {
                    let mut inv = vec![0; perm.len()];
                    for (k, &p) in perm.iter().enumerate() {
                        inv[p] = k;
                    }
                    let (_, gx) = permute_data(g, out_shape, &inv);
                    Self::accum(pass, *x, gx);
                }
            }
            Op::Narrow { x, axis, start } => {
                if self.needs(*x) {
                    let in_shape = self.shape(*x);
                    let outer: usize = in_shape[..*axis].iter().product();
                    let inner: usize = in_shape[*axis + 1..].iter().product();
                    let len = out_shape[*axis];
                    let mut gx = vec![0.0; numel(in_shape)];
                    for o in 0..outer {
                        let dst = (o * in_shape[*axis] + start) * inner;
                        gx[dst..dst + len * inner]
                            .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                    }
                    Self::accum(pass, *x, gx);
                }
            }
            Op::GatherRows { table, ids } => {
                if self.needs(*table) {
                    let cols = self.shape(*table)[1];
                    let mut gt = vec![0.0; self.value(*table).numel()];
                    for (row, &id) in ids.iter().enumerate() {
                        for c in 0..cols {
                            gt[id * cols + c] += g[row * cols + c];
                        }
                    }
                    Self::accum(pass, *table, gt);
                }
            }
        }
    }
}

fn reduced_shape(shape: &[usize], axis: usize, keepdim: bool) -> Vec<usize> {
    let mut out = shape.to_vec();
    if keepdim {
        out[axis] = 1;
    } else {
        out.remove(axis);
        if out.is_empty() {
            out.push(1);
        }
    }
    out
}

/// Visit every 1-D slice along `axis`, passing the flat indices of its
/// elements in order. Slices are visited in row-major order of the
/// remaining axes.
fn for_each_slice(shape: &[usize], axis: usize, mut f: impl FnMut(&[usize])) {
    let len = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut idx = Vec::with_capacity(len);
    for o in 0..outer {
        for i in 0..inner {
            idx.clear();
            for l in 0..len {
                idx.push((o * len + l) * inner + i);
            }
            f(&idx);
        }
    }
}

fn permute_data(data: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    let n = data.len();
    let mut out = vec![0.0; n];
    let mut idx = vec![0usize; out_shape.len()];
    for slot in out.iter_mut() {
        let src: usize = idx
            .iter()
            .zip(perm)
            .map(|(&j, &p)| j * in_strides[p])
            .sum();
        *slot = data[src];
        for ax in (0..out_shape.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}
