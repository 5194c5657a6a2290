//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a plain value: a shape plus row-major data. Differentiable
//! computation goes through a [`Tape`], which records every operation and
//! replays the chain rule backwards on demand. [`finite_diff_grad`] is the
//! independent oracle the tape is checked against.

mod gradcheck;
mod tape;

pub use gradcheck::{check_gradients, finite_diff_grad, GradReport};
pub use tape::{Tape, Var};

use crate::error::{Error, Result};

/// Dense n-dimensional array of f64, row-major.
///
/// Immutable by convention once it enters a tape; gradients are accumulated
/// in separate buffers owned by the tape, never in the tensor itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n = numel(&shape);
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel(shape)],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![1.0; numel(shape)],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// 2-D tensor from nested rows. Panics on ragged input (test helper).
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Tensor {
            shape: vec![r, c],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Scalar value of a 1-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        debug_assert_eq!(idx.len(), self.rank());
        let st = strides(&self.shape);
        let flat: usize = idx.iter().zip(&st).map(|(i, s)| i * s).sum();
        self.data[flat]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Max-norm of the data, useful for gradient diagnostics.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for a shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut st = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        st[i] = st[i + 1] * shape[i + 1];
    }
    st
}

/// NumPy-style broadcast of two shapes: right-aligned, each axis must agree
/// or be 1 on one side.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da == db || da == 1 || db == 1 {
            out[i] = da.max(db);
        } else {
            return Err(Error::dim(format!(
                "shapes {a:?} and {b:?} are not broadcast-compatible"
            )));
        }
    }
    Ok(out)
}

/// Effective strides for reading a tensor of shape `src` as if it had the
/// broadcast shape `dst`: stretched axes get stride 0.
pub(crate) fn broadcast_strides(src: &[usize], dst: &[usize]) -> Vec<usize> {
    let st = strides(src);
    let off = dst.len() - src.len();
    let mut eff = vec![0; dst.len()];
    for i in 0..dst.len() {
        if i >= off && src[i - off] != 1 {
            eff[i] = st[i - off];
        }
    }
    eff
}

/// Iterate flat offsets of a broadcast read: yields the source offset for
/// each element of the destination shape, in row-major destination order.
pub(crate) fn broadcast_offsets(src: &[usize], dst: &[usize]) -> Vec<usize> {
    let eff = broadcast_strides(src, dst);
    let n = numel(dst);
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; dst.len()];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(off);
        for ax in (0..dst.len()).rev() {
            idx[ax] += 1;
            off += eff[ax];
            if idx[ax] < dst[ax] {
                break;
            }
            off -= eff[ax] * dst[ax];
            idx[ax] = 0;
        }
    }
    out
}

/// Sum `grad` (of broadcast shape `from`) down to shape `to`, reversing a
/// broadcast: stretched axes are reduced, leading axes dropped.
pub(crate) fn sum_to(grad: &[f64], from: &[usize], to: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; numel(to)];
    for (dst_flat, src_off) in broadcast_offsets(to, from).into_iter().enumerate() {
        out[src_off] += grad[dst_flat];
    }
    out
}
