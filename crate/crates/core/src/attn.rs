//! Bi-directional attention between two encoded sequences.
//!
//! Forward attention: a co-attention matrix M = S1 W S2ᵀ is row-softmaxed,
//! broadcast against S1, and summed back over the second sequence axis.
//! Backward attention: M is column-maxed, softmaxed, used to take a convex
//! combination of S2 rows, and that summary modulates S1 element-wise.
//! Both outputs have S1's shape.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamId, Params};
use crate::tensor::{Tape, Var};

/// The trainable square mixing matrix of one attention block.
pub struct BiAttnWeights {
    pub w: ParamId, // [h x h]
}

impl BiAttnWeights {
    pub fn init(params: &mut Params, rng: &mut impl Rng, prefix: &str, h: usize) -> Self {
        let bound = 1.0 / (h as f64).sqrt();
        BiAttnWeights {
            w: params.insert_uniform(rng, format!("{prefix}.w"), &[h, h], bound),
        }
    }
}

/// Attention summaries plus the raw co-attention matrix, kept for
/// inspection and oracle comparison.
pub struct BiAttnOutput {
    pub forward: Var,     // [k1 x h]
    pub backward: Var,    // [k1 x h]
    pub coattention: Var, // [k1 x k2]
}

/// M[i][j] = S1[i] · W · S2[j].
pub fn coattention(tape: &mut Tape, s1: Var, s2: Var, w: Var) -> Result<Var> {
    let (d1, d2, dw) = (tape.shape(s1), tape.shape(s2), tape.shape(w));
    if d1.len() != 2 || d2.len() != 2 || d1[1] != dw[0] || dw[1] != d2[1] {
        return Err(Error::dim(format!(
            "coattention feature dims disagree: S1 {d1:?}, W {dw:?}, S2 {d2:?}"
        )));
    }
    let s1w = tape.matmul(s1, w)?;
    let s2t = tape.transpose2(s2)?;
    tape.matmul(s1w, s2t)
}

/// Row-softmax M, broadcast against S1, and sum over the second axis.
pub fn forward_attention(tape: &mut Tape, m: Var, s1: Var) -> Result<Var> {
    let (k1, k2) = (tape.shape(m)[0], tape.shape(m)[1]);
    let d = tape.shape(s1)[1];
    let m1 = tape.softmax(m, 1)?;
    let m2 = tape.reshape(m1, &[k1, k2, 1])?;
    let s11 = tape.reshape(s1, &[k1, 1, d])?;
    let m3 = tape.mul(m2, s11)?; // [k1 x k2 x d]
    tape.sum_axis(m3, 1, false) // [k1 x d]
}

/// Column-max M, softmax, convex-combine S2 rows, modulate S1.
pub fn backward_attention(tape: &mut Tape, m: Var, s1: Var, s2: Var) -> Result<Var> {
    let k2 = tape.shape(m)[1];
    let colmax = tape.max_axis(m, 0, true)?; // [1 x k2]
    let m4 = tape.softmax(colmax, 1)?;
    let m5 = tape.reshape(m4, &[k2, 1])?;
    let m6 = tape.mul(m5, s2)?; // [k2 x d]
    let m7 = tape.sum_axis(m6, 0, true)?; // [1 x d]
    tape.mul(m7, s1) // broadcast to [k1 x d]
}

/// Full bi-attention; concatenation of the two summaries is the caller's
/// business.
pub fn biattend(tape: &mut Tape, s1: Var, s2: Var, weights: &BiAttnWeights, bound: &BoundParams) -> Result<BiAttnOutput> {
    let m = coattention(tape, s1, s2, bound.var(weights.w))?;
    let forward = forward_attention(tape, m, s1)?;
    let backward = backward_attention(tape, m, s1, s2)?;
    Ok(BiAttnOutput {
        forward,
        backward,
        coattention: m,
    })
}
