//! The four prediction heads and their losses: select-column, aggregator,
//! WHERE condition count / column slots / operator slots / value pointer,
//! plus the weighted set loss for WHERE columns.

use rand::Rng;

use crate::attn::{biattend, BiAttnWeights};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamId, Params};
use crate::tensor::{Tape, Tensor, Var};

/// Probabilities entering a log are clamped into [PROB_EPS, 1 - PROB_EPS];
/// the set loss is undefined at exactly 0 or 1.
pub const PROB_EPS: f64 = 1e-7;

/// First maximum wins: ties break to the lowest index.
pub fn argmax(data: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in data.iter().enumerate().skip(1) {
        if *v > data[best] {
            best = i;
        }
    }
    best
}

/// Column scorer used by both the SELECT head and the WHERE column-slot
/// head: bi-attention between column and question encodings feeding a
/// one-logit-per-column projection.
pub struct ColumnScorer {
    pub attn: BiAttnWeights,
    w1: ParamId, // [2h x h]
    w2: ParamId, // [h x h]
    w3: ParamId, // [h x 1]
}

impl ColumnScorer {
    pub fn init(params: &mut Params, rng: &mut impl Rng, prefix: &str, h: usize) -> Self {
        let attn = BiAttnWeights::init(params, rng, &format!("{prefix}.attn"), h);
        let b2h = 1.0 / ((2 * h) as f64).sqrt();
        let bh = 1.0 / (h as f64).sqrt();
        ColumnScorer {
            attn,
            w1: params.insert_uniform(rng, format!("{prefix}.w1"), &[2 * h, h], b2h),
            w2: params.insert_uniform(rng, format!("{prefix}.w2"), &[h, h], bh),
            w3: params.insert_uniform(rng, format!("{prefix}.w3"), &[h, 1], bh),
        }
    }

    /// Probability distribution over columns: [c].
    pub fn probs(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        h_q: Var,
        h_col: Var,
    ) -> Result<Var> {
        let c = tape.shape(h_col)[0];
        if c == 0 {
            return Err(Error::contract("column scorer needs at least one column"));
        }
        if tape.shape(h_q)[0] == 0 {
            return Err(Error::contract("column scorer needs a nonempty question"));
        }
        let out = biattend(tape, h_col, h_q, &self.attn, bound)?;
        let cat = tape.concat(&[out.forward, out.backward], 1)?; // [c x 2h]
        let t1 = tape.matmul(cat, bound.var(self.w1))?;
        let t2 = tape.matmul(h_col, bound.var(self.w2))?;
        let pre = tape.add(t1, t2)?;
        let act = tape.tanh(pre);
        let logits2 = tape.matmul(act, bound.var(self.w3))?; // [c x 1]
        let logits = tape.reshape(logits2, &[c])?;
        tape.softmax(logits, 0)
    }
}

/// Question-level classifier: per-token scores summed over the question
/// axis, then softmaxed. Backs both the aggregator head (6 classes) and
/// the condition-count head (N + 1 classes).
pub struct QuestionClassifier {
    w1: ParamId, // [h x h]
    w2: ParamId, // [h x n_classes]
    pub n_classes: usize,
}

impl QuestionClassifier {
    pub fn init(
        params: &mut Params,
        rng: &mut impl Rng,
        prefix: &str,
        h: usize,
        n_classes: usize,
    ) -> Self {
        let bh = 1.0 / (h as f64).sqrt();
        QuestionClassifier {
            w1: params.insert_uniform(rng, format!("{prefix}.w1"), &[h, h], bh),
            w2: params.insert_uniform(rng, format!("{prefix}.w2"), &[h, n_classes], bh),
            n_classes,
        }
    }

    /// Pre-softmax logits: [n_classes]. Linear in duplicated question rows
    /// because scores are summed over the question axis.
    pub fn logits(&self, tape: &mut Tape, bound: &BoundParams, h_q: Var) -> Result<Var> {
        let t = tape.matmul(h_q, bound.var(self.w1))?;
        let act = tape.tanh(t);
        let scores = tape.matmul(act, bound.var(self.w2))?; // [q x n]
        tape.sum_axis(scores, 0, false) // [n]
    }

    pub fn probs(&self, tape: &mut Tape, bound: &BoundParams, h_q: Var) -> Result<Var> {
        let l = self.logits(tape, bound, h_q)?;
        tape.softmax(l, 0)
    }

    /// Arg-max class with ties to the lowest class index.
    pub fn predict(&self, tape: &mut Tape, bound: &BoundParams, h_q: Var) -> Result<usize> {
        let p = self.probs(tape, bound, h_q)?;
        Ok(argmax(tape.value(p).data()))
    }
}

/// Operator head: one 3-way distribution per condition slot.
pub struct OperatorHead {
    pub attn: BiAttnWeights,
    w1: ParamId, // [2h x h]
    w2: ParamId, // [h x h]
    w3: ParamId, // [h x 3]
}

impl OperatorHead {
    pub fn init(params: &mut Params, rng: &mut impl Rng, prefix: &str, h: usize) -> Self {
        let attn = BiAttnWeights::init(params, rng, &format!("{prefix}.attn"), h);
        let b2h = 1.0 / ((2 * h) as f64).sqrt();
        let bh = 1.0 / (h as f64).sqrt();
        OperatorHead {
            attn,
            w1: params.insert_uniform(rng, format!("{prefix}.w1"), &[2 * h, h], b2h),
            w2: params.insert_uniform(rng, format!("{prefix}.w2"), &[h, h], bh),
            w3: params.insert_uniform(rng, format!("{prefix}.w3"), &[h, 3], bh),
        }
    }

    /// [N x 3]; each row sums to 1. Rows of padded slots are ignored by
    /// the loss.
    pub fn probs(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        h_topcol: Var,
        h_q: Var,
    ) -> Result<Var> {
        let out = biattend(tape, h_topcol, h_q, &self.attn, bound)?;
        let cat = tape.concat(&[out.forward, out.backward], 1)?; // [N x 2h]
        let t1 = tape.matmul(cat, bound.var(self.w1))?;
        let t2 = tape.matmul(h_topcol, bound.var(self.w2))?;
        let pre = tape.add(t1, t2)?;
        let act = tape.tanh(pre);
        let logits = tape.matmul(act, bound.var(self.w3))?; // [N x 3]
        tape.softmax(logits, 1)
    }
}

/// Pointer scorer of the value decoder: combines decoder state, question
/// positions, and the slot's column representation into a distribution
/// over question positions plus END.
pub struct PointerScorer {
    w1: ParamId, // [h x h], decoder state
    w2: ParamId, // [h x h], question positions
    w3: ParamId, // [h x h], column slot
    w4: ParamId, // [h x 1]
}

impl PointerScorer {
    pub fn init(params: &mut Params, rng: &mut impl Rng, prefix: &str, h: usize) -> Self {
        let bh = 1.0 / (h as f64).sqrt();
        PointerScorer {
            w1: params.insert_uniform(rng, format!("{prefix}.w1"), &[h, h], bh),
            w2: params.insert_uniform(rng, format!("{prefix}.w2"), &[h, h], bh),
            w3: params.insert_uniform(rng, format!("{prefix}.w3"), &[h, h], bh),
            w4: params.insert_uniform(rng, format!("{prefix}.w4"), &[h, 1], bh),
        }
    }

    /// Distribution over the q+1 pointer targets (question positions plus
    /// the END sentinel at the last row of `h_q_ext`).
    pub fn probs(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        dec_state: Var,
        h_q_ext: Var,
        topcol_row: Var,
    ) -> Result<Var> {
        let targets = tape.shape(h_q_ext)[0];
        let t1 = tape.matmul(dec_state, bound.var(self.w1))?; // [1 x h]
        let t2 = tape.matmul(h_q_ext, bound.var(self.w2))?; // [targets x h]
        let t3 = tape.matmul(topcol_row, bound.var(self.w3))?; // [1 x h]
        let slot_bias = tape.add(t1, t3)?;
        let pre = tape.add(t2, slot_bias)?; // broadcast over rows
        let act = tape.tanh(pre);
        let scores = tape.matmul(act, bound.var(self.w4))?; // [targets x 1]
        let flat = tape.reshape(scores, &[targets])?;
        tape.softmax(flat, 0)
    }
}

/// Choose the top-k columns by probability, ties to the lower index.
pub fn top_k_columns(p_col: &Tensor, k: usize) -> Result<Vec<usize>> {
    let c = p_col.numel();
    if k > c {
        return Err(Error::contract(format!(
            "cannot choose top {k} of {c} columns"
        )));
    }
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| {
        p_col.data()[b]
            .partial_cmp(&p_col.data()[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    Ok(order[..k].to_vec())
}

/// Rows of `h_col` for the chosen columns, zero-padded to `n_slots` rows.
pub fn build_topcol(
    tape: &mut Tape,
    h_col: Var,
    chosen: &[usize],
    n_slots: usize,
) -> Result<Var> {
    let h = tape.shape(h_col)[1];
    if chosen.len() > n_slots {
        return Err(Error::contract(format!(
            "{} chosen columns exceed {n_slots} slots",
            chosen.len()
        )));
    }
    if chosen.is_empty() {
        return Ok(tape.zeros(&[n_slots, h]));
    }
    let picked = tape.gather_rows(h_col, chosen)?;
    if chosen.len() == n_slots {
        return Ok(picked);
    }
    let pad = tape.zeros(&[n_slots - chosen.len(), h]);
    tape.concat(&[picked, pad], 0)
}

// ---- losses -------------------------------------------------------------

/// −log p[target] with clamped probability. `probs` is 1-D.
pub fn cross_entropy(tape: &mut Tape, probs: Var, target: usize) -> Result<Var> {
    let n = tape.value(probs).numel();
    if target >= n {
        return Err(Error::contract(format!(
            "cross-entropy target {target} out of range {n}"
        )));
    }
    let clamped = tape.clamp(probs, PROB_EPS, 1.0 - PROB_EPS);
    let logs = tape.log(clamped)?;
    let mut mask = Tensor::zeros(&[n]);
    mask.data_mut()[target] = 1.0;
    let m = tape.constant(mask);
    let picked = tape.mul(logs, m)?;
    let s = tape.sum_all(picked);
    Ok(tape.neg(s))
}

/// Cross-entropy of one row of a [N x n] distribution matrix.
pub fn row_cross_entropy(tape: &mut Tape, probs: Var, row: usize, target: usize) -> Result<Var> {
    let n = tape.shape(probs)[1];
    let r = tape.narrow(probs, 0, row, 1)?;
    let flat = tape.reshape(r, &[n])?;
    cross_entropy(tape, flat, target)
}

/// Weighted set loss over WHERE columns:
/// `−Σ_j (γ·C_j·log p_j + (1−C_j)·log(1−p_j))` with C_j = 1 for gold
/// columns. γ > 1 penalizes missing gold columns harder than spurious ones.
pub fn where_column_loss(
    tape: &mut Tape,
    p_col: Var,
    gold_cols: &[usize],
    gamma: f64,
) -> Result<Var> {
    let c = tape.value(p_col).numel();
    let clamped = tape.clamp(p_col, PROB_EPS, 1.0 - PROB_EPS);
    let log_p = tape.log(clamped)?;
    let neg_p = tape.neg(clamped);
    let one_minus = tape.add_scalar(neg_p, 1.0);
    let log_q = tape.log(one_minus)?;

    let mut pos = Tensor::zeros(&[c]);
    let mut neg = Tensor::full(&[c], 1.0);
    for &j in gold_cols {
        if j >= c {
            return Err(Error::contract(format!(
                "gold column {j} out of range {c}"
            )));
        }
        pos.data_mut()[j] = gamma;
        neg.data_mut()[j] = 0.0;
    }
    let pos = tape.constant(pos);
    let neg = tape.constant(neg);
    let pos_term = tape.mul(pos, log_p)?;
    let neg_term = tape.mul(neg, log_q)?;
    let total = tape.add(pos_term, neg_term)?;
    let s = tape.sum_all(total);
    Ok(tape.neg(s))
}

/// Joint objective: plain sum of the component losses.
pub fn total_loss(tape: &mut Tape, parts: &[Var]) -> Result<Var> {
    let mut acc = match parts.first() {
        Some(&v) => v,
        None => return Ok(tape.scalar(0.0)),
    };
    for &p in &parts[1..] {
        acc = tape.add(acc, p)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        t
    }

    #[test]
    fn single_column_select_is_certain() {
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let head = ColumnScorer::init(&mut params, &mut rng, "sel", 4);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, |_| false);
        let h_q = tape.constant(rand_t(&mut rng, &[3, 4]));
        let h_col = tape.constant(rand_t(&mut rng, &[1, 4]));
        let p = head.probs(&mut tape, &bound, h_q, h_col).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0]);
    }

    #[test]
    fn zero_output_weights_give_uniform_columns() {
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let head = ColumnScorer::init(&mut params, &mut rng, "sel", 4);
        params.set(head.w3, Tensor::zeros(&[4, 1])).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, |_| false);
        let h_q = tape.constant(rand_t(&mut rng, &[3, 4]));
        let h_col = tape.constant(rand_t(&mut rng, &[5, 4]));
        let p = head.probs(&mut tape, &bound, h_q, h_col).unwrap();
        for v in tape.value(p).data() {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_columns_are_a_contract_error() {
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let head = ColumnScorer::init(&mut params, &mut rng, "sel", 4);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, |_| false);
        let h_q = tape.constant(rand_t(&mut rng, &[3, 4]));
        let h_col = tape.zeros(&[0, 4]);
        assert!(head.probs(&mut tape, &bound, h_q, h_col).is_err());
    }

    #[test]
    fn classifier_uniform_when_output_weights_zero() {
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let agg = QuestionClassifier::init(&mut params, &mut rng, "agg", 4, 6);
        params.set(agg.w2, Tensor::zeros(&[4, 6])).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, |_| false);
        let h_q = tape.constant(rand_t(&mut rng, &[3, 4]));
        let p = agg.probs(&mut tape, &bound, h_q).unwrap();
        for v in tape.value(p).data() {
            assert!((v - 1.0 / 6.0).abs() < 1e-12);
        }
        // all-equal logits: arg-max ties to class 0
        assert_eq!(agg.predict(&mut tape, &bound, h_q).unwrap(), 0);
    }

    #[test]
    fn classifier_logits_are_linear_in_duplicated_questions() {
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let head = QuestionClassifier::init(&mut params, &mut rng, "agg", 4, 6);
        let h = rand_t(&mut rng, &[2, 4]);
        let mut doubled = Tensor::zeros(&[4, 4]);
        doubled.data_mut()[..8].copy_from_slice(h.data());
        doubled.data_mut()[8..].copy_from_slice(h.data());
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, |_| false);
        let hq = tape.constant(h);
        let hq2 = tape.constant(doubled);
        let l1 = head.logits(&mut tape, &bound, hq).unwrap();
        let l2 = head.logits(&mut tape, &bound, hq2).unwrap();
        for (a, b) in tape.value(l1).data().iter().zip(tape.value(l2).data()) {
            assert!((2.0 * a - b).abs() < 1e-12, "logits must double exactly");
        }
    }

    #[test]
    fn hand_built_weights_select_class_two() {
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let head = QuestionClassifier::init(&mut params, &mut rng, "num", 2, 5);
        params
            .set(head.w1, Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]))
            .unwrap();
        let mut w2 = Tensor::zeros(&[2, 5]);
        w2.data_mut()[2] = 1.0; // row 0, class 2
        w2.data_mut()[5 + 2] = 1.0; // row 1, class 2
        params.set(head.w2, w2).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, |_| false);
        let h_q = tape.constant(Tensor::from_rows(&[vec![1.0, 1.0]]));
        assert_eq!(head.predict(&mut tape, &bound, h_q).unwrap(), 2);
    }

    #[test]
    fn operator_rows_are_distributions() {
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let head = OperatorHead::init(&mut params, &mut rng, "op", 4);
        params.set(head.w3, Tensor::zeros(&[4, 3])).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, |_| false);
        let h_top = tape.constant(rand_t(&mut rng, &[4, 4]));
        let h_q = tape.constant(rand_t(&mut rng, &[3, 4]));
        let p = head.probs(&mut tape, &bound, h_top, h_q).unwrap();
        assert_eq!(tape.shape(p), &[4, 3]);
        for row in tape.value(p).data().chunks(3) {
            for v in row {
                assert!((v - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn top_k_rules() {
        let p = Tensor::new(vec![2], vec![0.3, 0.7]).unwrap();
        assert_eq!(top_k_columns(&p, 1).unwrap(), vec![1]);
        let tie = Tensor::new(vec![2], vec![0.5, 0.5]).unwrap();
        assert_eq!(top_k_columns(&tie, 1).unwrap(), vec![0]);
        assert!(top_k_columns(&tie, 3).is_err());
        assert_eq!(top_k_columns(&tie, 0).unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn topcol_padding() {
        let mut tape = Tape::new();
        let h_col = tape.constant(Tensor::from_rows(&[
            vec![1.0, 2.0],
            vec![3.0, 4.0],
            vec![5.0, 6.0],
        ]));
        let top = build_topcol(&mut tape, h_col, &[2], 4).unwrap();
        assert_eq!(tape.shape(top), &[4, 2]);
        assert_eq!(
            tape.value(top).data(),
            &[5.0, 6.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
        let empty = build_topcol(&mut tape, h_col, &[], 4).unwrap();
        assert!(tape.value(empty).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn where_column_loss_closed_form() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::new(vec![2], vec![0.5, 0.5]).unwrap());
        let loss = where_column_loss(&mut tape, p, &[0], 3.0).unwrap();
        let want = 4.0 * 2f64.ln();
        assert!(
            (tape.value(loss).item().unwrap() - want).abs() < 1e-9,
            "got {}",
            tape.value(loss).item().unwrap()
        );
    }

    #[test]
    fn where_column_loss_vanishes_on_perfect_prediction() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::new(vec![2], vec![1.0, 0.0]).unwrap());
        let loss = where_column_loss(&mut tape, p, &[0], 3.0).unwrap();
        assert!(tape.value(loss).item().unwrap() < 1e-5);
    }

    #[test]
    fn gamma_one_is_plain_bernoulli_cross_entropy() {
        let mut tape = Tape::new();
        let probs = [0.2, 0.9, 0.4];
        let p = tape.constant(Tensor::new(vec![3], probs.to_vec()).unwrap());
        let loss = where_column_loss(&mut tape, p, &[1], 1.0).unwrap();
        let want: f64 = -(0.9f64.ln() + 0.8f64.ln() + 0.6f64.ln());
        assert!((tape.value(loss).item().unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn total_loss_sums_components() {
        let mut tape = Tape::new();
        let a = tape.scalar(0.0);
        let b = tape.scalar(0.0);
        let zero = total_loss(&mut tape, &[a, b]).unwrap();
        assert_eq!(tape.value(zero).item().unwrap(), 0.0);
        let c = tape.scalar(1.5);
        let d = tape.scalar(2.25);
        let s = total_loss(&mut tape, &[c, d]).unwrap();
        assert_eq!(tape.value(s).item().unwrap(), 3.75);
    }

    #[test]
    fn cross_entropy_picks_target() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::new(vec![3], vec![0.5, 0.25, 0.25]).unwrap());
        let l = cross_entropy(&mut tape, p, 0).unwrap();
        assert!((tape.value(l).item().unwrap() - 2f64.ln().abs()).abs() < 1e-9);
        assert!(cross_entropy(&mut tape, p, 3).is_err());
    }
}
