//! LSTM cells, the 2-layer bidirectional encoder, and the unidirectional
//! decoder stack. Every consumer owns independent weights; only the word
//! embedding is shared across components.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamId, Params};
use crate::tensor::{Tape, Tensor, Var};
use crate::TrainRng;

/// Encoder shape contract. `hidden` is per direction; the bidirectional
/// output dimension is `2 * hidden`.
#[derive(Debug, Clone)]
pub struct LstmSpec {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    /// Applied between stacked layers at train time only.
    pub dropout: f64,
    pub bidirectional: bool,
}

impl LstmSpec {
    pub fn bidirectional(input_dim: usize, hidden: usize, layers: usize, dropout: f64) -> Self {
        LstmSpec {
            input_dim,
            hidden,
            layers,
            dropout,
            bidirectional: true,
        }
    }

    pub fn output_dim(&self) -> usize {
        if self.bidirectional {
            2 * self.hidden
        } else {
            self.hidden
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::Config(format!("degenerate LSTM spec {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0,1)", self.dropout)));
        }
        Ok(())
    }
}

/// Weights of a single LSTM cell. Gate layout along the 4H axis is
/// input, forget, candidate, output.
pub struct LstmCellWeights {
    pub w_ih: ParamId, // [in x 4H]
    pub w_hh: ParamId, // [H x 4H]
    pub bias: ParamId, // [1 x 4H]
    hidden: usize,
}

impl LstmCellWeights {
    pub fn init(
        params: &mut Params,
        rng: &mut impl Rng,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = params.insert_uniform(rng, format!("{prefix}.w_ih"), &[input_dim, 4 * hidden], bound);
        let w_hh = params.insert_uniform(rng, format!("{prefix}.w_hh"), &[hidden, 4 * hidden], bound);
        // forget-gate bias starts at 1 so early training does not wipe state
        let mut b = Tensor::zeros(&[1, 4 * hidden]);
        for v in &mut b.data_mut()[hidden..2 * hidden] {
            *v = 1.0;
        }
        let bias = params.insert(format!("{prefix}.b"), b);
        LstmCellWeights {
            w_ih,
            w_hh,
            bias,
            hidden,
        }
    }

    /// One step: returns (h_t, c_t), each [1 x H].
    pub fn step(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> Result<(Var, Var)> {
        let hid = self.hidden;
        let xi = tape.matmul(x, bound.var(self.w_ih))?;
        let hh = tape.matmul(h_prev, bound.var(self.w_hh))?;
        let lin = tape.add(xi, hh)?;
        let gates = tape.add(lin, bound.var(self.bias))?; // [1 x 4H]
        let i_raw = tape.narrow(gates, 1, 0, hid)?;
        let f_raw = tape.narrow(gates, 1, hid, hid)?;
        let g_raw = tape.narrow(gates, 1, 2 * hid, hid)?;
        let o_raw = tape.narrow(gates, 1, 3 * hid, hid)?;
        let i = tape.sigmoid(i_raw);
        let f = tape.sigmoid(f_raw);
        let g = tape.tanh(g_raw);
        let o = tape.sigmoid(o_raw);
        let keep = tape.mul(f, c_prev)?;
        let write = tape.mul(i, g)?;
        let c_t = tape.add(keep, write)?;
        let c_act = tape.tanh(c_t);
        let h_t = tape.mul(o, c_act)?;
        Ok((h_t, c_t))
    }
}

/// Inverted dropout: scales kept activations by 1/keep so inference is a
/// no-op. Identity unless a training rng is supplied.
pub fn dropout(
    tape: &mut Tape,
    x: Var,
    p: f64,
    rng: &mut Option<&mut TrainRng>,
) -> Result<Var> {
    let Some(rng) = rng.as_deref_mut() else { return Ok(x) };
    if p <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - p;
    let shape = tape.shape(x).to_vec();
    let mut mask = Tensor::zeros(&shape);
    for v in mask.data_mut() {
        *v = if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 };
    }
    let m = tape.constant(mask);
    tape.mul(x, m)
}

/// Run one direction over the rows of `seq`, returning per-step hidden
/// states (in input order) and the final (h, c).
fn run_direction(
    tape: &mut Tape,
    bound: &BoundParams,
    cell: &LstmCellWeights,
    seq: Var,
    reverse: bool,
) -> Result<(Vec<Var>, Var)> {
    let q = tape.shape(seq)[0];
    let mut h = tape.zeros(&[1, cell.hidden]);
    let mut c = tape.zeros(&[1, cell.hidden]);
    let mut states = vec![h; q];
    let order: Vec<usize> = if reverse {
        (0..q).rev().collect()
    } else {
        (0..q).collect()
    };
    for t in order {
        let x = tape.narrow(seq, 0, t, 1)?;
        let (h_t, c_t) = cell.step(tape, bound, x, h, c)?;
        h = h_t;
        c = c_t;
        states[t] = h_t;
    }
    Ok((states, h))
}

/// Stacked bidirectional encoder producing [q x 2H] plus the concatenated
/// final states of the top layer as a [1 x 2H] summary.
pub struct BiLstm {
    spec: LstmSpec,
    fw: Vec<LstmCellWeights>,
    bw: Vec<LstmCellWeights>,
}

impl BiLstm {
    pub fn init(
        params: &mut Params,
        rng: &mut impl Rng,
        prefix: &str,
        spec: LstmSpec,
    ) -> Result<Self> {
        spec.validate()?;
        if !spec.bidirectional {
            return Err(Error::Config("BiLstm needs a bidirectional spec".into()));
        }
        let mut fw = Vec::new();
        let mut bw = Vec::new();
        for l in 0..spec.layers {
            let in_dim = if l == 0 { spec.input_dim } else { spec.output_dim() };
            fw.push(LstmCellWeights::init(
                params,
                rng,
                &format!("{prefix}.l{l}.fw"),
                in_dim,
                spec.hidden,
            ));
            bw.push(LstmCellWeights::init(
                params,
                rng,
                &format!("{prefix}.l{l}.bw"),
                in_dim,
                spec.hidden,
            ));
        }
        Ok(BiLstm { spec, fw, bw })
    }

    pub fn spec(&self) -> &LstmSpec {
        &self.spec
    }

    pub fn encode(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        seq: Var,
        train_rng: Option<&mut TrainRng>,
    ) -> Result<Var> {
        Ok(self.encode_with_summary(tape, bound, seq, train_rng)?.0)
    }

    /// Returns (per-step outputs [q x 2H], summary [1 x 2H]).
    pub fn encode_with_summary(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        seq: Var,
        mut train_rng: Option<&mut TrainRng>,
    ) -> Result<(Var, Var)> {
        let shape = tape.shape(seq);
        if shape[0] == 0 {
            return Err(Error::contract("cannot encode an empty sequence"));
        }
        if shape[1] != self.spec.input_dim {
            return Err(Error::dim(format!(
                "encoder expects input dim {}, got shape {shape:?}",
                self.spec.input_dim
            )));
        }
        let q = shape[0];
        let mut layer_in = seq;
        let mut summary = None;
        for l in 0..self.spec.layers {
            if l > 0 {
                layer_in = dropout(tape, layer_in, self.spec.dropout, &mut train_rng)?;
            }
            let (fw_states, fw_last) = run_direction(tape, bound, &self.fw[l], layer_in, false)?;
            let (bw_states, bw_last) = run_direction(tape, bound, &self.bw[l], layer_in, true)?;
            let rows = (0..q)
                .map(|t| tape.concat(&[fw_states[t], bw_states[t]], 1))
                .collect::<Result<Vec<_>>>()?;
            layer_in = if rows.len() == 1 {
                rows[0]
            } else {
                tape.concat(&rows, 0)?
            };
            summary = Some(tape.concat(&[fw_last, bw_last], 1)?);
        }
        Ok((layer_in, summary.expect("at least one layer")))
    }
}

/// Per-layer decoder state.
pub struct UniState {
    h: Vec<Var>,
    c: Vec<Var>,
}

/// Stacked unidirectional LSTM used by the pointer decoder.
pub struct UniLstm {
    input_dim: usize,
    hidden: usize,
    dropout: f64,
    layers: Vec<LstmCellWeights>,
}

impl UniLstm {
    pub fn init(
        params: &mut Params,
        rng: &mut impl Rng,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        n_layers: usize,
        dropout: f64,
    ) -> Self {
        let layers = (0..n_layers)
            .map(|l| {
                let in_dim = if l == 0 { input_dim } else { hidden };
                LstmCellWeights::init(params, rng, &format!("{prefix}.l{l}"), in_dim, hidden)
            })
            .collect();
        UniLstm {
            input_dim,
            hidden,
            dropout,
            layers,
        }
    }

    /// Fresh state; every layer's hidden state starts from `h0` when given
    /// (the encoder summary), cell states start at zero.
    pub fn init_state(&self, tape: &mut Tape, h0: Option<Var>) -> UniState {
        let zero = tape.zeros(&[1, self.hidden]);
        let h = vec![h0.unwrap_or(zero); self.layers.len()];
        let c = vec![zero; self.layers.len()];
        UniState { h, c }
    }

    /// One decode step; returns the top layer's hidden state [1 x H].
    pub fn step(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: Var,
        state: &mut UniState,
        mut train_rng: Option<&mut TrainRng>,
    ) -> Result<Var> {
        if tape.shape(x) != [1, self.input_dim] {
            return Err(Error::dim(format!(
                "decoder step expects [1 x {}], got {:?}",
                self.input_dim,
                tape.shape(x)
            )));
        }
        let mut inp = x;
        for (l, cell) in self.layers.iter().enumerate() {
            if l > 0 {
                inp = dropout(tape, inp, self.dropout, &mut train_rng)?;
            }
            let (h_t, c_t) = cell.step(tape, bound, inp, state.h[l], state.c[l])?;
            state.h[l] = h_t;
            state.c[l] = c_t;
            inp = h_t;
        }
        Ok(inp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cell(params: &mut Params, seed: u64, in_dim: usize, hid: usize) -> LstmCellWeights {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LstmCellWeights::init(params, &mut rng, "cell", in_dim, hid)
    }

    #[test]
    fn zero_weights_zero_state_give_zero_output() {
        let mut params = Params::new();
        let c = cell(&mut params, 1, 3, 2);
        params.set(c.w_ih, Tensor::zeros(&[3, 8])).unwrap();
        params.set(c.w_hh, Tensor::zeros(&[2, 8])).unwrap();
        params.set(c.bias, Tensor::zeros(&[1, 8])).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, |_| false);
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, -2.0, 3.0]]));
        let h = tape.zeros(&[1, 2]);
        let cc = tape.zeros(&[1, 2]);
        let (h_t, _) = c.step(&mut tape, &bound, x, h, cc).unwrap();
        assert_eq!(tape.value(h_t).data(), &[0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_gate_preserves_cell_state() {
        let mut params = Params::new();
        let c = cell(&mut params, 2, 2, 2);
        params.set(c.w_ih, Tensor::zeros(&[2, 8])).unwrap();
        params.set(c.w_hh, Tensor::zeros(&[2, 8])).unwrap();
        // input gate -> 0, forget gate -> 1, candidate/output 0
        let mut b = Tensor::zeros(&[1, 8]);
        b.data_mut()[0] = -100.0;
        b.data_mut()[1] = -100.0;
        b.data_mut()[2] = 100.0;
        b.data_mut()[3] = 100.0;
        params.set(c.bias, b).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, |_| false);
        let x = tape.constant(Tensor::from_rows(&[vec![0.5, -0.5]]));
        let h = tape.zeros(&[1, 2]);
        let c_prev = tape.constant(Tensor::from_rows(&[vec![0.7, -1.3]]));
        let (_, c_t) = c.step(&mut tape, &bound, x, h, c_prev).unwrap();
        assert_eq!(tape.value(c_t).data(), &[0.7, -1.3]);
    }

    #[test]
    fn three_step_cell_gradient_matches_finite_differences() {
        let mut params = Params::new();
        let c = cell(&mut params, 3, 2, 2);
        let w_ih = params.get(c.w_ih).clone();
        let w_hh = params.get(c.w_hh).clone();
        let b = params.get(c.bias).clone();
        let xs = Tensor::from_rows(&[
            vec![0.3, -0.8],
            vec![0.1, 0.4],
            vec![-0.6, 0.9],
        ]);
        let report = check_gradients(
            |tape, vars| {
                let mut params = Params::new();
                let cell = LstmCellWeights {
                    w_ih: params.insert("w_ih", Tensor::zeros(&[2, 8])),
                    w_hh: params.insert("w_hh", Tensor::zeros(&[2, 8])),
                    bias: params.insert("b", Tensor::zeros(&[1, 8])),
                    hidden: 2,
                };
                // bind the check's leaves in place of the registry tensors
                let bound = BoundVars(vec![vars[0], vars[1], vars[2]]);
                let mut h = tape.zeros(&[1, 2]);
                let mut cst = tape.zeros(&[1, 2]);
                for t in 0..3 {
                    let x = tape.narrow(vars[3], 0, t, 1)?;
                    let (h_t, c_t) = cell.step(tape, &bound.as_bound(), x, h, cst)?;
                    h = h_t;
                    cst = c_t;
                }
                Ok(tape.sum_all(h))
            },
            &[(w_ih, true), (w_hh, true), (b, true), (xs, true)],
            1e-5,
        )
        .unwrap();
        assert!(report.passes(1e-4), "max rel err {}", report.max_rel_err);
    }

    // Test-only adapter: expose arbitrary vars as a BoundParams.
    struct BoundVars(Vec<Var>);
    impl BoundVars {
        fn as_bound(&self) -> BoundParams {
            BoundParams::from_vars(self.0.clone())
        }
    }

    fn encode_once(tied: bool, seq: &Tensor, reverse_input: bool) -> Tensor {
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = LstmSpec::bidirectional(2, 3, 1, 0.0);
        let enc = BiLstm::init(&mut params, &mut rng, "enc", spec).unwrap();
        if tied {
            for (f, b) in enc.fw.iter().zip(&enc.bw) {
                params.set(b.w_ih, params.get(f.w_ih).clone()).unwrap();
                params.set(b.w_hh, params.get(f.w_hh).clone()).unwrap();
                params.set(b.bias, params.get(f.bias).clone()).unwrap();
            }
        }
        let mut data = seq.clone();
        if reverse_input {
            let q = seq.shape()[0];
            let d = seq.shape()[1];
            let mut rev = Tensor::zeros(&[q, d]);
            for t in 0..q {
                let src = &seq.data()[(q - 1 - t) * d..(q - t) * d];
                rev.data_mut()[t * d..(t + 1) * d].copy_from_slice(src);
            }
            data = rev;
        }
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, |_| false);
        let x = tape.constant(data);
        let out = enc.encode(&mut tape, &bound, x, None).unwrap();
        tape.value(out).clone()
    }

    #[test]
    fn reversing_input_swaps_direction_halves_under_tied_weights() {
        let seq = Tensor::from_rows(&[vec![0.2, -0.1], vec![0.5, 0.3], vec![-0.4, 0.8]]);
        let fwd = encode_once(true, &seq, false);
        let rev = encode_once(true, &seq, true);
        let (q, h) = (3, 3);
        for t in 0..q {
            for j in 0..h {
                let f = fwd.at(&[t, j]);
                let b_rev = rev.at(&[q - 1 - t, h + j]);
                assert!((f - b_rev).abs() < 1e-12, "fw/bw halves must swap");
                let b = fwd.at(&[t, h + j]);
                let f_rev = rev.at(&[q - 1 - t, j]);
                assert!((b - f_rev).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_step_sequence_and_determinism() {
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = LstmSpec::bidirectional(3, 2, 2, 0.3);
        let enc = BiLstm::init(&mut params, &mut rng, "enc", spec).unwrap();
        let run = |params: &Params| {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, |_| false);
            let x = tape.constant(Tensor::from_rows(&[vec![0.1, 0.2, 0.3]]));
            let (out, summary) = enc
                .encode_with_summary(&mut tape, &bound, x, None)
                .unwrap();
            assert_eq!(tape.shape(out), &[1, 4]);
            assert_eq!(tape.shape(summary), &[1, 4]);
            // q = 1: the summary is the single output row
            assert_eq!(tape.value(out).data(), tape.value(summary).data());
            tape.value(out).clone()
        };
        assert_eq!(run(&params), run(&params), "inference must be bit-identical");
    }

    #[test]
    fn empty_sequence_is_a_contract_error() {
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = LstmSpec::bidirectional(3, 2, 1, 0.0);
        let enc = BiLstm::init(&mut params, &mut rng, "enc", spec).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, |_| false);
        let x = tape.zeros(&[0, 3]);
        assert!(matches!(
            enc.encode(&mut tape, &bound, x, None),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn dropout_scales_and_is_identity_at_inference() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[4, 8]));
        let same = dropout(&mut tape, x, 0.5, &mut None).unwrap();
        assert_eq!(same, x);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut opt: Option<&mut TrainRng> = Some(&mut rng);
        let dropped = dropout(&mut tape, x, 0.5, &mut opt).unwrap();
        let vals = tape.value(dropped).data();
        assert!(vals.iter().all(|v| *v == 0.0 || (*v - 2.0).abs() < 1e-12));
        assert!(vals.iter().any(|v| *v == 0.0));
        assert!(vals.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn two_layer_bilstm_gradient_check() {
        let seq = Tensor::from_rows(&[vec![0.4, -0.2], vec![0.1, 0.9]]);
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let spec = LstmSpec::bidirectional(2, 2, 2, 0.0);
        let enc = BiLstm::init(&mut params, &mut rng, "enc", spec).unwrap();
        let leaves: Vec<(Tensor, bool)> = params
            .iter()
            .map(|(_, _, t)| (t.clone(), true))
            .chain(std::iter::once((seq, true)))
            .collect();
        let n = params.len();
        let report = check_gradients(
            |tape, vars| {
                let bound = BoundParams::from_vars(vars[..n].to_vec());
                let out = enc.encode(tape, &bound, vars[n], None)?;
                let sq = tape.mul(out, out)?;
                Ok(tape.sum_all(sq))
            },
            &leaves,
            1e-5,
        )
        .unwrap();
        assert!(report.passes(1e-4), "max rel err {}", report.max_rel_err);
    }
}
