//! Full model: shared embeddings feeding per-head encoders, bi-attention
//! column scorers, question classifiers, the operator head, and the
//! pointer-network value decoder. Heads never share LSTM or attention
//! weights; only the embedding tables are common.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::TrainRng;
use serde::{Deserialize, Serialize};

use crate::embed::{
    end_token, prepare_tokens, CharCnnConfig, Charset, Embedder, TokenRef, Vocab, PAD,
};
use crate::error::{Error, Result};
use crate::heads::{
    argmax, build_topcol, cross_entropy, row_cross_entropy, top_k_columns, total_loss,
    where_column_loss, ColumnScorer, OperatorHead, PointerScorer, QuestionClassifier,
};
use crate::lstm::{BiLstm, LstmSpec, UniLstm};
use crate::params::{BoundParams, ParamId, Params};
use crate::sql::{tokenize, Agg, Cond, CondOp, SqlSketch, TableSchema, MAX_CONDS};
use crate::tensor::{Tape, Tensor, Var};

/// Architecture hyperparameters. The paper-scale defaults are 300-d
/// embeddings and h = 100; desk-scale runs shrink both.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Bidirectional encoder output size; each direction runs at h/2.
    pub hidden: usize,
    pub lstm_layers: usize,
    /// N: condition slots in the WHERE module.
    pub n_cond_slots: usize,
    pub max_word_chars: usize,
    pub dropout: f64,
    /// γ weighting of gold columns in the WHERE set loss.
    pub gamma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 300,
            hidden: 100,
            lstm_layers: 2,
            n_cond_slots: MAX_CONDS,
            max_word_chars: 16,
            dropout: 0.3,
            gamma: 3.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.hidden % 2 != 0 {
            return Err(Error::Config(format!(
                "hidden size {} must be a positive even number",
                self.hidden
            )));
        }
        if self.n_cond_slots == 0 || self.n_cond_slots > MAX_CONDS {
            return Err(Error::Config(format!(
                "condition slots {} out of range 1..={MAX_CONDS}",
                self.n_cond_slots
            )));
        }
        if self.gamma <= 0.0 {
            return Err(Error::Config("gamma must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0,1)", self.dropout)));
        }
        // kernel width / embed dim constraints live in the char-CNN config
        CharCnnConfig::standard(self.embed_dim, self.max_word_chars)?;
        Ok(())
    }

    fn q_spec(&self) -> LstmSpec {
        LstmSpec::bidirectional(self.embed_dim, self.hidden / 2, self.lstm_layers, self.dropout)
    }

}

/// Question and column-name encoders feeding one column scorer. The SELECT
/// head and the WHERE column head each own one. Columns are encoded
/// independently (name tokens through a bi-LSTM, last state per column),
/// so permuting table columns permutes the scorer output identically.
struct ColumnPipeline {
    q_enc: BiLstm,
    colname_enc: BiLstm,
    scorer: ColumnScorer,
}

impl ColumnPipeline {
    fn init(params: &mut Params, rng: &mut ChaCha8Rng, prefix: &str, cfg: &ModelConfig) -> Result<Self> {
        Ok(ColumnPipeline {
            q_enc: BiLstm::init(params, rng, &format!("{prefix}.q_lstm"), cfg.q_spec())?,
            colname_enc: BiLstm::init(params, rng, &format!("{prefix}.colname_lstm"), cfg.q_spec())?,
            scorer: ColumnScorer::init(params, rng, prefix, cfg.hidden),
        })
    }
}

struct Arch {
    embed: Embedder,
    sel: ColumnPipeline,
    agg_enc: BiLstm,
    agg: QuestionClassifier,
    num_enc: BiLstm,
    num: QuestionClassifier,
    where_col: ColumnPipeline,
    op_enc: BiLstm,
    op: OperatorHead,
    val_enc: BiLstm,
    val_dec: UniLstm,
    val_start: ParamId,
    val_ptr: PointerScorer,
}

pub struct Model {
    pub cfg: ModelConfig,
    pub vocab: Vocab,
    pub charset: Charset,
    pub params: Params,
    arch: Arch,
}

/// Tokenized inputs of one (question, table) pair, ready for embedding.
pub struct PreparedExample {
    pub tokens: Vec<String>,
    q_tokens: Vec<TokenRef>,
    col_tokens: Vec<Vec<TokenRef>>,
}

impl PreparedExample {
    pub fn q_len(&self) -> usize {
        self.tokens.len()
    }

    pub fn n_cols(&self) -> usize {
        self.col_tokens.len()
    }
}

/// Model output for one question.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub sketch: SqlSketch,
    /// A value slot hit the decode cap without emitting END.
    pub truncated: bool,
}

/// All distributions the heads emitted for one question, as owned tensors.
pub struct DistributionDump {
    pub p_sel: Tensor,
    pub p_agg: Tensor,
    pub p_num: Tensor,
    pub p_col: Tensor,
    pub p_op: Option<Tensor>,
    pub p_val_steps: Vec<Tensor>,
}

struct Stage1 {
    e_q: Var,
    h_col_wc: Var,
    p_sel: Var,
    p_agg: Var,
    p_num: Var,
    p_col: Var,
}

/// Teacher-forcing plan for one condition value: decoder input tokens and
/// per-step pointer targets (`None` steps carry no loss).
pub struct ValuePlan {
    pub teacher_tokens: Vec<String>,
    pub targets: Vec<Option<usize>>,
    pub aligned: bool,
}

/// Match a gold value against the question tokens. A contiguous token-span
/// match yields exact pointer targets; otherwise each value token falls
/// back to its first occurrence (missing ones are unsupervised) and the
/// plan is flagged unaligned. The END target is always the last step.
pub fn plan_value_targets(q_tokens: &[String], value: &str) -> ValuePlan {
    let vt = tokenize(value);
    let q = q_tokens.len();
    let end = Some(q);
    if vt.is_empty() {
        return ValuePlan {
            teacher_tokens: vt,
            targets: vec![end],
            aligned: true,
        };
    }
    let span = (0..=q.saturating_sub(vt.len()))
        .find(|&i| q_tokens[i..i + vt.len()] == vt[..]);
    if let Some(start) = span {
        let targets = (start..start + vt.len()).map(Some).chain([end]).collect();
        return ValuePlan {
            teacher_tokens: vt,
            targets,
            aligned: true,
        };
    }
    let targets = vt
        .iter()
        .map(|t| q_tokens.iter().position(|w| w == t))
        .chain([end])
        .collect();
    ValuePlan {
        teacher_tokens: vt,
        targets,
        aligned: false,
    }
}

impl Model {
    pub fn init(
        cfg: ModelConfig,
        vocab: Vocab,
        charset: Charset,
        word_matrix: Tensor,
        char_matrix: Tensor,
        seed: u64,
    ) -> Result<Model> {
        cfg.validate()?;
        if vocab.dim != cfg.embed_dim {
            return Err(Error::Config(format!(
                "vocab dimension {} != embed dim {}",
                vocab.dim, cfg.embed_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let cnn_cfg = CharCnnConfig::standard(cfg.embed_dim, cfg.max_word_chars)?;
        let embed = Embedder::init(&mut params, &mut rng, word_matrix, char_matrix, cnn_cfg)?;
        let sel = ColumnPipeline::init(&mut params, &mut rng, "sel", &cfg)?;
        let agg_enc = BiLstm::init(&mut params, &mut rng, "agg.q_lstm", cfg.q_spec())?;
        let agg = QuestionClassifier::init(&mut params, &mut rng, "agg", cfg.hidden, Agg::COUNT);
        let num_enc = BiLstm::init(&mut params, &mut rng, "num.q_lstm", cfg.q_spec())?;
        let num = QuestionClassifier::init(
            &mut params,
            &mut rng,
            "num",
            cfg.hidden,
            cfg.n_cond_slots + 1,
        );
        let where_col = ColumnPipeline::init(&mut params, &mut rng, "wcol", &cfg)?;
        let op_enc = BiLstm::init(&mut params, &mut rng, "op.q_lstm", cfg.q_spec())?;
        let op = OperatorHead::init(&mut params, &mut rng, "op", cfg.hidden);
        // the value encoder sees each token embedding concatenated with the
        // slot's column representation ("predicted column info as input")
        let val_spec = LstmSpec::bidirectional(
            cfg.embed_dim + cfg.hidden,
            cfg.hidden / 2,
            cfg.lstm_layers,
            cfg.dropout,
        );
        let val_enc = BiLstm::init(&mut params, &mut rng, "val.q_lstm", val_spec)?;
        let val_dec = UniLstm::init(
            &mut params,
            &mut rng,
            "val.dec",
            cfg.embed_dim,
            cfg.hidden,
            cfg.lstm_layers,
            cfg.dropout,
        );
        let val_start = params.insert_uniform(
            &mut rng,
            "val.start",
            &[1, cfg.embed_dim],
            1.0 / (cfg.embed_dim as f64).sqrt(),
        );
        let val_ptr = PointerScorer::init(&mut params, &mut rng, "val", cfg.hidden);
        Ok(Model {
            cfg,
            vocab,
            charset,
            params,
            arch: Arch {
                embed,
                sel,
                agg_enc,
                agg,
                num_enc,
                num,
                where_col,
                op_enc,
                op,
                val_enc,
                val_dec,
                val_start,
                val_ptr,
            },
        })
    }

    /// Bind all parameters for inference (no gradient tracking).
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundParams {
        self.params.bind(tape, |_| true)
    }

    pub fn prepare(&self, tokens: &[String], table: &TableSchema) -> PreparedExample {
        let q_tokens = prepare_tokens(&self.vocab, &self.charset, tokens, self.cfg.max_word_chars);
        let col_tokens = table
            .headers
            .iter()
            .map(|h| {
                let toks = tokenize(h);
                if toks.is_empty() {
                    // blank headers encode as a single padding token
                    vec![TokenRef {
                        id: PAD,
                        grid: Vec::new(),
                    }]
                } else {
                    prepare_tokens(&self.vocab, &self.charset, &toks, self.cfg.max_word_chars)
                }
            })
            .collect();
        PreparedExample {
            tokens: tokens.to_vec(),
            q_tokens,
            col_tokens,
        }
    }

    /// Encode column names into per-column vectors, then the column list.
    fn encode_columns(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        pipeline: &ColumnPipeline,
        col_tokens: &[Vec<TokenRef>],
        train_rng: &mut Option<&mut TrainRng>,
    ) -> Result<Var> {
        let mut rows = Vec::with_capacity(col_tokens.len());
        for tokens in col_tokens {
            let e = self.arch.embed.embed(tape, bound, tokens)?;
            let (_, summary) =
                pipeline
                    .colname_enc
                    .encode_with_summary(tape, bound, e, train_rng.as_deref_mut())?;
            rows.push(summary);
        }
        if rows.len() == 1 {
            Ok(rows[0])
        } else {
            tape.concat(&rows, 0)
        }
    }

    fn stage1(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        prep: &PreparedExample,
        mut train_rng: Option<&mut TrainRng>,
    ) -> Result<Stage1> {
        if prep.q_tokens.is_empty() {
            return Err(Error::contract("empty question"));
        }
        if prep.col_tokens.is_empty() {
            return Err(Error::contract("table has no columns"));
        }
        let rng = &mut train_rng;
        let e_q = self.arch.embed.embed(tape, bound, &prep.q_tokens)?;

        let h_q_sel = self
            .arch
            .sel
            .q_enc
            .encode(tape, bound, e_q, rng.as_deref_mut())?;
        let h_col_sel = self.encode_columns(tape, bound, &self.arch.sel, &prep.col_tokens, rng)?;
        let p_sel = self.arch.sel.scorer.probs(tape, bound, h_q_sel, h_col_sel)?;

        let h_q_agg = self
            .arch
            .agg_enc
            .encode(tape, bound, e_q, rng.as_deref_mut())?;
        let p_agg = self.arch.agg.probs(tape, bound, h_q_agg)?;

        let h_q_num = self
            .arch
            .num_enc
            .encode(tape, bound, e_q, rng.as_deref_mut())?;
        let p_num = self.arch.num.probs(tape, bound, h_q_num)?;

        let h_q_wc = self
            .arch
            .where_col
            .q_enc
            .encode(tape, bound, e_q, rng.as_deref_mut())?;
        let h_col_wc =
            self.encode_columns(tape, bound, &self.arch.where_col, &prep.col_tokens, rng)?;
        let p_col = self
            .arch
            .where_col
            .scorer
            .probs(tape, bound, h_q_wc, h_col_wc)?;

        Ok(Stage1 {
            e_q,
            h_col_wc,
            p_sel,
            p_agg,
            p_num,
            p_col,
        })
    }

    /// Operator distributions for the chosen (or gold) condition columns.
    fn stage2_ops(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        s1: &Stage1,
        chosen: &[usize],
        train_rng: &mut Option<&mut TrainRng>,
    ) -> Result<(Var, Var)> {
        let h_topcol = build_topcol(tape, s1.h_col_wc, chosen, self.cfg.n_cond_slots)?;
        let h_q_op = self
            .arch
            .op_enc
            .encode(tape, bound, s1.e_q, train_rng.as_deref_mut())?;
        let p_op = self.arch.op.probs(tape, bound, h_topcol, h_q_op)?;
        Ok((h_topcol, p_op))
    }

    /// Question embedding extended with the END sentinel: [(q+1) x d].
    fn extended_question(&self, tape: &mut Tape, bound: &BoundParams, e_q: Var) -> Result<Var> {
        let e_end = self.arch.embed.embed(tape, bound, &[end_token()])?;
        tape.concat(&[e_q, e_end], 0)
    }

    /// Slot-conditioned value encoding: every row of the extended question
    /// embedding is concatenated with this slot's column representation, so
    /// the encoder can bind positions to the column being filled. Returns
    /// the per-position encoding and the decoder's initial-state summary.
    fn value_encoder(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        e_q_ext: Var,
        topcol_row: Var,
        train_rng: &mut Option<&mut TrainRng>,
    ) -> Result<(Var, Var)> {
        let rows = tape.shape(e_q_ext)[0];
        let ones = tape.constant(Tensor::ones(&[rows, 1]));
        let col_broadcast = tape.mul(ones, topcol_row)?; // [(q+1) x h]
        let enc_in = tape.concat(&[e_q_ext, col_broadcast], 1)?;
        self.arch
            .val_enc
            .encode_with_summary(tape, bound, enc_in, train_rng.as_deref_mut())
    }

    /// Teacher-forced pointer loss for one condition slot.
    #[allow(clippy::too_many_arguments)]
    fn value_slot_loss(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        plan: &ValuePlan,
        e_q_ext: Var,
        h_topcol: Var,
        slot: usize,
        train_rng: &mut Option<&mut TrainRng>,
    ) -> Result<Vec<Var>> {
        let topcol_row = tape.narrow(h_topcol, 0, slot, 1)?;
        let (h_q_val, summary) =
            self.value_encoder(tape, bound, e_q_ext, topcol_row, train_rng)?;
        let teacher = prepare_tokens(
            &self.vocab,
            &self.charset,
            &plan.teacher_tokens,
            self.cfg.max_word_chars,
        );
        let mut state = self.arch.val_dec.init_state(tape, Some(summary));
        let mut input = bound.var(self.arch.val_start);
        let mut terms = Vec::new();
        for (step, target) in plan.targets.iter().enumerate() {
            let g_o = self
                .arch
                .val_dec
                .step(tape, bound, input, &mut state, train_rng.as_deref_mut())?;
            let probs = self
                .arch
                .val_ptr
                .probs(tape, bound, g_o, h_q_val, topcol_row)?;
            if let Some(t) = target {
                terms.push(cross_entropy(tape, probs, *t)?);
            }
            if step < plan.teacher_tokens.len() {
                input = self
                    .arch
                    .embed
                    .embed(tape, bound, &teacher[step..step + 1])?;
            }
        }
        Ok(terms)
    }

    /// Joint training loss of one example. Returns the scalar loss var and
    /// the number of condition values that failed span alignment.
    pub fn example_loss(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        prep: &PreparedExample,
        gold: &SqlSketch,
        mut train_rng: Option<&mut TrainRng>,
    ) -> Result<(Var, usize)> {
        let rng = &mut train_rng;
        let s1 = self.stage1(tape, bound, prep, rng.as_deref_mut())?;
        let l_sel = cross_entropy(tape, s1.p_sel, gold.sel_col)?;
        let l_agg = cross_entropy(tape, s1.p_agg, gold.agg.index())?;
        let k = gold.conds.len();
        let l_num = cross_entropy(tape, s1.p_num, k)?;

        let gold_cols: Vec<usize> = gold.conds.iter().map(|c| c.col).collect();
        let l_wcol = where_column_loss(tape, s1.p_col, &gold_cols, self.cfg.gamma)?;

        let mut parts = vec![l_agg, l_sel, l_num, l_wcol];
        let mut unaligned = 0;
        if k > 0 {
            // canonical slot order for supervision
            let mut conds: Vec<&Cond> = gold.conds.iter().collect();
            conds.sort_by(|a, b| {
                (a.col, a.op.index(), &a.value).cmp(&(b.col, b.op.index(), &b.value))
            });
            let slot_cols: Vec<usize> = conds.iter().map(|c| c.col).collect();
            let (h_topcol, p_op) = self.stage2_ops(tape, bound, &s1, &slot_cols, rng)?;
            let e_q_ext = self.extended_question(tape, bound, s1.e_q)?;
            for (slot, cond) in conds.iter().enumerate() {
                parts.push(row_cross_entropy(tape, p_op, slot, cond.op.index())?);
                let plan = plan_value_targets(&prep.tokens, &cond.value);
                if !plan.aligned {
                    unaligned += 1;
                }
                parts.extend(self.value_slot_loss(
                    tape, bound, &plan, e_q_ext, h_topcol, slot, rng,
                )?);
            }
        }
        Ok((total_loss(tape, &parts)?, unaligned))
    }

    /// Greedy inference: condition count, top-K columns, per-slot operator
    /// and value. The first pointer step may not choose END, so predicted
    /// values are never empty.
    pub fn predict_prepared(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        prep: &PreparedExample,
    ) -> Result<(Prediction, DistributionDump)> {
        let s1 = self.stage1(tape, bound, prep, None)?;
        let sel_col = argmax(tape.value(s1.p_sel).data());
        let agg = Agg::from_index(argmax(tape.value(s1.p_agg).data()))?;
        let k_raw = argmax(tape.value(s1.p_num).data());
        let k = k_raw.min(self.cfg.n_cond_slots).min(prep.n_cols());
        let chosen = top_k_columns(tape.value(s1.p_col), k)?;

        let mut dump = DistributionDump {
            p_sel: tape.value(s1.p_sel).clone(),
            p_agg: tape.value(s1.p_agg).clone(),
            p_num: tape.value(s1.p_num).clone(),
            p_col: tape.value(s1.p_col).clone(),
            p_op: None,
            p_val_steps: Vec::new(),
        };

        let mut conds = Vec::with_capacity(k);
        let mut truncated = false;
        if k > 0 {
            let mut no_rng: Option<&mut TrainRng> = None;
            let (h_topcol, p_op) = self.stage2_ops(tape, bound, &s1, &chosen, &mut no_rng)?;
            dump.p_op = Some(tape.value(p_op).clone());
            let e_q_ext = self.extended_question(tape, bound, s1.e_q)?;
            let q = prep.q_len();
            for (slot, &col) in chosen.iter().enumerate() {
                let op_row = &tape.value(p_op).data()[slot * 3..(slot + 1) * 3];
                let op = CondOp::from_index(argmax(op_row))?;
                let topcol_row = tape.narrow(h_topcol, 0, slot, 1)?;
                let (h_q_val, summary) =
                    self.value_encoder(tape, bound, e_q_ext, topcol_row, &mut no_rng)?;
                let mut state = self.arch.val_dec.init_state(tape, Some(summary));
                let mut input = bound.var(self.arch.val_start);
                let mut pointed: Vec<usize> = Vec::new();
                let mut ended = false;
                for step in 0..q + 2 {
                    let g_o =
                        self.arch
                            .val_dec
                            .step(tape, bound, input, &mut state, None)?;
                    let probs =
                        self.arch
                            .val_ptr
                            .probs(tape, bound, g_o, h_q_val, topcol_row)?;
                    dump.p_val_steps.push(tape.value(probs).clone());
                    let dist = tape.value(probs).data();
                    let ptr = if step == 0 { argmax(&dist[..q]) } else { argmax(dist) };
                    if ptr == q {
                        ended = true;
                        break;
                    }
                    pointed.push(ptr);
                    input = tape.gather_rows(e_q_ext, &[ptr])?;
                }
                if !ended {
                    truncated = true;
                }
                let value = pointed
                    .iter()
                    .map(|&i| prep.tokens[i].as_str())
                    .collect::<Vec<_>>()
                    .join(" ");
                conds.push(Cond::new(col, op, value));
            }
        }
        let sketch = SqlSketch::new(sel_col, agg, conds);
        Ok((Prediction { sketch, truncated }, dump))
    }

    pub fn predict(&self, question: &str, table: &TableSchema) -> Result<Prediction> {
        let tokens = tokenize(question);
        if tokens.is_empty() {
            return Err(Error::contract("empty question"));
        }
        let prep = self.prepare(&tokens, table);
        let mut tape = Tape::new();
        let bound = self.bind_frozen(&mut tape);
        Ok(self.predict_prepared(&mut tape, &bound, &prep)?.0)
    }

    /// All head distributions for one question, for inspection and fuzzing.
    pub fn inspect(&self, question: &str, table: &TableSchema) -> Result<DistributionDump> {
        let tokens = tokenize(question);
        if tokens.is_empty() {
            return Err(Error::contract("empty question"));
        }
        let prep = self.prepare(&tokens, table);
        let mut tape = Tape::new();
        let bound = self.bind_frozen(&mut tape);
        Ok(self.predict_prepared(&mut tape, &bound, &prep)?.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::ColType;
    use crate::tensor::check_gradients;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            embed_dim: 9,
            hidden: 6,
            lstm_layers: 2,
            n_cond_slots: 4,
            max_word_chars: 6,
            dropout: 0.0,
            gamma: 3.0,
        }
    }

    fn demo_table() -> TableSchema {
        TableSchema::new(
            "t1".into(),
            vec!["team".into(), "wins".into(), "year".into()],
            vec![ColType::Text, ColType::Real, ColType::Real],
            vec![],
        )
        .unwrap()
    }

    fn tiny_model(seed: u64) -> Model {
        let corpus = [
            "how", "many", "wins", "for", "lions", "in", "2003", "team", "year",
        ];
        let vocab = Vocab::build(corpus, 9);
        let charset = Charset::build(corpus);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wm = Tensor::zeros(&[vocab.len(), 9]);
        let cm = crate::embed::char_matrix(&charset, 9, None, &mut rng).unwrap();
        Model::init(tiny_config(), vocab, charset, wm, cm, seed).unwrap()
    }

    #[test]
    fn value_plan_span_match() {
        let q: Vec<String> = ["how", "many", "wins", "in", "2003"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let plan = plan_value_targets(&q, "2003");
        assert!(plan.aligned);
        assert_eq!(plan.targets, vec![Some(4), Some(5)]); // token, then END at q=5
        let multi = plan_value_targets(&q, "many wins");
        assert_eq!(multi.targets, vec![Some(1), Some(2), Some(5)]);
    }

    #[test]
    fn value_plan_fallback_flags_unaligned() {
        let q: Vec<String> = ["score", "for", "boston"].iter().map(|s| s.to_string()).collect();
        let plan = plan_value_targets(&q, "boston celtics");
        assert!(!plan.aligned);
        assert_eq!(plan.targets, vec![Some(2), None, Some(3)]);
    }

    #[test]
    fn zeroed_output_heads_predict_the_tie_break_chain() {
        let mut model = tiny_model(1);
        // zero every head output layer: all distributions go uniform
        for name in [
            "sel.w3", "agg.w2", "num.w2", "wcol.w3", "op.w3", "val.w4",
        ] {
            let id = model.params.by_name(name).unwrap();
            let shape = model.params.get(id).shape().to_vec();
            model.params.set(id, Tensor::zeros(&shape)).unwrap();
        }
        let pred = model
            .predict("how many wins for lions in 2003", &demo_table())
            .unwrap();
        assert_eq!(pred.sketch.agg, Agg::None, "class 0 wins ties");
        assert_eq!(pred.sketch.sel_col, 0);
        assert!(pred.sketch.conds.is_empty(), "K = 0 by tie rule");
        assert!(!pred.truncated);
    }

    #[test]
    fn predict_rejects_empty_question() {
        let model = tiny_model(2);
        assert!(matches!(
            model.predict("", &demo_table()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn permuting_columns_permutes_column_heads_and_fixes_agg() {
        let model = tiny_model(3);
        let t1 = demo_table();
        let t2 = TableSchema::new(
            "t2".into(),
            vec!["year".into(), "team".into(), "wins".into()],
            vec![ColType::Real, ColType::Text, ColType::Real],
            vec![],
        )
        .unwrap();
        let d1 = model.inspect("how many wins", &t1).unwrap();
        let d2 = model.inspect("how many wins", &t2).unwrap();
        // permutation: t2 column j came from t1 column perm[j]
        let perm = [2usize, 0, 1];
        for j in 0..3 {
            let a = d1.p_sel.data()[perm[j]];
            let b = d2.p_sel.data()[j];
            assert!((a - b).abs() < 1e-9, "p_sel must permute with columns");
            let a = d1.p_col.data()[perm[j]];
            let b = d2.p_col.data()[j];
            assert!((a - b).abs() < 1e-9, "p_col must permute with columns");
        }
        for (a, b) in d1.p_agg.data().iter().zip(d2.p_agg.data()) {
            assert!((a - b).abs() < 1e-12, "p_agg ignores columns");
        }
    }

    #[test]
    fn padded_slot_weights_get_zero_gradient_when_no_conditions() {
        let model = tiny_model(4);
        let table = demo_table();
        let tokens = tokenize("how many wins");
        let prep = model.prepare(&tokens, &table);
        let gold = SqlSketch::new(1, Agg::Count, vec![]);
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape, |_| false);
        let (loss, _) = model
            .example_loss(&mut tape, &bound, &prep, &gold, None)
            .unwrap();
        tape.backward(loss).unwrap();
        for name in ["op.w3", "val.w4", "val.start", "op.q_lstm.l0.fw.w_ih"] {
            let id = model.params.by_name(name).unwrap();
            let g = bound.grad_or_zero(&tape, &model.params, id);
            assert!(
                g.data().iter().all(|v| *v == 0.0),
                "{name} must get zero gradient with no condition slots"
            );
        }
        // while stage-1 heads do receive gradient
        let id = model.params.by_name("sel.w3").unwrap();
        let g = bound.grad_or_zero(&tape, &model.params, id);
        assert!(g.data().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn full_model_loss_gradient_check_tiny() {
        let model = tiny_model(5);
        let table = demo_table();
        let tokens = tokenize("how many wins for lions in 2003");
        let prep = model.prepare(&tokens, &table);
        let gold = SqlSketch::new(
            1,
            Agg::Count,
            vec![
                Cond::new(0, CondOp::Eql, "lions"),
                Cond::new(2, CondOp::Gt, "2003"),
            ],
        );
        // check a few structurally distinct parameters end to end
        let checked = [
            "embed.char",
            "embed.cnn.k3.w",
            "sel.attn.w",
            "wcol.w3",
            "op.w2",
            "val.w1",
            "val.start",
            "val.dec.l0.w_hh",
            "agg.q_lstm.l1.bw.w_ih",
        ];
        let leaves: Vec<(Tensor, bool)> = model
            .params
            .iter()
            .map(|(_, name, t)| (t.clone(), checked.contains(&name)))
            .collect();
        let report = check_gradients(
            |tape, vars| {
                let bound = BoundParams::from_vars(vars.to_vec());
                let (loss, _) = model.example_loss(tape, &bound, &prep, &gold, None)?;
                Ok(loss)
            },
            &leaves,
            1e-5,
        )
        .unwrap();
        assert!(report.passes(1e-4), "max rel err {}", report.max_rel_err);
        assert!(report.checked > 100);
    }
}
