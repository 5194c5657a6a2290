//! Dual-metric evaluation: per-component accuracies, logical-form
//! (canonical query string) match, and execution-result match.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::sql::{execute, results_match, sketches_match, Example, SqlSketch, TableSchema};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Metrics {
    pub acc_agg: f64,
    pub acc_sel: f64,
    pub acc_where: f64,
    pub lf_match: f64,
    pub exec_match: f64,
    pub n: usize,
}

/// Raw match counts behind the fractions.
#[derive(Debug, Clone, Default)]
pub struct MetricCounts {
    pub n: usize,
    pub agg: usize,
    pub sel: usize,
    pub where_set: usize,
    pub lf: usize,
    pub exec: usize,
    /// Predictions whose value decode hit the step cap.
    pub truncated: usize,
}

impl MetricCounts {
    fn frac(&self, k: usize) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            k as f64 / self.n as f64
        }
    }

    pub fn metrics(&self) -> Metrics {
        Metrics {
            acc_agg: self.frac(self.agg),
            acc_sel: self.frac(self.sel),
            acc_where: self.frac(self.where_set),
            lf_match: self.frac(self.lf),
            exec_match: self.frac(self.exec),
            n: self.n,
        }
    }
}

/// Score one prediction against its gold sketch.
fn score_one(counts: &mut MetricCounts, pred: &SqlSketch, gold: &SqlSketch, table: &TableSchema) {
    counts.n += 1;
    let agg_ok = pred.agg == gold.agg;
    let sel_ok = pred.sel_col == gold.sel_col;
    let where_ok = pred.same_condition_set(gold);
    let lf_ok = sketches_match(pred, gold, table);
    // string-equal sketches are the same query, so they trivially
    // execute equally even when that execution is itself an error
    let exec_ok = lf_ok || results_match(&execute(pred, table), &execute(gold, table));
    debug_assert!(
        !lf_ok || (agg_ok && sel_ok && where_ok),
        "query-string match must imply every component matched"
    );
    counts.agg += agg_ok as usize;
    counts.sel += sel_ok as usize;
    counts.where_set += where_ok as usize;
    counts.lf += lf_ok as usize;
    counts.exec += exec_ok as usize;
}

/// Score an aligned list of predicted sketches.
pub fn evaluate_predictions(
    preds: &[SqlSketch],
    examples: &[Example],
    tables: &BTreeMap<String, TableSchema>,
) -> Result<MetricCounts> {
    if preds.len() != examples.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} examples",
            preds.len(),
            examples.len()
        )));
    }
    let mut counts = MetricCounts::default();
    for (pred, ex) in preds.iter().zip(examples) {
        let table = tables
            .get(&ex.table_id)
            .ok_or_else(|| Error::Schema(format!("unknown table id {:?}", ex.table_id)))?;
        score_one(&mut counts, pred, &ex.gold, table);
    }
    Ok(counts)
}

/// Run the model over a dataset and score it. Prediction failures on
/// degenerate inputs (e.g. empty questions) score as full misses; they
/// never abort the evaluation.
pub fn evaluate(
    model: &Model,
    examples: &[Example],
    tables: &BTreeMap<String, TableSchema>,
) -> Result<MetricCounts> {
    let mut counts = MetricCounts::default();
    for ex in examples {
        let table = tables
            .get(&ex.table_id)
            .ok_or_else(|| Error::Schema(format!("unknown table id {:?}", ex.table_id)))?;
        if ex.tokens.is_empty() {
            counts.n += 1;
            continue;
        }
        let prep = model.prepare(&ex.tokens, table);
        let mut tape = crate::tensor::Tape::new();
        let bound = model.bind_frozen(&mut tape);
        let (pred, _) = model.predict_prepared(&mut tape, &bound, &prep)?;
        if pred.truncated {
            counts.truncated += 1;
        }
        score_one(&mut counts, &pred.sketch, &ex.gold, table);
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::{load_examples, load_tables, Agg, Cond, CondOp};
    use std::io::Cursor;

    fn fixture() -> (BTreeMap<String, TableSchema>, Vec<Example>) {
        let tables = load_tables(Cursor::new(
            r#"{"id":"t1","header":["No.","Player"],"types":["real","text"],"rows":[[23,"Jordan"],[7,"Smith"]]}"#,
        ))
        .unwrap();
        let data = r#"{"question":"how many players with no. 23","table_id":"t1","sql":{"sel":1,"agg":3,"conds":[[0,0,"23"]]}}
{"question":"which player has no. 7","table_id":"t1","sql":{"sel":1,"agg":0,"conds":[[0,0,"7"]]}}"#;
        let examples = load_examples(Cursor::new(data), &tables).unwrap();
        (tables, examples)
    }

    #[test]
    fn gold_oracle_scores_all_ones() {
        let (tables, examples) = fixture();
        let preds: Vec<SqlSketch> = examples.iter().map(|e| e.gold.clone()).collect();
        let m = evaluate_predictions(&preds, &examples, &tables)
            .unwrap()
            .metrics();
        assert_eq!(
            m,
            Metrics {
                acc_agg: 1.0,
                acc_sel: 1.0,
                acc_where: 1.0,
                lf_match: 1.0,
                exec_match: 1.0,
                n: 2
            }
        );
    }

    #[test]
    fn condition_order_does_not_hurt_where_or_lf() {
        let (tables, mut examples) = fixture();
        examples[0].gold.conds = vec![
            Cond::new(0, CondOp::Gt, "5"),
            Cond::new(1, CondOp::Eql, "Jordan"),
        ];
        let mut pred = examples[0].gold.clone();
        pred.conds.reverse();
        let preds = vec![pred, examples[1].gold.clone()];
        let m = evaluate_predictions(&preds, &examples, &tables)
            .unwrap()
            .metrics();
        assert_eq!(m.acc_where, 1.0);
        assert_eq!(m.lf_match, 1.0);
    }

    #[test]
    fn fig1_pair_scores_exec_without_lf() {
        let (tables, examples) = fixture();
        // gold: count(Player) where No.=23; pred: count(No.) where No.=23
        let pred0 = SqlSketch::new(0, Agg::Count, vec![Cond::new(0, CondOp::Eql, "23")]);
        let preds = vec![pred0, examples[1].gold.clone()];
        let m = evaluate_predictions(&preds, &examples, &tables)
            .unwrap()
            .metrics();
        assert_eq!(m.lf_match, 0.5);
        assert_eq!(m.exec_match, 1.0);
        assert!(m.exec_match >= m.lf_match);
        assert!(m.lf_match <= m.acc_agg.min(m.acc_sel).min(m.acc_where));
    }

    #[test]
    fn metrics_are_shuffle_invariant() {
        let (tables, examples) = fixture();
        let preds: Vec<SqlSketch> = examples.iter().map(|e| e.gold.clone()).collect();
        let fwd = evaluate_predictions(&preds, &examples, &tables)
            .unwrap()
            .metrics();
        let rev_preds: Vec<SqlSketch> = preds.iter().rev().cloned().collect();
        let rev_examples: Vec<Example> = examples.iter().rev().cloned().collect();
        let rev = evaluate_predictions(&rev_preds, &rev_examples, &tables)
            .unwrap()
            .metrics();
        assert_eq!(fwd, rev);
    }
}
