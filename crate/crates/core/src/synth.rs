//! Hand-built 32-example corpus over two 4-column tables, used by the
//! overfit acceptance run, CLI smoke tests, and demos. Questions carry
//! unambiguous cues for every slot (aggregator keyword, column names,
//! "is"/"over"/"under" operators) and every condition value appears
//! verbatim in its question.

use std::collections::BTreeMap;

use crate::sql::{
    tokenize, Agg, Cell, ColType, Cond, CondOp, Example, SqlSketch, TableSchema,
};

fn games() -> TableSchema {
    TableSchema::new(
        "games".into(),
        vec!["team".into(), "wins".into(), "losses".into(), "year".into()],
        vec![ColType::Text, ColType::Real, ColType::Real, ColType::Real],
        vec![
            vec![Cell::Text("lions".into()), Cell::Real(10.0), Cell::Real(4.0), Cell::Real(2001.0)],
            vec![Cell::Text("tigers".into()), Cell::Real(8.0), Cell::Real(6.0), Cell::Real(2002.0)],
            vec![Cell::Text("bears".into()), Cell::Real(12.0), Cell::Real(2.0), Cell::Real(2003.0)],
            vec![Cell::Text("wolves".into()), Cell::Real(6.0), Cell::Real(9.0), Cell::Real(2004.0)],
        ],
    )
    .expect("static table")
}

fn cities() -> TableSchema {
    TableSchema::new(
        "cities".into(),
        vec!["city".into(), "people".into(), "parks".into(), "rank".into()],
        vec![ColType::Text, ColType::Real, ColType::Real, ColType::Real],
        vec![
            vec![Cell::Text("boston".into()), Cell::Real(7.0), Cell::Real(30.0), Cell::Real(1.0)],
            vec![Cell::Text("dallas".into()), Cell::Real(9.0), Cell::Real(22.0), Cell::Real(2.0)],
            vec![Cell::Text("miami".into()), Cell::Real(5.0), Cell::Real(18.0), Cell::Real(3.0)],
            vec![Cell::Text("seattle".into()), Cell::Real(8.0), Cell::Real(25.0), Cell::Real(4.0)],
        ],
    )
    .expect("static table")
}

type Row = (&'static str, &'static str, usize, Agg, &'static [(usize, CondOp, &'static str)]);

const EXAMPLES: &[Row] = &[
    ("games", "show team where wins over 9", 0, Agg::None, &[(1, CondOp::Gt, "9")]),
    ("games", "show wins where team is lions", 1, Agg::None, &[(0, CondOp::Eql, "lions")]),
    ("games", "total wins where year under 2003", 1, Agg::Sum, &[(3, CondOp::Lt, "2003")]),
    ("games", "average losses where year over 2001", 2, Agg::Avg, &[(3, CondOp::Gt, "2001")]),
    ("games", "largest wins", 1, Agg::Max, &[]),
    ("games", "smallest losses where wins over 7", 2, Agg::Min, &[(1, CondOp::Gt, "7")]),
    ("games", "count team where losses under 5", 0, Agg::Count, &[(2, CondOp::Lt, "5")]),
    ("games", "show year where team is bears", 3, Agg::None, &[(0, CondOp::Eql, "bears")]),
    ("games", "count team where wins over 7 and year under 2004", 0, Agg::Count, &[(1, CondOp::Gt, "7"), (3, CondOp::Lt, "2004")]),
    ("games", "show losses where team is tigers", 2, Agg::None, &[(0, CondOp::Eql, "tigers")]),
    ("games", "total losses", 2, Agg::Sum, &[]),
    ("games", "largest year where wins under 9", 3, Agg::Max, &[(1, CondOp::Lt, "9")]),
    ("games", "average wins", 1, Agg::Avg, &[]),
    ("games", "show team where year is 2004", 0, Agg::None, &[(3, CondOp::Eql, "2004")]),
    ("games", "smallest wins where losses over 5", 1, Agg::Min, &[(2, CondOp::Gt, "5")]),
    ("games", "count team where team is wolves", 0, Agg::Count, &[(0, CondOp::Eql, "wolves")]),
    ("cities", "show city where people over 6", 0, Agg::None, &[(1, CondOp::Gt, "6")]),
    ("cities", "show people where city is boston", 1, Agg::None, &[(0, CondOp::Eql, "boston")]),
    ("cities", "total parks where rank under 3", 2, Agg::Sum, &[(3, CondOp::Lt, "3")]),
    ("cities", "average people where rank over 1", 1, Agg::Avg, &[(3, CondOp::Gt, "1")]),
    ("cities", "largest parks", 2, Agg::Max, &[]),
    ("cities", "smallest people where parks over 20", 1, Agg::Min, &[(2, CondOp::Gt, "20")]),
    ("cities", "count city where people under 8", 0, Agg::Count, &[(1, CondOp::Lt, "8")]),
    ("cities", "show rank where city is miami", 3, Agg::None, &[(0, CondOp::Eql, "miami")]),
    ("cities", "count city where parks over 20 and rank under 4", 0, Agg::Count, &[(2, CondOp::Gt, "20"), (3, CondOp::Lt, "4")]),
    ("cities", "show parks where city is dallas", 2, Agg::None, &[(0, CondOp::Eql, "dallas")]),
    ("cities", "total people", 1, Agg::Sum, &[]),
    ("cities", "largest rank where people under 8", 3, Agg::Max, &[(1, CondOp::Lt, "8")]),
    ("cities", "average parks", 2, Agg::Avg, &[]),
    ("cities", "show city where rank is 4", 0, Agg::None, &[(3, CondOp::Eql, "4")]),
    ("cities", "smallest parks where people over 6", 2, Agg::Min, &[(1, CondOp::Gt, "6")]),
    ("cities", "count city where city is seattle", 0, Agg::Count, &[(0, CondOp::Eql, "seattle")]),
];

/// The 32-example corpus: two tables, four columns each.
pub fn tiny_corpus() -> (BTreeMap<String, TableSchema>, Vec<Example>) {
    let mut tables = BTreeMap::new();
    for t in [games(), cities()] {
        tables.insert(t.id.clone(), t);
    }
    let examples = EXAMPLES
        .iter()
        .map(|(table_id, question, sel, agg, conds)| Example {
            question: question.to_string(),
            tokens: tokenize(question),
            table_id: table_id.to_string(),
            gold: SqlSketch::new(
                *sel,
                *agg,
                conds
                    .iter()
                    .map(|(col, op, v)| Cond::new(*col, *op, *v))
                    .collect(),
            ),
        })
        .collect();
    (tables, examples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::plan_value_targets;
    use crate::sql::execute;

    #[test]
    fn corpus_is_valid_and_aligned() {
        let (tables, examples) = tiny_corpus();
        assert_eq!(examples.len(), 32);
        assert_eq!(tables.len(), 2);
        for ex in &examples {
            let table = &tables[&ex.table_id];
            assert_eq!(table.n_cols(), 4);
            ex.gold.validate(table).unwrap();
            // every gold executes (COUNT or non-empty aggregate)
            execute(&ex.gold, table).unwrap_or_else(|e| {
                panic!("gold for {:?} fails to execute: {e}", ex.question)
            });
            // every value aligns to a question token span
            for cond in &ex.gold.conds {
                let plan = plan_value_targets(&ex.tokens, &cond.value);
                assert!(plan.aligned, "value {:?} not in {:?}", cond.value, ex.question);
            }
        }
    }

    #[test]
    fn corpus_covers_all_heads() {
        let (_, examples) = tiny_corpus();
        for agg_idx in 0..6 {
            assert!(
                examples.iter().any(|e| e.gold.agg.index() == agg_idx),
                "aggregator {agg_idx} uncovered"
            );
        }
        for op in [CondOp::Eql, CondOp::Gt, CondOp::Lt] {
            assert!(examples
                .iter()
                .any(|e| e.gold.conds.iter().any(|c| c.op == op)));
        }
        for k in 0..=2 {
            assert!(examples.iter().any(|e| e.gold.conds.len() == k));
        }
    }
}
