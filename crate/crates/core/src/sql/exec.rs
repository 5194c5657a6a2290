//! In-memory execution of SQL sketches against a table.

use super::schema::{Cell, ColType, TableSchema};
use super::sketch::{Agg, Cond, CondOp, SqlSketch};
use super::tokenize::normalize_ws;
use thiserror::Error;

/// Typed execution failure. Evaluation scores these as non-matches; they
/// never abort a run.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("column index {0} out of range")]
    BadColumn(usize),
    #[error("ordered comparison on text column {0:?}")]
    OrderedCompareOnText(String),
    #[error("condition value {0:?} is not numeric")]
    BadNumericValue(String),
    #[error("cell {0:?} is not numeric")]
    NonNumericCell(String),
    #[error("aggregate over an empty row set")]
    EmptyAggregate,
}

/// Query output: a projected multiset of cells, or an aggregate scalar.
#[derive(Debug, Clone, PartialEq)]
pub enum QueryResult {
    Rows(Vec<Cell>),
    Scalar(f64),
}

pub type ExecOutcome = Result<QueryResult, ExecError>;

fn cond_holds(cond: &Cond, table: &TableSchema, row: &[Cell]) -> Result<bool, ExecError> {
    let cell = row.get(cond.col).ok_or(ExecError::BadColumn(cond.col))?;
    match cond.op {
        CondOp::Eql => {
            // numeric equality when both sides are numbers, else
            // case-insensitive whitespace-normalized string equality
            if let (Some(a), Some(b)) = (cell.as_number(), cond.value.trim().parse::<f64>().ok()) {
                Ok(a == b)
            } else {
                Ok(normalize_ws(&cell.render()) == normalize_ws(&cond.value))
            }
        }
        CondOp::Gt | CondOp::Lt => {
            if table.types[cond.col] != ColType::Real {
                return Err(ExecError::OrderedCompareOnText(
                    table.headers[cond.col].clone(),
                ));
            }
            let rhs: f64 = cond
                .value
                .trim()
                .parse()
                .map_err(|_| ExecError::BadNumericValue(cond.value.clone()))?;
            let lhs = match cell {
                Cell::Real(x) => *x,
                Cell::Text(s) => return Err(ExecError::NonNumericCell(s.clone())),
            };
            Ok(match cond.op {
                CondOp::Gt => lhs > rhs,
                CondOp::Lt => lhs < rhs,
                CondOp::Eql => unreachable!(),
            })
        }
    }
}

/// Filter rows by every condition, project the select column, apply the
/// aggregator. COUNT of an empty set is 0; the other aggregates error on
/// empty input (their SQL value would be NULL) and on non-numeric cells.
pub fn execute(s: &SqlSketch, table: &TableSchema) -> ExecOutcome {
    if s.sel_col >= table.n_cols() {
        return Err(ExecError::BadColumn(s.sel_col));
    }
    let mut projected: Vec<Cell> = Vec::new();
    'rows: for row in &table.rows {
        for cond in &s.conds {
            if !cond_holds(cond, table, row)? {
                continue 'rows;
            }
        }
        projected.push(row[s.sel_col].clone());
    }

    match s.agg {
        Agg::None => Ok(QueryResult::Rows(projected)),
        Agg::Count => Ok(QueryResult::Scalar(projected.len() as f64)),
        agg => {
            if projected.is_empty() {
                return Err(ExecError::EmptyAggregate);
            }
            let mut nums = Vec::with_capacity(projected.len());
            for cell in &projected {
                match cell {
                    Cell::Real(x) => nums.push(*x),
                    Cell::Text(t) => return Err(ExecError::NonNumericCell(t.clone())),
                }
            }
            let value = match agg {
                Agg::Sum => nums.iter().sum(),
                Agg::Avg => nums.iter().sum::<f64>() / nums.len() as f64,
                Agg::Max => nums.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                Agg::Min => nums.iter().cloned().fold(f64::INFINITY, f64::min),
                Agg::None | Agg::Count => unreachable!(),
            };
            Ok(QueryResult::Scalar(value))
        }
    }
}

fn scalar_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * f64::max(1.0, f64::max(a.abs(), b.abs()))
}

fn cell_eq(a: &Cell, b: &Cell) -> bool {
    match (a.as_number(), b.as_number()) {
        (Some(x), Some(y)) => scalar_eq(x, y),
        _ => normalize_ws(&a.render()) == normalize_ws(&b.render()),
    }
}

/// Compare execution outcomes: scalars with relative tolerance 1e-9,
/// row multisets order-insensitively with numeric coercion. Errors never
/// match anything, including an identical error on the other side.
pub fn results_match(a: &ExecOutcome, b: &ExecOutcome) -> bool {
    match (a, b) {
        (Ok(QueryResult::Scalar(x)), Ok(QueryResult::Scalar(y))) => scalar_eq(*x, *y),
        (Ok(QueryResult::Rows(xs)), Ok(QueryResult::Rows(ys))) => {
            if xs.len() != ys.len() {
                return false;
            }
            // tolerance-aware multiset match; desk-scale row counts
            let mut used = vec![false; ys.len()];
            'outer: for x in xs {
                for (i, y) in ys.iter().enumerate() {
                    if !used[i] && cell_eq(x, y) {
                        used[i] = true;
                        continue 'outer;
                    }
                }
                return false;
            }
            true
        }
        _ => false,
    }
}
