//! The deterministic SQL world: table schemas, sketches, tokenization,
//! JSON-lines ingestion, canonicalization, and in-memory execution.

mod data;
mod exec;
mod schema;
mod sketch;
mod tokenize;

pub use data::{example_to_json_line, load_examples, load_tables, Example};
pub use exec::{execute, results_match, ExecError, ExecOutcome, QueryResult};
pub use schema::{Cell, ColType, TableSchema};
pub use sketch::{canonical_string, sketches_match, Agg, Cond, CondOp, SqlSketch, MAX_CONDS};
pub use tokenize::{normalize_ws, tokenize};
