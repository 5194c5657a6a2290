use super::schema::TableSchema;
use super::tokenize::normalize_ws;
use crate::error::{Error, Result};

/// WikiSQL-style queries carry at most this many WHERE conditions.
pub const MAX_CONDS: usize = 4;

/// SELECT-clause aggregator, in WikiSQL index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Agg {
    None,
    Max,
    Min,
    Count,
    Sum,
    Avg,
}

impl Agg {
    pub const COUNT: usize = 6;

    pub fn from_index(i: usize) -> Result<Self> {
        use Agg::*;
        [None, Max, Min, Count, Sum, Avg]
            .get(i)
            .copied()
            .ok_or_else(|| Error::Schema(format!("aggregator index {i} out of range 0..=5")))
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn keyword(self) -> Option<&'static str> {
        match self {
            Agg::None => None,
            Agg::Max => Some("max"),
            Agg::Min => Some("min"),
            Agg::Count => Some("count"),
            Agg::Sum => Some("sum"),
            Agg::Avg => Some("avg"),
        }
    }
}

/// Condition operator, in WikiSQL index order: =, >, <.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CondOp {
    Eql,
    Gt,
    Lt,
}

impl CondOp {
    pub const COUNT: usize = 3;

    pub fn from_index(i: usize) -> Result<Self> {
        [CondOp::Eql, CondOp::Gt, CondOp::Lt]
            .get(i)
            .copied()
            .ok_or_else(|| Error::Schema(format!("operator index {i} out of range 0..=2")))
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CondOp::Eql => "=",
            CondOp::Gt => ">",
            CondOp::Lt => "<",
        }
    }
}

/// One WHERE conjunct.
#[derive(Debug, Clone, PartialEq)]
pub struct Cond {
    pub col: usize,
    pub op: CondOp,
    pub value: String,
}

impl Cond {
    pub fn new(col: usize, op: CondOp, value: impl Into<String>) -> Self {
        Cond {
            col,
            op,
            value: value.into(),
        }
    }

    fn sort_key(&self) -> (usize, u8, String) {
        (self.col, self.op.index() as u8, normalize_ws(&self.value))
    }
}

/// Structured query: one select column, optional aggregator, a set of
/// conditions. Condition order never matters for the domain semantics;
/// derived `PartialEq` is field-exact and only used for round-trip tests.
#[derive(Debug, Clone, PartialEq)]
pub struct SqlSketch {
    pub sel_col: usize,
    pub agg: Agg,
    pub conds: Vec<Cond>,
}

impl SqlSketch {
    pub fn new(sel_col: usize, agg: Agg, conds: Vec<Cond>) -> Self {
        SqlSketch {
            sel_col,
            agg,
            conds,
        }
    }

    pub fn validate(&self, table: &TableSchema) -> Result<()> {
        let c = table.n_cols();
        if self.sel_col >= c {
            return Err(Error::Schema(format!(
                "select column {} out of range for table {:?} with {c} columns",
                self.sel_col, table.id
            )));
        }
        if self.conds.len() > MAX_CONDS {
            return Err(Error::Schema(format!(
                "{} conditions exceed the maximum of {MAX_CONDS}",
                self.conds.len()
            )));
        }
        for cond in &self.conds {
            if cond.col >= c {
                return Err(Error::Schema(format!(
                    "condition column {} out of range for table {:?} with {c} columns",
                    cond.col, table.id
                )));
            }
        }
        Ok(())
    }

    /// Condition-set equality: order-insensitive, values compared after
    /// lowercasing and whitespace normalization.
    pub fn same_condition_set(&self, other: &SqlSketch) -> bool {
        if self.conds.len() != other.conds.len() {
            return false;
        }
        let mut a: Vec<_> = self.conds.iter().map(Cond::sort_key).collect();
        let mut b: Vec<_> = other.conds.iter().map(Cond::sort_key).collect();
        a.sort();
        b.sort();
        a == b
    }
}

/// Column display name for canonical rendering. Duplicate header names get
/// an index suffix so distinct columns never render identically (keeps
/// string match implying component match).
fn canonical_col(table: &TableSchema, col: usize) -> String {
    let name = normalize_ws(&table.headers[col]);
    let dup = table
        .headers
        .iter()
        .enumerate()
        .any(|(i, h)| i != col && normalize_ws(h) == name);
    if dup {
        format!("{name}#{col}")
    } else {
        name
    }
}

/// Deterministic order-insensitive rendering, e.g.
/// `select count(player) from t where no. = 23`.
pub fn canonical_string(s: &SqlSketch, table: &TableSchema) -> String {
    let col = canonical_col(table, s.sel_col);
    let sel = match s.agg.keyword() {
        Some(kw) => format!("{kw}({col})"),
        None => col,
    };
    let mut out = format!("select {sel} from t");
    if !s.conds.is_empty() {
        let mut conds: Vec<&Cond> = s.conds.iter().collect();
        conds.sort_by_key(|c| c.sort_key());
        let parts: Vec<String> = conds
            .iter()
            .map(|c| {
                format!(
                    "{} {} {}",
                    canonical_col(table, c.col),
                    c.op.symbol(),
                    normalize_ws(&c.value)
                )
            })
            .collect();
        out.push_str(" where ");
        out.push_str(&parts.join(" and "));
    }
    out
}

/// Logical-form match: canonical strings are equal.
pub fn sketches_match(a: &SqlSketch, b: &SqlSketch, table: &TableSchema) -> bool {
    canonical_string(a, table) == canonical_string(b, table)
}
