use crate::error::{Error, Result};

/// Column value type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColType {
    Text,
    Real,
}

impl ColType {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(ColType::Text),
            "real" => Ok(ColType::Real),
            other => Err(Error::Schema(format!("unknown column type {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ColType::Text => "text",
            ColType::Real => "real",
        }
    }
}

/// One table cell. Real-typed columns parse eagerly at load; cells that do
/// not parse keep their string form (and make GT/LT comparisons error).
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Real(f64),
}

impl Cell {
    /// Numeric view, parsing text on the fly.
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Cell::Real(x) => Some(*x),
            Cell::Text(s) => s.trim().parse().ok(),
        }
    }

    pub fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Real(x) => format!("{x}"),
        }
    }
}

/// One table: header names, per-column types, data rows.
#[derive(Debug, Clone)]
pub struct TableSchema {
    pub id: String,
    pub headers: Vec<String>,
    pub types: Vec<ColType>,
    pub rows: Vec<Vec<Cell>>,
}

impl TableSchema {
    pub fn new(
        id: String,
        headers: Vec<String>,
        types: Vec<ColType>,
        rows: Vec<Vec<Cell>>,
    ) -> Result<Self> {
        if types.len() != headers.len() {
            return Err(Error::Schema(format!(
                "table {id:?}: {} headers but {} types",
                headers.len(),
                types.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != headers.len() {
                return Err(Error::Schema(format!(
                    "table {id:?}: row {i} has {} cells, expected {}",
                    row.len(),
                    headers.len()
                )));
            }
        }
        Ok(TableSchema {
            id,
            headers,
            types,
            rows,
        })
    }

    pub fn n_cols(&self) -> usize {
        self.headers.len()
    }
}
