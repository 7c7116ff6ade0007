//! Population data model: labeled tables, CSV I/O, preprocessing and the
//! numeric [`PopulationFrame`] every other module consumes.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Column-oriented table of raw text cells. `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    names: Vec<String>,
    columns: Vec<Vec<Option<String>>>,
}

impl Table {
    pub fn new(names: Vec<String>, columns: Vec<Vec<Option<String>>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::LengthMismatch {
                expected: names.len(),
                actual: columns.len(),
            });
        }
        let rows = columns.first().map_or(0, Vec::len);
        if let Some(bad) = columns.iter().find(|c| c.len() != rows) {
            return Err(Error::LengthMismatch {
                expected: rows,
                actual: bad.len(),
            });
        }
        let mut seen = HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::InvalidFrame(format!("duplicate column `{dup}`")));
        }
        Ok(Self { names, columns })
    }

    /// Convenience constructor from string cells; empty strings become missing.
    pub fn from_rows(names: &[&str], rows: &[Vec<&str>]) -> Result<Self> {
        let mut columns = vec![Vec::with_capacity(rows.len()); names.len()];
        for row in rows {
            if row.len() != names.len() {
                return Err(Error::LengthMismatch {
                    expected: names.len(),
                    actual: row.len(),
                });
            }
            for (col, cell) in columns.iter_mut().zip(row) {
                col.push((!cell.is_empty()).then(|| cell.to_string()));
            }
        }
        Self::new(names.iter().map(|s| s.to_string()).collect(), columns)
    }

    pub fn read_csv<R: Read>(reader: R, missing_token: Option<&str>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let names: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut columns = vec![Vec::new(); names.len()];
        for record in rdr.records() {
            let record = record?;
            for (col, cell) in columns.iter_mut().zip(record.iter()) {
                let cell = cell.trim();
                let missing = cell.is_empty() || missing_token == Some(cell);
                col.push((!missing).then(|| cell.to_string()));
            }
        }
        Self::new(names, columns)
    }

    pub fn read_csv_path(path: &Path, missing_token: Option<&str>) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
        Self::read_csv(std::io::BufReader::new(file), missing_token)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(&self.names)?;
        for row in 0..self.n_rows() {
            wtr.write_record(
                self.columns
                    .iter()
                    .map(|c| c[row].as_deref().unwrap_or("")),
            )?;
        }
        wtr.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<&[Option<String>]> {
        self.column_index(name).map(|i| self.columns[i].as_slice())
    }

    /// Keeps only the named columns, in the given order.
    pub fn project(&self, names: &[String]) -> Result<Table> {
        let mut columns = Vec::with_capacity(names.len());
        for name in names {
            let i = self
                .column_index(name)
                .ok_or_else(|| Error::UnknownColumn(name.clone()))?;
            columns.push(self.columns[i].clone());
        }
        Table::new(names.to_vec(), columns)
    }

    fn take_rows(&self, rows: &[usize]) -> Table {
        Table {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&r| c[r].clone()).collect())
                .collect(),
        }
    }

    pub fn filter(&self, filter: &RowFilter) -> Result<Table> {
        let col = self
            .column(&filter.column)
            .ok_or_else(|| Error::UnknownColumn(filter.column.clone()))?;
        let rows: Vec<usize> = col
            .iter()
            .enumerate()
            .filter(|(_, cell)| cell.as_deref().is_some_and(|v| filter.matches(v)))
            .map(|(i, _)| i)
            .collect();
        Ok(self.take_rows(&rows))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

/// A single-column row predicate such as `year == 2014`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowFilter {
    pub column: String,
    pub op: CompareOp,
    pub value: String,
}

impl RowFilter {
    pub fn parse(expr: &str) -> Result<Self> {
        // Two-character operators first so `<=` is not read as `<`.
        const OPS: [(&str, CompareOp); 6] = [
            ("==", CompareOp::Eq),
            ("!=", CompareOp::Ne),
            ("<=", CompareOp::Le),
            (">=", CompareOp::Ge),
            ("<", CompareOp::Lt),
            (">", CompareOp::Gt),
        ];
        for (token, op) in OPS {
            if let Some((lhs, rhs)) = expr.split_once(token) {
                let column = lhs.trim();
                let value = rhs.trim().trim_matches('"');
                if column.is_empty() || value.is_empty() {
                    break;
                }
                return Ok(Self {
                    column: column.to_string(),
                    op,
                    value: value.to_string(),
                });
            }
        }
        Err(Error::BadConfig(format!("cannot parse row filter `{expr}`")))
    }

    pub fn matches(&self, cell: &str) -> bool {
        let ord = match (cell.parse::<f64>(), self.value.parse::<f64>()) {
            (Ok(a), Ok(b)) => a.partial_cmp(&b),
            _ => match self.op {
                CompareOp::Eq | CompareOp::Ne => Some(cell.cmp(&self.value)),
                _ => None,
            },
        };
        let Some(ord) = ord else { return false };
        match self.op {
            CompareOp::Eq => ord == Ordering::Equal,
            CompareOp::Ne => ord != Ordering::Equal,
            CompareOp::Lt => ord == Ordering::Less,
            CompareOp::Le => ord != Ordering::Greater,
            CompareOp::Gt => ord == Ordering::Greater,
            CompareOp::Ge => ord != Ordering::Less,
        }
    }
}

fn level_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        _ => a.cmp(b),
    }
}

/// Name of the indicator column for one level of a categorical column.
pub fn indicator_name(column: &str, level: &str) -> String {
    format!("{column}_{level}")
}

/// One-hot encodes `categorical` columns (every level kept) and, when
/// `drop_missing` is set, removes rows with any missing cell. Categorical
/// names that are not present in the table are ignored, so encoding an
/// already-encoded table is a no-op.
pub fn preprocess(table: &Table, categorical: &[String], drop_missing: bool) -> Table {
    let table = if drop_missing {
        let rows: Vec<usize> = (0..table.n_rows())
            .filter(|&r| table.columns.iter().all(|c| c[r].is_some()))
            .collect();
        if rows.len() == table.n_rows() {
            table.clone()
        } else {
            table.take_rows(&rows)
        }
    } else {
        table.clone()
    };

    let mut names = Vec::with_capacity(table.names.len());
    let mut columns = Vec::with_capacity(table.columns.len());
    for (name, col) in table.names.iter().zip(&table.columns) {
        if !categorical.contains(name) {
            names.push(name.clone());
            columns.push(col.clone());
            continue;
        }
        let mut levels: Vec<&str> = col.iter().flatten().map(String::as_str).collect();
        levels.sort_by(|a, b| level_order(a, b));
        levels.dedup();
        for level in levels {
            names.push(indicator_name(name, level));
            columns.push(
                col.iter()
                    .map(|cell| {
                        cell.as_deref()
                            .map(|v| if v == level { "1" } else { "0" }.to_string())
                    })
                    .collect(),
            );
        }
    }
    Table { names, columns }
}

/// A finite population: covariates (stored by column) and one outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationFrame {
    covariates: Vec<Vec<f64>>,
    outcome: Vec<f64>,
    covariate_names: Vec<String>,
    outcome_name: String,
}

impl PopulationFrame {
    pub fn new(
        covariate_names: Vec<String>,
        covariates: Vec<Vec<f64>>,
        outcome_name: impl Into<String>,
        outcome: Vec<f64>,
    ) -> Result<Self> {
        let n = outcome.len();
        if n == 0 {
            return Err(Error::EmptyTable);
        }
        if covariates.is_empty() {
            return Err(Error::InvalidFrame("no covariates".into()));
        }
        if covariate_names.len() != covariates.len() {
            return Err(Error::LengthMismatch {
                expected: covariates.len(),
                actual: covariate_names.len(),
            });
        }
        for col in &covariates {
            if col.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: col.len(),
                });
            }
        }
        let mut seen = HashSet::new();
        if let Some(dup) = covariate_names.iter().find(|c| !seen.insert(c.as_str())) {
            return Err(Error::InvalidFrame(format!("duplicate covariate `{dup}`")));
        }
        if outcome.iter().chain(covariates.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidFrame("non-finite value".into()));
        }
        Ok(Self {
            covariates,
            outcome,
            covariate_names,
            outcome_name: outcome_name.into(),
        })
    }

    pub fn n_units(&self) -> usize {
        self.outcome.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.len()
    }

    pub fn covariate(&self, j: usize) -> &[f64] {
        &self.covariates[j]
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    pub fn outcome_mean(&self) -> f64 {
        self.outcome.iter().sum::<f64>() / self.n_units() as f64
    }

    /// Frame restricted to the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let pick = |v: &[f64]| rows.iter().map(|&r| v[r]).collect::<Vec<_>>();
        Self::new(
            self.covariate_names.clone(),
            self.covariates.iter().map(|c| pick(c)).collect(),
            self.outcome_name.clone(),
            pick(&self.outcome),
        )
    }

    /// Covariates first, outcome last.
    pub fn to_table(&self) -> Table {
        let fmt = |v: &[f64]| v.iter().map(|x| Some(x.to_string())).collect::<Vec<_>>();
        let mut names = self.covariate_names.clone();
        names.push(self.outcome_name.clone());
        let mut columns: Vec<_> = self.covariates.iter().map(|c| fmt(c)).collect();
        columns.push(fmt(&self.outcome));
        Table { names, columns }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        self.to_table().write_csv(writer)
    }
}

fn numeric_column(table: &Table, name: &str) -> Result<Vec<f64>> {
    let col = table
        .column(name)
        .ok_or_else(|| Error::UnknownColumn(name.to_string()))?;
    col.iter()
        .enumerate()
        .map(|(row, cell)| {
            let bad = |value: &str| Error::NonNumericColumn {
                column: name.to_string(),
                row,
                value: value.to_string(),
            };
            let text = cell.as_deref().ok_or_else(|| bad(""))?;
            match text.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(bad(text)),
            }
        })
        .collect()
}

/// Packages numeric table columns into a frame, in the requested order.
pub fn build_frame(
    table: &Table,
    outcome_column: &str,
    covariate_columns: &[String],
) -> Result<PopulationFrame> {
    for name in std::iter::once(outcome_column).chain(covariate_columns.iter().map(String::as_str)) {
        if table.column_index(name).is_none() {
            return Err(Error::UnknownColumn(name.to_string()));
        }
    }
    if covariate_columns.is_empty() {
        return Err(Error::InvalidFrame("no covariate columns requested".into()));
    }
    if table.n_rows() == 0 {
        return Err(Error::EmptyTable);
    }
    let outcome = numeric_column(table, outcome_column)?;
    let covariates = covariate_columns
        .iter()
        .map(|c| numeric_column(table, c))
        .collect::<Result<Vec<_>>>()?;
    PopulationFrame::new(covariate_columns.to_vec(), covariates, outcome_column, outcome)
}

pub fn read_frame_csv(path: &Path, outcome: &str, covariates: &[String]) -> Result<PopulationFrame> {
    build_frame(&Table::read_csv_path(path, None)?, outcome, covariates)
}
