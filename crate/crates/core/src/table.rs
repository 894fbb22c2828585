//! Tidy tabular container: one column per feature, one row per sample.
//!
//! Cells are typed individually as number, text or missing. A column's
//! feature kind is inferred from its training values, not declared.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Number(f64),
    Text(String),
    Missing,
}

impl Cell {
    /// Types a raw field: float when parseable, otherwise text.
    /// Sentinel detection is the caller's job.
    pub fn parse(raw: &str) -> Cell {
        if raw.is_empty() {
            return Cell::Missing;
        }
        match raw.parse::<f64>() {
            Ok(v) => Cell::Number(v),
            Err(_) => Cell::Text(raw.to_string()),
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Number(v) => Some(*v),
            _ => None,
        }
    }

    /// Canonical text key used for vocabularies. `None` for missing.
    pub fn key(&self) -> Option<String> {
        match self {
            Cell::Number(v) => Some(format_number(*v)),
            Cell::Text(s) => Some(s.clone()),
            Cell::Missing => None,
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Number(v) => f.write_str(&format_number(*v)),
            Cell::Text(s) => f.write_str(s),
            Cell::Missing => Ok(()),
        }
    }
}

/// Shortest text that parses back to the same `f64`.
pub fn format_number(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    BooleanCategoric,
    Categoric,
    Passthrough,
}

/// Immutable-after-construction table. `row_index` survives shuffles,
/// splits and augmentation so rows can be traced back to their source.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    names: Vec<String>,
    columns: Vec<Vec<Cell>>,
    row_index: Vec<u64>,
}

impl DataTable {
    pub fn new(names: Vec<String>, columns: Vec<Vec<Cell>>) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        let row_index = (0..n as u64).collect();
        Self::with_index(names, columns, row_index)
    }

    pub fn with_index(
        names: Vec<String>,
        columns: Vec<Vec<Cell>>,
        row_index: Vec<u64>,
    ) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Internal(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateHeader(name.clone()));
            }
        }
        for (name, col) in names.iter().zip(&columns) {
            if col.len() != row_index.len() {
                return Err(Error::Internal(format!(
                    "column {name:?} has {} rows, expected {}",
                    col.len(),
                    row_index.len()
                )));
            }
        }
        Ok(DataTable {
            names,
            columns,
            row_index,
        })
    }

    /// A table with columns but no rows.
    pub fn empty(names: Vec<String>) -> Result<Self> {
        let columns = vec![Vec::new(); names.len()];
        Self::with_index(names, columns, Vec::new())
    }

    pub fn n_rows(&self) -> usize {
        self.row_index.len()
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row_index(&self) -> &[u64] {
        &self.row_index
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, &[Cell])> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.columns.iter().map(Vec::as_slice))
    }

    pub fn column(&self, name: &str) -> Option<&[Cell]> {
        self.position(name).map(|i| self.columns[i].as_slice())
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column_at(&self, i: usize) -> &[Cell] {
        &self.columns[i]
    }

    pub fn into_parts(self) -> (Vec<String>, Vec<Vec<Cell>>, Vec<u64>) {
        (self.names, self.columns, self.row_index)
    }

    /// New table holding the given rows, in the given order.
    pub fn take_rows(&self, rows: &[usize]) -> DataTable {
        let columns = self
            .columns
            .iter()
            .map(|col| rows.iter().map(|&r| col[r].clone()).collect())
            .collect();
        DataTable {
            names: self.names.clone(),
            columns,
            row_index: rows.iter().map(|&r| self.row_index[r]).collect(),
        }
    }

    /// New table restricted to the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<DataTable> {
        let mut columns = Vec::with_capacity(names.len());
        for name in names {
            let col = self
                .column(name)
                .ok_or_else(|| Error::UnknownColumn(name.clone()))?;
            columns.push(col.to_vec());
        }
        DataTable::with_index(names.to_vec(), columns, self.row_index.clone())
    }

    pub fn set_row_index(&mut self, row_index: Vec<u64>) -> Result<()> {
        if row_index.len() != self.n_rows() {
            return Err(Error::Internal("row index length mismatch".into()));
        }
        self.row_index = row_index;
        Ok(())
    }

    /// Vertical concatenation; column names must agree exactly.
    pub fn concat(tables: &[DataTable]) -> Result<DataTable> {
        let Some(first) = tables.first() else {
            return Err(Error::Internal("concat of zero tables".into()));
        };
        let mut columns = vec![Vec::new(); first.n_cols()];
        let mut row_index = Vec::new();
        for t in tables {
            if t.names != first.names {
                return Err(Error::Internal("concat of tables with different columns".into()));
            }
            for (dst, src) in columns.iter_mut().zip(&t.columns) {
                dst.extend_from_slice(src);
            }
            row_index.extend_from_slice(&t.row_index);
        }
        DataTable::with_index(first.names.clone(), columns, row_index)
    }

    pub fn rename(&mut self, names: Vec<String>) -> Result<()> {
        let t = DataTable::with_index(names, std::mem::take(&mut self.columns), self.row_index.clone())?;
        *self = t;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub has_header: bool,
    /// Field values read as missing. Defaults to the empty string only.
    pub missing_sentinels: Vec<String>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            delimiter: b',',
            has_header: true,
            missing_sentinels: vec![String::new()],
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<DataTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, options)
}

pub fn read_csv<R: std::io::Read>(reader: R, options: &CsvOptions) -> Result<DataTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);

    let mut records = rdr.records();
    let mut names: Vec<String> = Vec::new();
    let mut columns: Vec<Vec<Cell>> = Vec::new();

    if options.has_header {
        match records.next() {
            Some(rec) => {
                let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
                names = rec.iter().map(str::to_string).collect();
                let mut seen = HashSet::new();
                for n in &names {
                    if !seen.insert(n.as_str()) {
                        return Err(Error::DuplicateHeader(n.clone()));
                    }
                }
                columns = vec![Vec::new(); names.len()];
            }
            None => return DataTable::empty(Vec::new()),
        }
    }

    // Header line is row 1 when present.
    let first_data_row = if options.has_header { 2 } else { 1 };
    for (i, rec) in records.enumerate() {
        let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
        if names.is_empty() && columns.is_empty() {
            names = (0..rec.len()).map(|j| j.to_string()).collect();
            columns = vec![Vec::new(); names.len()];
        }
        if rec.len() != names.len() {
            return Err(Error::RaggedRow {
                row: first_data_row + i,
                expected: names.len(),
                found: rec.len(),
            });
        }
        for (col, field) in columns.iter_mut().zip(rec.iter()) {
            let cell = if options.missing_sentinels.iter().any(|s| s == field) {
                Cell::Missing
            } else {
                Cell::parse(field)
            };
            col.push(cell);
        }
    }
    DataTable::new(names, columns)
}

pub fn write_csv(table: &DataTable, path: impl AsRef<Path>) -> Result<()> {
    write_csv_with(table, path, b',', None)
}

/// Writes `table`, optionally prefixing a column carrying `row_index`.
pub fn write_csv_with(
    table: &DataTable,
    path: impl AsRef<Path>,
    delimiter: u8,
    index_column: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    to_writer(table, &mut w, delimiter, index_column)?;
    use std::io::Write;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn to_writer<W: std::io::Write>(
    table: &DataTable,
    writer: W,
    delimiter: u8,
    index_column: Option<&str>,
) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(writer);
    let csv_err = |e: csv::Error| Error::Csv(e.to_string());

    let mut header: Vec<&str> = Vec::with_capacity(table.n_cols() + 1);
    if let Some(ix) = index_column {
        header.push(ix);
    }
    header.extend(table.names().iter().map(String::as_str));
    wtr.write_record(&header).map_err(csv_err)?;

    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for r in 0..table.n_rows() {
        row.clear();
        if index_column.is_some() {
            row.push(table.row_index[r].to_string());
        }
        row.extend(table.columns.iter().map(|c| c[r].to_string()));
        wtr.write_record(&row).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::Csv(e.to_string()))
}

/// Numeric when every non-missing entry is a number, then boolean when
/// exactly two distinct values remain, else categoric.
///
/// An all-missing column is categoric with an empty vocabulary.
pub fn infer_feature_kind(column: &[Cell]) -> FeatureKind {
    let mut all_numeric = true;
    let mut distinct: BTreeSet<String> = BTreeSet::new();
    for cell in column {
        match cell {
            Cell::Missing => continue,
            Cell::Number(_) => {}
            Cell::Text(_) => all_numeric = false,
        }
        if distinct.len() <= 2 {
            if let Some(k) = cell.key() {
                distinct.insert(k);
            }
        }
    }
    if distinct.is_empty() {
        FeatureKind::Categoric
    } else if all_numeric {
        FeatureKind::Numeric
    } else if distinct.len() == 2 {
        FeatureKind::BooleanCategoric
    } else {
        FeatureKind::Categoric
    }
}

/// `input + "_" + category`, with `_1`, `_2`, ... appended until the name
/// is absent from `existing`.
pub fn suffixed_name(input: &str, category: &str, existing: &HashSet<String>) -> String {
    let base = format!("{input}_{category}");
    if !existing.contains(&base) {
        return base;
    }
    (1..)
        .map(|k| format!("{base}_{k}"))
        .find(|candidate| !existing.contains(candidate))
        .expect("unbounded counter")
}
