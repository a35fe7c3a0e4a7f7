//! Tabular datasets with protected-feature annotations.

mod datasets;
mod ingest;
mod schema;

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use datasets::{
    adult_schema, compas_schema, data_dir, load_adult, load_adult_from, load_compas,
    load_compas_from, DatasetSplit, COMPAS_TEST_FRACTION, DATA_DIR_ENV,
};
pub(crate) use ingest::ingest_with_passthrough;
pub use ingest::{
    load_csv, load_csv_with, open_path, parse_csv, read_records, LoadOptions, LoadReport,
    UnknownPolicy,
};
pub use schema::{FeatureKind, FeatureSpec, TableSchema};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("feature `{0}` is not categorical")]
    NotCategorical(String),
    #[error("column `{0}` absent from input")]
    MissingColumn(String),
    #[error("unknown category `{value}` for feature `{feature}`{}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    UnknownCategory {
        feature: String,
        value: String,
        row: Option<usize>,
    },
    #[error("invalid number `{value}` in column `{column}` at row {row}")]
    InvalidNumber {
        column: String,
        value: String,
        row: usize,
    },
    #[error("no rows left after dropping {dropped} incomplete or invalid rows")]
    Empty { dropped: usize },
    #[error("row {row} has {found} cells, schema expects {expected}")]
    RowWidth {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("label count {labels} does not match row count {rows}")]
    LabelCount { rows: usize, labels: usize },
    #[error("split fraction {0} outside (0, 1)")]
    Fraction(f64),
    #[error("dataset file {path} missing; set {env} to a directory containing it")]
    FileMissing { path: PathBuf, env: &'static str },
    #[error("checksum mismatch for {path}: expected {expected}, found {found}")]
    Checksum {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// A single cell. Categorical cells hold an index into the feature vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Num(f64),
    Cat(u32),
}

impl Value {
    pub fn as_num(self) -> Option<f64> {
        match self {
            Value::Num(x) => Some(x),
            Value::Cat(_) => None,
        }
    }

    pub fn as_cat(self) -> Option<usize> {
        match self {
            Value::Cat(c) => Some(c as usize),
            Value::Num(_) => None,
        }
    }
}

/// Validated rows plus optional ground-truth labels.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    schema: TableSchema,
    rows: Vec<Vec<Value>>,
    labels: Option<Vec<String>>,
}

impl RawTable {
    /// Checks every cell against the schema.
    pub fn new(
        schema: TableSchema,
        rows: Vec<Vec<Value>>,
        labels: Option<Vec<String>>,
    ) -> Result<Self, DataError> {
        for (r, row) in rows.iter().enumerate() {
            check_row(&schema, row, r)?;
        }
        if let Some(l) = &labels {
            if l.len() != rows.len() {
                return Err(DataError::LabelCount {
                    rows: rows.len(),
                    labels: l.len(),
                });
            }
        }
        Ok(Self {
            schema,
            rows,
            labels,
        })
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[Value] {
        &self.rows[i]
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `true` where the ground-truth label equals the schema's positive label.
    pub fn positive_labels(&self) -> Option<Vec<bool>> {
        let pos = self.schema.positive_label();
        self.labels
            .as_ref()
            .map(|l| l.iter().map(|x| x == pos).collect())
    }

    /// Column `j` as reals; panics if the feature is categorical.
    pub fn numeric_column(&self, j: usize) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r[j].as_num().expect("numeric column"))
            .collect()
    }

    pub fn categorical_column(&self, j: usize) -> Vec<usize> {
        self.rows
            .iter()
            .map(|r| r[j].as_cat().expect("categorical column"))
            .collect()
    }

    /// Human-readable cell text.
    pub fn cell_text(&self, i: usize, j: usize) -> String {
        format_cell(&self.schema, j, self.rows[i][j])
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            schema: self.schema.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i].clone()).collect()),
        }
    }

    /// Same rows under a schema differing only in flags.
    pub fn with_schema(&self, schema: TableSchema) -> Result<Self, DataError> {
        Self::new(schema, self.rows.clone(), self.labels.clone())
    }

    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            ..self.clone()
        }
    }

    /// Feature columns, then the label column when the schema names one and
    /// labels are present. [`load_csv`] reads the result back unchanged.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self
            .schema
            .features()
            .iter()
            .map(|f| f.name.as_str())
            .collect();
        let labels = match (self.schema.label_column(), &self.labels) {
            (Some(name), Some(labels)) => {
                header.push(name);
                Some(labels)
            }
            _ => None,
        };
        w.write_record(&header)?;
        for i in 0..self.rows.len() {
            let mut rec: Vec<String> = (0..self.schema.len())
                .map(|j| self.cell_text(i, j))
                .collect();
            if let Some(l) = labels {
                rec.push(l[i].clone());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), DataError> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn into_parts(self) -> (TableSchema, Vec<Vec<Value>>, Option<Vec<String>>) {
        (self.schema, self.rows, self.labels)
    }
}

pub(crate) fn format_cell(schema: &TableSchema, j: usize, v: Value) -> String {
    match v {
        Value::Num(x) => format_number(x),
        Value::Cat(c) => schema.features()[j].categories[c as usize].clone(),
    }
}

/// Shortest text that parses back to the same `f64`.
pub(crate) fn format_number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

fn check_row(schema: &TableSchema, row: &[Value], r: usize) -> Result<(), DataError> {
    if row.len() != schema.len() {
        return Err(DataError::RowWidth {
            row: r,
            expected: schema.len(),
            found: row.len(),
        });
    }
    for (spec, v) in schema.features().iter().zip(row) {
        match (spec.kind, v) {
            (FeatureKind::Numeric, Value::Num(x)) if x.is_finite() => {}
            (FeatureKind::Categorical, Value::Cat(c)) if (*c as usize) < spec.categories.len() => {}
            _ => {
                return Err(DataError::UnknownCategory {
                    feature: spec.name.clone(),
                    value: format!("{v:?}"),
                    row: Some(r),
                })
            }
        }
    }
    Ok(())
}

/// Seeded disjoint partition. The second part receives `round(fraction * n)`
/// rows; both parts keep the input order.
pub fn split(
    table: &RawTable,
    fraction: f64,
    seed: u64,
) -> Result<(RawTable, RawTable), DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::Fraction(fraction));
    }
    let n = table.len();
    let k = ((fraction * n as f64).round() as usize).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (held, kept) = idx.split_at_mut(k);
    held.sort_unstable();
    kept.sort_unstable();
    Ok((table.select(kept), table.select(held)))
}
