use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};

use super::{DataError, FeatureKind, RawTable, TableSchema, Value};

/// What to do with a categorical cell outside the vocabulary.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnknownPolicy {
    #[default]
    Reject,
    Drop,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadOptions {
    /// Cell texts treated as missing (compared after trimming).
    pub missing_tokens: Vec<String>,
    pub unknown: UnknownPolicy,
    /// Fail when the schema names a label column the file lacks.
    pub require_label: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            missing_tokens: ["", "?", "NA", "N/A", "nan", "NaN"]
                .map(String::from)
                .to_vec(),
            unknown: UnknownPolicy::Reject,
            require_label: true,
        }
    }
}

/// Row accounting for one ingestion.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub dropped_missing: usize,
    /// Rows dropped for an out-of-vocabulary category, keyed by feature.
    pub dropped_unknown: BTreeMap<String, usize>,
}

impl LoadReport {
    pub fn dropped(&self) -> usize {
        self.dropped_missing + self.dropped_unknown.values().sum::<usize>()
    }
}

pub fn load_csv(path: &Path, schema: &TableSchema) -> Result<(RawTable, LoadReport), DataError> {
    load_csv_with(path, schema, &LoadOptions::default())
}

/// Reads a headed CSV, transparently gunzipping `*.gz` paths.
pub fn load_csv_with(
    path: &Path,
    schema: &TableSchema,
    opts: &LoadOptions,
) -> Result<(RawTable, LoadReport), DataError> {
    let (header, records) = read_records(open_path(path)?, true)?;
    ingest(&header, records, schema, opts)
}

/// [`load_csv_with`] over an in-memory or streamed CSV.
pub fn parse_csv<R: Read>(
    reader: R,
    schema: &TableSchema,
    opts: &LoadOptions,
) -> Result<(RawTable, LoadReport), DataError> {
    let (header, records) = read_records(reader, true)?;
    ingest(&header, records, schema, opts)
}

/// Open a file, gunzipping `*.gz` paths.
pub fn open_path(path: &Path) -> Result<Box<dyn Read>, DataError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(GzDecoder::new(reader)))
    } else {
        Ok(Box::new(reader))
    }
}

/// Header plus all records as trimmed strings. Without a header the first
/// element is empty.
pub fn read_records<R: Read>(
    reader: R,
    has_header: bool,
) -> Result<(Vec<String>, Vec<Vec<String>>), DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = if has_header {
        rdr.headers()?.iter().map(str::to_string).collect()
    } else {
        Vec::new()
    };
    let mut records = Vec::new();
    for rec in rdr.records() {
        records.push(rec?.iter().map(str::to_string).collect());
    }
    Ok((header, records))
}

/// Column index for each schema feature, then label; first occurrence wins on
/// duplicated header names.
fn locate(header: &[String], name: &str) -> Option<usize> {
    header.iter().position(|h| h == name)
}

pub(crate) fn ingest(
    header: &[String],
    records: Vec<Vec<String>>,
    schema: &TableSchema,
    opts: &LoadOptions,
) -> Result<(RawTable, LoadReport), DataError> {
    let (table, report, _) = ingest_inner(header, records, schema, opts, None)?;
    Ok((table, report))
}

/// Like [`ingest`], also returning column `extra` for every kept row.
pub(crate) fn ingest_with_passthrough(
    header: &[String],
    records: Vec<Vec<String>>,
    schema: &TableSchema,
    opts: &LoadOptions,
    extra: &str,
) -> Result<(RawTable, Vec<String>), DataError> {
    let col = locate(header, extra).ok_or_else(|| DataError::MissingColumn(extra.to_string()))?;
    let (table, _, kept) = ingest_inner(header, records, schema, opts, Some(col))?;
    Ok((table, kept))
}

fn ingest_inner(
    header: &[String],
    records: Vec<Vec<String>>,
    schema: &TableSchema,
    opts: &LoadOptions,
    extra: Option<usize>,
) -> Result<(RawTable, LoadReport, Vec<String>), DataError> {
    let cols: Vec<usize> = schema
        .features()
        .iter()
        .map(|f| locate(header, &f.name).ok_or_else(|| DataError::MissingColumn(f.name.clone())))
        .collect::<Result<_, _>>()?;
    let label_col = match schema.label_column() {
        Some(name) => match locate(header, name) {
            Some(i) => Some(i),
            None if opts.require_label => return Err(DataError::MissingColumn(name.to_string())),
            None => None,
        },
        None => None,
    };
    let is_missing = |s: &str| opts.missing_tokens.iter().any(|t| t == s);

    let mut report = LoadReport {
        rows_read: records.len(),
        ..LoadReport::default()
    };
    let mut rows = Vec::with_capacity(records.len());
    let mut labels = label_col.map(|_| Vec::with_capacity(records.len()));
    let mut passed = Vec::new();

    'rows: for (r, rec) in records.into_iter().enumerate() {
        let cell = |c: usize| rec.get(c).map(String::as_str).filter(|s| !is_missing(s));
        let label = match label_col {
            Some(c) => match cell(c) {
                Some(l) => Some(l.to_string()),
                None => {
                    report.dropped_missing += 1;
                    continue;
                }
            },
            None => None,
        };
        let mut row = Vec::with_capacity(cols.len());
        for (spec, &c) in schema.features().iter().zip(&cols) {
            let Some(text) = cell(c) else {
                report.dropped_missing += 1;
                continue 'rows;
            };
            match spec.kind {
                FeatureKind::Numeric => match text.parse::<f64>() {
                    Ok(x) if x.is_finite() => row.push(Value::Num(x)),
                    _ => {
                        return Err(DataError::InvalidNumber {
                            column: spec.name.clone(),
                            value: text.to_string(),
                            row: r,
                        })
                    }
                },
                FeatureKind::Categorical => match spec.category_index(text) {
                    Some(k) => row.push(Value::Cat(k as u32)),
                    None if opts.unknown == UnknownPolicy::Drop => {
                        *report.dropped_unknown.entry(spec.name.clone()).or_default() += 1;
                        continue 'rows;
                    }
                    None => {
                        return Err(DataError::UnknownCategory {
                            feature: spec.name.clone(),
                            value: text.to_string(),
                            row: Some(r),
                        })
                    }
                },
            }
        }
        rows.push(row);
        if let Some(c) = extra {
            passed.push(rec.get(c).cloned().unwrap_or_default());
        }
        if let (Some(ls), Some(l)) = (labels.as_mut(), label) {
            ls.push(l);
        }
    }

    if rows.is_empty() {
        return Err(DataError::Empty {
            dropped: report.dropped(),
        });
    }
    report.rows_kept = rows.len();
    if report.dropped() > 0 {
        log::warn!(
            "dropped {} of {} rows ({} missing, unknown categories {:?})",
            report.dropped(),
            report.rows_read,
            report.dropped_missing,
            report.dropped_unknown
        );
    }
    let table = RawTable::new(schema.clone(), rows, labels)?;
    Ok((table, report, passed))
}
