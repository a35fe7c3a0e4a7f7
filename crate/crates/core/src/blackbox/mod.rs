//! The model-under-audit boundary.
//!
//! An audit needs only rows and the audited model's positive-class
//! probabilities ([`ScoredTable`]). Those come from any [`ModelUnderAudit`],
//! from a scored CSV, or from an external process.

mod input;
mod mlp;
mod subprocess;

use std::io::{Read, Write};
use std::path::Path;

use fairgen_tensor::Matrix;

use crate::data::{self, DataError, LoadOptions, RawTable, TableSchema};

pub use input::{InputBlock, InputEncoder, InputFeature};
pub use mlp::{
    train_mlp, MlpArtifact, MlpClassifier, MlpTrainConfig, SearchResult, MLP_FORMAT_VERSION,
};
pub use subprocess::SubprocessModel;

/// Name of the prediction column in scored CSV files.
pub const PREDICTION_COLUMN: &str = "__prediction__";

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("model input column `{0}` absent from table")]
    MissingColumn(String),
    #[error("column `{0}` differs in kind or vocabulary from what the model was trained on")]
    SchemaMismatch(String),
    #[error("labels must take at most two values; found {0:?}")]
    NonBinaryLabels(Vec<String>),
    #[error("training requires ground-truth labels")]
    NoLabels,
    #[error("model has no input features")]
    NoInputs,
    #[error("empty table")]
    EmptyTable,
    #[error("prediction {value} at row {row} outside [0, 1]")]
    PredictionRange { row: usize, value: f64 },
    #[error("prediction column `{PREDICTION_COLUMN}` absent")]
    MissingPredictionColumn,
    #[error("{expected} predictions expected, {found} received")]
    PredictionCount { expected: usize, found: usize },
    #[error("model artifact: {0}")]
    Artifact(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("external scorer: {0}")]
    Subprocess(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// A classifier whose positive-class probability can be queried.
///
/// Implementations read only the features named by [`input_features`]
/// and must be deterministic at inference.
///
/// [`input_features`]: ModelUnderAudit::input_features
pub trait ModelUnderAudit: Send + Sync {
    fn input_features(&self) -> Vec<String>;

    /// One probability in `[0, 1]` per row.
    fn predict(&self, table: &RawTable) -> Result<Vec<f64>, ModelError>;
}

/// A model that also exposes gradients with respect to its encoded input.
pub trait DifferentiableModel: ModelUnderAudit {
    fn input_encoder(&self) -> &InputEncoder;

    /// Identifies the model in provenance records.
    fn fingerprint(&self) -> String {
        self.input_encoder().fingerprint()
    }

    fn predict_encoded(&self, x: &Matrix<f64>) -> Vec<f64>;

    /// Gradient of the per-row cross-entropy against `target` (true for the
    /// positive class) with respect to `x`, plus the per-row losses.
    fn input_gradient(&self, x: &Matrix<f64>, target: bool) -> (Matrix<f64>, Vec<f64>);
}

/// Rows paired with the audited model's predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredTable {
    table: RawTable,
    predictions: Vec<f64>,
}

impl ScoredTable {
    pub fn new(table: RawTable, predictions: Vec<f64>) -> Result<Self, ModelError> {
        if predictions.len() != table.len() {
            return Err(ModelError::PredictionCount {
                expected: table.len(),
                found: predictions.len(),
            });
        }
        check_range(&predictions)?;
        Ok(Self { table, predictions })
    }

    pub fn table(&self) -> &RawTable {
        &self.table
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    /// Same predictions over the same rows under a reflagged schema.
    pub fn with_schema(&self, schema: TableSchema) -> Result<Self, ModelError> {
        Ok(Self {
            table: self.table.with_schema(schema)?,
            predictions: self.predictions.clone(),
        })
    }

    /// Write the original columns, the label column when present, then
    /// [`PREDICTION_COLUMN`].
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), ModelError> {
        let schema = self.table.schema();
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = schema.features().iter().map(|f| f.name.clone()).collect();
        let labels = match (schema.label_column(), self.table.labels()) {
            (Some(name), Some(labels)) => {
                header.push(name.to_string());
                Some(labels)
            }
            _ => None,
        };
        header.push(PREDICTION_COLUMN.to_string());
        w.write_record(&header)?;
        for (i, p) in self.predictions.iter().enumerate() {
            let mut rec: Vec<String> = (0..schema.len())
                .map(|j| self.table.cell_text(i, j))
                .collect();
            if let Some(l) = labels {
                rec.push(l[i].clone());
            }
            rec.push(format!("{p}"));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), ModelError> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

fn check_range(predictions: &[f64]) -> Result<(), ModelError> {
    match predictions.iter().position(|p| !(0.0..=1.0).contains(p)) {
        Some(row) => Err(ModelError::PredictionRange {
            row,
            value: predictions[row],
        }),
        None => Ok(()),
    }
}

/// Score every row with `model`.
pub fn score_table(
    model: &dyn ModelUnderAudit,
    table: &RawTable,
) -> Result<ScoredTable, ModelError> {
    for name in model.input_features() {
        if table.schema().index_of(&name).is_none() {
            return Err(ModelError::MissingColumn(name));
        }
    }
    if table.is_empty() {
        return ScoredTable::new(table.clone(), Vec::new());
    }
    let predictions = model.predict(table)?;
    ScoredTable::new(table.clone(), predictions)
}

pub fn load_scored_csv(path: &Path, schema: &TableSchema) -> Result<ScoredTable, ModelError> {
    parse_scored_csv(crate::data::open_path(path)?, schema)
}

/// Parse a scored CSV. Labels are read when the schema names a label column
/// present in the file.
pub fn parse_scored_csv<R: Read>(
    reader: R,
    schema: &TableSchema,
) -> Result<ScoredTable, ModelError> {
    let (header, mut records) = data::read_records(reader, true)?;
    let pcol = header
        .iter()
        .position(|h| h == PREDICTION_COLUMN)
        .ok_or(ModelError::MissingPredictionColumn)?;
    // Predictions are validated before any row is dropped so that reported
    // indices refer to file rows.
    let mut predictions = Vec::with_capacity(records.len());
    for (row, rec) in records.iter().enumerate() {
        let text = rec.get(pcol).map(String::as_str).unwrap_or("");
        let value: f64 = text.parse().map_err(|_| DataError::InvalidNumber {
            column: PREDICTION_COLUMN.to_string(),
            value: text.to_string(),
            row,
        })?;
        if !(0.0..=1.0).contains(&value) {
            return Err(ModelError::PredictionRange { row, value });
        }
        predictions.push(value);
    }
    // Carry the prediction through ingestion so dropped rows stay aligned.
    // Ragged rows are fitted to the header first so the carried value lands
    // in the tag column.
    for (rec, p) in records.iter_mut().zip(&predictions) {
        rec.resize(header.len(), String::new());
        rec.push(format!("{p}"));
    }
    let tag = "__row_prediction__";
    let mut header = header;
    header.push(tag.to_string());
    let opts = LoadOptions {
        require_label: false,
        ..LoadOptions::default()
    };
    let (table, kept) = data::ingest_with_passthrough(&header, records, schema, &opts, tag)?;
    let predictions = kept
        .into_iter()
        .map(|s| s.parse::<f64>().expect("formatted above"))
        .collect();
    ScoredTable::new(table, predictions)
}
