use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{self, LoadOptions, RawTable, TableSchema};

use super::LucidGanError;

pub const TARGET_COLUMN: &str = "__prediction_target__";

/// Name of the CSV column recording a fixed category.
pub fn fixed_column(feature: &str) -> String {
    format!("__fixed_{feature}__")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// `"lucid-gan"` or `"lucid"`.
    pub method: String,
    pub run_id: String,
    pub seed: u64,
    /// Fingerprint of the generator or classifier that produced the rows.
    pub model_fingerprint: String,
}

/// Synthetic rows generated for one prediction target.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalSet {
    pub rows: RawTable,
    pub prediction_target: f64,
    pub fixed: BTreeMap<String, String>,
    pub provenance: Provenance,
    /// Fraction of rows whose generated blocks already matched every
    /// conditioned category before hard enforcement.
    pub condition_match_rate: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    rows: usize,
    prediction_target: f64,
    fixed: BTreeMap<String, String>,
    provenance: Provenance,
    condition_match_rate: Option<f64>,
    schema_fingerprint: String,
}

impl CanonicalSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn schema(&self) -> &TableSchema {
        self.rows.schema()
    }

    /// Decoded columns, then the target, then one column per fixed feature.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), LucidGanError> {
        let schema = self.rows.schema();
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = schema.features().iter().map(|f| f.name.clone()).collect();
        header.push(TARGET_COLUMN.to_string());
        header.extend(self.fixed.keys().map(|k| fixed_column(k)));
        w.write_record(&header)?;
        let target = format!("{}", self.prediction_target);
        for i in 0..self.rows.len() {
            let mut rec: Vec<String> = (0..schema.len())
                .map(|j| self.rows.cell_text(i, j))
                .collect();
            rec.push(target.clone());
            rec.extend(self.fixed.values().cloned());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn sidecar_json(&self) -> String {
        serde_json::to_string_pretty(&Sidecar {
            rows: self.rows.len(),
            prediction_target: self.prediction_target,
            fixed: self.fixed.clone(),
            provenance: self.provenance.clone(),
            condition_match_rate: self.condition_match_rate,
            schema_fingerprint: self.rows.schema().fingerprint(),
        })
        .expect("sidecar serializes")
    }

    /// Write `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), LucidGanError> {
        let file = std::fs::File::create(dir.join(format!("{stem}.csv")))?;
        self.write_csv(std::io::BufWriter::new(file))?;
        std::fs::write(dir.join(format!("{stem}.json")), self.sidecar_json())?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str, schema: &TableSchema) -> Result<Self, LucidGanError> {
        let meta: Sidecar =
            serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        if meta.schema_fingerprint != schema.fingerprint() {
            return Err(LucidGanError::SchemaMismatch(format!(
                "canonical set `{stem}` was written under a different schema"
            )));
        }
        let opts = LoadOptions {
            require_label: false,
            ..LoadOptions::default()
        };
        let (rows, report) = data::load_csv_with(&dir.join(format!("{stem}.csv")), schema, &opts)?;
        if report.dropped() > 0 || rows.len() != meta.rows {
            return Err(LucidGanError::SchemaMismatch(format!(
                "canonical set `{stem}` has {} readable rows, sidecar records {}",
                rows.len(),
                meta.rows
            )));
        }
        Ok(Self {
            rows: rows.without_labels(),
            prediction_target: meta.prediction_target,
            fixed: meta.fixed,
            provenance: meta.provenance,
            condition_match_rate: meta.condition_match_rate,
        })
    }
}
