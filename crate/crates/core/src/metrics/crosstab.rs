use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::FeatureKind;
use crate::lucidgan::CanonicalSet;

use super::MetricsError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossTabRow {
    pub fixed: BTreeMap<String, String>,
    pub rows: usize,
    pub counts: Vec<usize>,
    /// Share of the row's samples per axis category; sums to 100.
    pub percentages: Vec<f64>,
}

impl CrossTabRow {
    /// `feature=category` pairs joined by `, `.
    pub fn label(&self) -> String {
        self.fixed
            .iter()
            .map(|(f, c)| format!("{f}={c}"))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossTab {
    pub axis: String,
    pub categories: Vec<String>,
    pub prediction_target: f64,
    pub rows: Vec<CrossTabRow>,
}

impl CrossTab {
    pub fn percentage(&self, row: usize, category: &str) -> Option<f64> {
        let c = self.categories.iter().position(|x| x == category)?;
        self.rows.get(row).map(|r| r.percentages[c])
    }

    /// Index of the row whose fixed categories equal `fixed`.
    pub fn row_for(&self, fixed: &[(&str, &str)]) -> Option<usize> {
        self.rows.iter().position(|r| {
            r.fixed.len() == fixed.len()
                && fixed
                    .iter()
                    .all(|(f, c)| r.fixed.get(*f).map(String::as_str) == Some(c))
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["fixed".to_string(), "rows".to_string()];
        header.extend(self.categories.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.label(), r.rows.to_string()];
            rec.extend(r.percentages.iter().map(|p| format!("{p:.4}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Percentage distribution of `axis` within each set, one row per set.
pub fn intersectional_crosstab(
    sets: &[&CanonicalSet],
    axis: &str,
) -> Result<CrossTab, MetricsError> {
    let first = sets
        .first()
        .ok_or_else(|| MetricsError::CrossTab("no canonical sets".into()))?;
    let schema = first.schema();
    let (j, spec) = schema
        .feature(axis)
        .map_err(|_| MetricsError::UnknownFeature(axis.to_string()))?;
    if spec.kind != FeatureKind::Categorical {
        return Err(MetricsError::NotCategorical(axis.to_string()));
    }
    let mut rows: Vec<CrossTabRow> = Vec::with_capacity(sets.len());
    for set in sets {
        if set.schema().fingerprint() != schema.fingerprint() {
            return Err(MetricsError::SchemaMismatch(
                "canonical sets use different schemas".into(),
            ));
        }
        if set.prediction_target != first.prediction_target {
            return Err(MetricsError::CrossTab(
                "canonical sets have different prediction targets".into(),
            ));
        }
        if rows.iter().any(|r| r.fixed == set.fixed) {
            return Err(MetricsError::CrossTab(format!(
                "fixed categories repeated: {:?}",
                set.fixed
            )));
        }
        if set.is_empty() {
            return Err(MetricsError::Empty);
        }
        let mut counts = vec![0usize; spec.categories.len()];
        for c in set.rows.categorical_column(j) {
            counts[c] += 1;
        }
        let n = set.len();
        rows.push(CrossTabRow {
            fixed: set.fixed.clone(),
            rows: n,
            percentages: counts
                .iter()
                .map(|&c| 100.0 * c as f64 / n as f64)
                .collect(),
            counts,
        });
    }
    Ok(CrossTab {
        axis: axis.to_string(),
        categories: spec.categories.clone(),
        prediction_target: first.prediction_target,
        rows,
    })
}
