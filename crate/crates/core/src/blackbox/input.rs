use serde::{Deserialize, Serialize};

use fairgen_tensor::Matrix;

use crate::data::{FeatureKind, FeatureSpec, RawTable, TableSchema, Value};
use crate::fingerprint;
use crate::transforms::argmax;

use super::ModelError;

/// One model-input column: standardized numeric or one-hot categorical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InputFeature {
    Numeric {
        name: String,
        mean: f64,
        std: f64,
        min: f64,
        max: f64,
        integral: bool,
    },
    Categorical {
        name: String,
        categories: Vec<String>,
    },
}

impl InputFeature {
    pub fn name(&self) -> &str {
        match self {
            InputFeature::Numeric { name, .. } | InputFeature::Categorical { name, .. } => name,
        }
    }

    pub fn width(&self) -> usize {
        match self {
            InputFeature::Numeric { .. } => 1,
            InputFeature::Categorical { categories, .. } => categories.len(),
        }
    }
}

/// Column range of one feature in the model's input matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InputBlock {
    pub feature: usize,
    pub start: usize,
    pub width: usize,
    pub categorical: bool,
}

/// The classifier's own input encoding, restricted to `model_input` features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputEncoder {
    features: Vec<InputFeature>,
}

impl InputEncoder {
    pub fn fit(table: &RawTable) -> Result<Self, ModelError> {
        let schema = table.schema();
        let mut features = Vec::new();
        for (j, spec) in schema.model_inputs() {
            features.push(match spec.kind {
                FeatureKind::Numeric => {
                    let col = table.numeric_column(j);
                    if col.is_empty() {
                        return Err(ModelError::EmptyTable);
                    }
                    let n = col.len() as f64;
                    let mean = col.iter().sum::<f64>() / n;
                    let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                    InputFeature::Numeric {
                        name: spec.name.clone(),
                        mean,
                        std: if var > 0.0 { var.sqrt() } else { 1.0 },
                        min: col.iter().cloned().fold(f64::INFINITY, f64::min),
                        max: col.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                        integral: col.iter().all(|x| x.fract() == 0.0),
                    }
                }
                FeatureKind::Categorical => InputFeature::Categorical {
                    name: spec.name.clone(),
                    categories: spec.categories.clone(),
                },
            });
        }
        if features.is_empty() {
            return Err(ModelError::NoInputs);
        }
        Ok(Self { features })
    }

    pub fn features(&self) -> &[InputFeature] {
        &self.features
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name().to_string()).collect()
    }

    pub fn width(&self) -> usize {
        self.features.iter().map(InputFeature::width).sum()
    }

    pub fn blocks(&self) -> Vec<InputBlock> {
        let mut start = 0;
        self.features
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let b = InputBlock {
                    feature: i,
                    start,
                    width: f.width(),
                    categorical: matches!(f, InputFeature::Categorical { .. }),
                };
                start += b.width;
                b
            })
            .collect()
    }

    /// Schema over the input features only, all flagged as model inputs.
    pub fn schema(&self, positive_label: &str) -> TableSchema {
        let specs = self
            .features
            .iter()
            .map(|f| match f {
                InputFeature::Numeric { name, .. } => FeatureSpec::numeric(name),
                InputFeature::Categorical { name, categories } => {
                    FeatureSpec::categorical(name, categories.clone())
                }
            })
            .collect();
        TableSchema::new(specs, positive_label, None).expect("input features form a valid schema")
    }

    /// Hash over names, kinds and vocabularies; flags are not part of it.
    pub fn fingerprint(&self) -> String {
        let parts: Vec<(&str, Option<&Vec<String>>)> = self
            .features
            .iter()
            .map(|f| match f {
                InputFeature::Numeric { name, .. } => (name.as_str(), None),
                InputFeature::Categorical { name, categories } => (name.as_str(), Some(categories)),
            })
            .collect();
        fingerprint::of_json(&parts)
    }

    /// Column of each input feature within `schema`, checking kinds and
    /// vocabularies.
    pub fn locate(&self, schema: &TableSchema) -> Result<Vec<usize>, ModelError> {
        self.features
            .iter()
            .map(|f| {
                let (j, spec) = schema
                    .feature(f.name())
                    .map_err(|_| ModelError::MissingColumn(f.name().to_string()))?;
                let ok = match f {
                    InputFeature::Numeric { .. } => spec.kind == FeatureKind::Numeric,
                    InputFeature::Categorical { categories, .. } => {
                        spec.kind == FeatureKind::Categorical && &spec.categories == categories
                    }
                };
                if ok {
                    Ok(j)
                } else {
                    Err(ModelError::SchemaMismatch(f.name().to_string()))
                }
            })
            .collect()
    }

    pub fn encode(&self, table: &RawTable) -> Result<Matrix<f64>, ModelError> {
        let cols = self.locate(table.schema())?;
        let mut out = Matrix::zeros(table.len(), self.width());
        for (i, row) in table.rows().iter().enumerate() {
            let dst = out.row_mut(i);
            let mut at = 0;
            for (f, &j) in self.features.iter().zip(&cols) {
                match (f, row[j]) {
                    (InputFeature::Numeric { mean, std, .. }, Value::Num(x)) => {
                        dst[at] = (x - mean) / std
                    }
                    (InputFeature::Categorical { .. }, Value::Cat(c)) => dst[at + c as usize] = 1.0,
                    _ => return Err(ModelError::SchemaMismatch(f.name().to_string())),
                }
                at += f.width();
            }
        }
        Ok(out)
    }

    /// Rows of raw values in input-feature order. Numerics are clamped to the
    /// training range and rounded when integral; categorical blocks by argmax.
    pub fn decode(&self, x: &Matrix<f64>) -> Vec<Vec<Value>> {
        (0..x.rows())
            .map(|i| {
                let row = x.row(i);
                let mut at = 0;
                self.features
                    .iter()
                    .map(|f| {
                        let v = match f {
                            InputFeature::Numeric {
                                mean,
                                std,
                                min,
                                max,
                                integral,
                                ..
                            } => {
                                let raw = row[at] * std + mean;
                                let raw = if *integral { raw.round() } else { raw };
                                Value::Num(raw.clamp(*min, *max))
                            }
                            InputFeature::Categorical { categories, .. } => {
                                Value::Cat(argmax(&row[at..at + categories.len()]) as u32)
                            }
                        };
                        at += f.width();
                        v
                    })
                    .collect()
            })
            .collect()
    }

    /// Per-column bounds of the encoded training box: standardized range for
    /// numerics, `[0, 1]` for one-hot columns.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.width());
        for f in &self.features {
            match f {
                InputFeature::Numeric {
                    mean,
                    std,
                    min,
                    max,
                    ..
                } => out.push(((min - mean) / std, (max - mean) / std)),
                InputFeature::Categorical { categories, .. } => {
                    out.extend(std::iter::repeat_n((0.0, 1.0), categories.len()))
                }
            }
        }
        out
    }
}
