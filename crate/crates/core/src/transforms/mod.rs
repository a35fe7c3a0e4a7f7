//! Mode-specific normalization of numerics and one-hot encoding of
//! categoricals, plus the inverse mapping for generated rows.

mod vgm;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use fairgen_tensor::Matrix;

use crate::data::{DataError, FeatureKind, RawTable, TableSchema, Value};
use crate::fingerprint;

pub(crate) use vgm::argmax;
pub use vgm::{fit_vgm, ModeSelection, VgmConfig, VgmModel};

/// Version written into serialized encoder state.
pub const ENCODER_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum TransformError {
    #[error("cannot fit a mixture to an empty column")]
    EmptyColumn,
    #[error("column contains non-finite values")]
    NonFinite,
    #[error("block `{0}` has no positive entry to decode")]
    EmptyBlock(String),
    #[error("encoded row has width {found}, encoder expects {expected}")]
    Width { expected: usize, found: usize },
    #[error("table schema does not match the encoder's schema")]
    SchemaMismatch,
    #[error("invalid encoder state: {0}")]
    InvalidState(String),
    #[error("encoder state version {found} is not supported (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Role of a contiguous column range in the encoded layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanKind {
    /// Normalized numeric value; one column.
    Scalar,
    /// Mixture component indicator of a numeric feature.
    Mode,
    /// One-hot category block.
    Category,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub feature: usize,
    pub kind: SpanKind,
    pub start: usize,
    pub width: usize,
}

impl Span {
    pub fn end(&self) -> usize {
        self.start + self.width
    }
}

/// Category block position both in the encoded row and in the condition mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryBlock {
    pub feature: usize,
    pub start: usize,
    pub mask_start: usize,
    pub width: usize,
}

/// Observed training range of a numeric feature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumericRange {
    pub min: f64,
    pub max: f64,
    /// Every training value was an integer; decoded values are rounded.
    pub integral: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub vgm: VgmConfig,
    /// Round integer-valued numerics on decode.
    pub round_integers: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vgm: VgmConfig::default(),
            round_integers: true,
        }
    }
}

/// A flat encoded row laid out according to [`Encoder::spans`].
pub type EncodedRow = Vec<f64>;

/// Fitted, immutable table encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EncoderState", into = "EncoderState")]
pub struct Encoder {
    schema: TableSchema,
    /// Mixture per feature; `None` for categoricals.
    vgm: Vec<Option<VgmModel>>,
    ranges: Vec<Option<NumericRange>>,
    round_integers: bool,
    spans: Vec<Span>,
    width: usize,
    mask_width: usize,
}

#[derive(Serialize, Deserialize)]
struct EncoderState {
    format_version: u32,
    schema: TableSchema,
    vgm: Vec<Option<VgmModel>>,
    ranges: Vec<Option<NumericRange>>,
    round_integers: bool,
}

impl From<Encoder> for EncoderState {
    fn from(e: Encoder) -> Self {
        EncoderState {
            format_version: ENCODER_FORMAT_VERSION,
            schema: e.schema,
            vgm: e.vgm,
            ranges: e.ranges,
            round_integers: e.round_integers,
        }
    }
}

impl TryFrom<EncoderState> for Encoder {
    type Error = TransformError;

    fn try_from(s: EncoderState) -> Result<Self, Self::Error> {
        if s.format_version != ENCODER_FORMAT_VERSION {
            return Err(TransformError::Version {
                expected: ENCODER_FORMAT_VERSION,
                found: s.format_version,
            });
        }
        Encoder::assemble(s.schema, s.vgm, s.ranges, s.round_integers)
    }
}

impl Encoder {
    /// Fit mixtures for every numeric feature of `table`.
    pub fn fit(
        table: &RawTable,
        config: &EncoderConfig,
        seed: u64,
    ) -> Result<Self, TransformError> {
        let schema = table.schema().clone();
        let mut vgm = Vec::with_capacity(schema.len());
        let mut ranges = Vec::with_capacity(schema.len());
        for (j, spec) in schema.features().iter().enumerate() {
            match spec.kind {
                FeatureKind::Categorical => {
                    vgm.push(None);
                    ranges.push(None);
                }
                FeatureKind::Numeric => {
                    let col = table.numeric_column(j);
                    let model = fit_vgm(&col, &config.vgm, seed.wrapping_add(j as u64))?;
                    log::debug!("feature `{}`: {} active modes", spec.name, model.n_active());
                    ranges.push(Some(NumericRange {
                        min: col.iter().cloned().fold(f64::INFINITY, f64::min),
                        max: col.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                        integral: col.iter().all(|x| x.fract() == 0.0),
                    }));
                    vgm.push(Some(model));
                }
            }
        }
        Self::assemble(schema, vgm, ranges, config.round_integers)
    }

    fn assemble(
        schema: TableSchema,
        vgm: Vec<Option<VgmModel>>,
        ranges: Vec<Option<NumericRange>>,
        round_integers: bool,
    ) -> Result<Self, TransformError> {
        let bad = |m: &str| Err(TransformError::InvalidState(m.to_string()));
        if vgm.len() != schema.len() || ranges.len() != schema.len() {
            return bad("per-feature state does not match the schema");
        }
        let mut spans = Vec::new();
        let mut width = 0;
        let mut mask_width = 0;
        for (j, spec) in schema.features().iter().enumerate() {
            match (spec.kind, &vgm[j], &ranges[j]) {
                (FeatureKind::Numeric, Some(model), Some(range)) => {
                    model.validate()?;
                    if !(range.min <= range.max) || !range.min.is_finite() || !range.max.is_finite()
                    {
                        return bad("numeric range must be finite and ordered");
                    }
                    spans.push(Span {
                        feature: j,
                        kind: SpanKind::Scalar,
                        start: width,
                        width: 1,
                    });
                    spans.push(Span {
                        feature: j,
                        kind: SpanKind::Mode,
                        start: width + 1,
                        width: model.n_active(),
                    });
                    width += 1 + model.n_active();
                }
                (FeatureKind::Categorical, None, None) => {
                    let w = spec.categories.len();
                    spans.push(Span {
                        feature: j,
                        kind: SpanKind::Category,
                        start: width,
                        width: w,
                    });
                    width += w;
                    mask_width += w;
                }
                _ => return bad("feature kind does not match its fitted state"),
            }
        }
        Ok(Self {
            schema,
            vgm,
            ranges,
            round_integers,
            spans,
            width,
            mask_width,
        })
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    /// Number of positions in a condition mask (all category columns).
    pub fn mask_width(&self) -> usize {
        self.mask_width
    }

    pub fn vgm(&self, feature: usize) -> Option<&VgmModel> {
        self.vgm[feature].as_ref()
    }

    pub fn range(&self, feature: usize) -> Option<&NumericRange> {
        self.ranges[feature].as_ref()
    }

    pub fn category_blocks(&self) -> Vec<CategoryBlock> {
        let mut mask_start = 0;
        self.spans
            .iter()
            .filter(|s| s.kind == SpanKind::Category)
            .map(|s| {
                let b = CategoryBlock {
                    feature: s.feature,
                    start: s.start,
                    mask_start,
                    width: s.width,
                };
                mask_start += s.width;
                b
            })
            .collect()
    }

    pub fn category_block(&self, feature: usize) -> Option<CategoryBlock> {
        self.category_blocks()
            .into_iter()
            .find(|b| b.feature == feature)
    }

    fn check_schema(&self, schema: &TableSchema) -> Result<(), TransformError> {
        // Flags may differ (proxy runs); names, kinds and vocabularies may not.
        let same = schema.len() == self.schema.len()
            && schema
                .features()
                .iter()
                .zip(self.schema.features())
                .all(|(a, b)| a.name == b.name && a.kind == b.kind && a.categories == b.categories);
        if same {
            Ok(())
        } else {
            Err(TransformError::SchemaMismatch)
        }
    }

    pub fn encode_row<R: Rng + ?Sized>(
        &self,
        row: &[Value],
        selection: ModeSelection,
        rng: &mut R,
    ) -> Result<EncodedRow, TransformError> {
        let mut out = vec![0.0; self.width];
        self.encode_into(row, selection, rng, &mut out)?;
        Ok(out)
    }

    fn encode_into<R: Rng + ?Sized>(
        &self,
        row: &[Value],
        selection: ModeSelection,
        rng: &mut R,
        out: &mut [f64],
    ) -> Result<(), TransformError> {
        if row.len() != self.schema.len() {
            return Err(DataError::RowWidth {
                row: 0,
                expected: self.schema.len(),
                found: row.len(),
            }
            .into());
        }
        for span in &self.spans {
            let spec = &self.schema.features()[span.feature];
            match (span.kind, row[span.feature]) {
                (SpanKind::Scalar, Value::Num(x)) => {
                    let model = self.vgm[span.feature].as_ref().expect("numeric state");
                    let (scalar, mode) = model.encode(x, selection, rng);
                    out[span.start] = scalar;
                    out[span.start + 1 + mode] = 1.0;
                }
                (SpanKind::Mode, _) => {}
                (SpanKind::Category, Value::Cat(c)) if (c as usize) < span.width => {
                    out[span.start + c as usize] = 1.0;
                }
                (_, v) => {
                    return Err(DataError::UnknownCategory {
                        feature: spec.name.clone(),
                        value: format!("{v:?}"),
                        row: None,
                    }
                    .into())
                }
            }
        }
        Ok(())
    }

    /// Decode a (possibly soft) encoded row; blocks are resolved by argmax.
    pub fn decode_row(&self, encoded: &[f64]) -> Result<Vec<Value>, TransformError> {
        if encoded.len() != self.width {
            return Err(TransformError::Width {
                expected: self.width,
                found: encoded.len(),
            });
        }
        let mut row = Vec::with_capacity(self.schema.len());
        let mut scalar = 0.0;
        for span in &self.spans {
            let block = &encoded[span.start..span.end()];
            match span.kind {
                SpanKind::Scalar => scalar = block[0].clamp(-1.0, 1.0),
                SpanKind::Mode => {
                    let mode = self.block_argmax(span, block)?;
                    let model = self.vgm[span.feature].as_ref().expect("numeric state");
                    row.push(Value::Num(
                        self.finish_numeric(span.feature, model.decode(scalar, mode)),
                    ));
                }
                SpanKind::Category => {
                    row.push(Value::Cat(self.block_argmax(span, block)? as u32));
                }
            }
        }
        Ok(row)
    }

    fn block_argmax(&self, span: &Span, block: &[f64]) -> Result<usize, TransformError> {
        if block.is_empty() || !block.iter().any(|&v| v > 0.0) {
            return Err(TransformError::EmptyBlock(
                self.schema.features()[span.feature].name.clone(),
            ));
        }
        Ok(argmax(block))
    }

    /// Rounding and range policy applied to a decoded numeric value.
    fn finish_numeric(&self, feature: usize, x: f64) -> f64 {
        let range = self.ranges[feature].as_ref().expect("numeric range");
        let x = if self.round_integers && range.integral {
            x.round()
        } else {
            x
        };
        x.clamp(range.min, range.max)
    }

    /// Encode every row; `seed` drives mode sampling.
    pub fn transform_table(
        &self,
        table: &RawTable,
        selection: ModeSelection,
        seed: u64,
    ) -> Result<Matrix<f64>, TransformError> {
        self.check_schema(table.schema())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Matrix::zeros(table.len(), self.width);
        for (i, row) in table.rows().iter().enumerate() {
            self.encode_into(row, selection, &mut rng, out.row_mut(i))?;
        }
        Ok(out)
    }

    /// Decode every row of `encoded` into a table under the encoder's schema.
    pub fn inverse_transform_table(
        &self,
        encoded: &Matrix<f64>,
    ) -> Result<RawTable, TransformError> {
        let rows = (0..encoded.rows())
            .map(|i| self.decode_row(encoded.row(i)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RawTable::new(self.schema.clone(), rows, None)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("encoder serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TransformError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn fingerprint(&self) -> String {
        fingerprint::of_json(self)
    }
}
