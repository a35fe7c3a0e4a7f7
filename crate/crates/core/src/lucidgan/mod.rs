//! Conditional tabular GAN trained on rows and the audited model's
//! predictions, and generation of canonical sets from it.
//!
//! The generator sees noise plus a condition vector holding a prediction and
//! a one-hot mask over all category positions. Setting the prediction to 1
//! or 0 yields rows the audited model would score at that extreme; the mask
//! pins a category for intersectional audits.

mod canonical;
mod condition;
mod network;
mod train;

use crate::blackbox::{ModelError, ScoredTable};
use crate::data::{DataError, FeatureKind, TableSchema};
use crate::transforms::TransformError;

pub use canonical::{fixed_column, CanonicalSet, Provenance, TARGET_COLUMN};
pub use condition::{
    log_frequency_weights, ConditionSampler, ConditionVector, MaskPolicy, SampledCondition,
};
pub use network::{
    activate, activate_plain, condition_loss, gradient_penalty, CriticNet, CriticSpec,
    GeneratorNet, GeneratorSpec, GeneratorWeights, RunningStats,
};
pub use train::{
    category_rate, train, EpochStats, GenerationRequest, LucidGan, TrainConfig, TrainingLog,
    GAN_FORMAT_VERSION,
};

#[derive(Debug, thiserror::Error)]
pub enum LucidGanError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no rows to train on")]
    EmptyData,
    #[error("invalid generator state: {0}")]
    InvalidState(String),
    #[error("{rows} rows cannot be packed in groups of {pac}")]
    PackSize { rows: usize, pac: usize },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("unknown category: {0}")]
    UnknownCategory(String),
    #[error("withheld feature `{0}` absent from the scored data")]
    MissingFeature(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Scored rows re-flagged for a proxy audit.
#[derive(Clone, Debug)]
pub struct ProxySetup {
    pub scored: ScoredTable,
    /// Features the generator models but the audited model never saw.
    pub withheld: Vec<String>,
}

/// Re-flag `scored` with `schema`, whose withheld features must be present
/// in the scored rows with the same kind and vocabulary. The generator is
/// then trained over every feature, withheld ones included.
pub fn proxy_audit_prepare(
    scored: &ScoredTable,
    schema: &TableSchema,
) -> Result<ProxySetup, LucidGanError> {
    let have = scored.table().schema();
    let mut withheld = Vec::new();
    for spec in schema.features().iter().filter(|f| !f.model_input) {
        let (_, ours) = have
            .feature(&spec.name)
            .map_err(|_| LucidGanError::MissingFeature(spec.name.clone()))?;
        let same = ours.kind == spec.kind
            && (spec.kind == FeatureKind::Numeric || ours.categories == spec.categories);
        if !same {
            return Err(LucidGanError::SchemaMismatch(format!(
                "withheld feature `{}` differs from the scored data",
                spec.name
            )));
        }
        withheld.push(spec.name.clone());
    }
    Ok(ProxySetup {
        scored: scored.with_schema(schema.clone())?,
        withheld,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureSpec, RawTable, Value};

    fn scored() -> ScoredTable {
        let schema = TableSchema::new(
            vec![
                FeatureSpec::numeric("z"),
                FeatureSpec::categorical("g", ["a", "b"]).protected(),
            ],
            "1",
            None,
        )
        .unwrap();
        let rows = vec![
            vec![Value::Num(0.0), Value::Cat(0)],
            vec![Value::Num(1.0), Value::Cat(1)],
        ];
        ScoredTable::new(RawTable::new(schema, rows, None).unwrap(), vec![0.2, 0.8]).unwrap()
    }

    #[test]
    fn proxy_prepare_reflags_and_checks_presence() {
        let s = scored();
        let schema = s.table().schema().withholding(&["g"]).unwrap();
        let setup = proxy_audit_prepare(&s, &schema).unwrap();
        assert_eq!(setup.withheld, ["g"]);
        assert!(
            !setup
                .scored
                .table()
                .schema()
                .feature("g")
                .unwrap()
                .1
                .model_input
        );
        assert_eq!(setup.scored.predictions(), s.predictions());

        let none = proxy_audit_prepare(&s, s.table().schema()).unwrap();
        assert!(none.withheld.is_empty());

        let missing = TableSchema::new(
            vec![
                FeatureSpec::numeric("z"),
                FeatureSpec::categorical("h", ["x"]).withheld(),
            ],
            "1",
            None,
        )
        .unwrap();
        assert!(matches!(
            proxy_audit_prepare(&s, &missing),
            Err(LucidGanError::MissingFeature(f)) if f == "h"
        ));
    }
}
