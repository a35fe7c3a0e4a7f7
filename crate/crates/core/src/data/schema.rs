use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::fingerprint;

use super::DataError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

/// One column of a dataset as the audit sees it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    /// Ordered vocabulary; empty for numeric features.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    #[serde(default)]
    pub protected: bool,
    /// `false` for columns withheld from the audited model (proxy audits).
    #[serde(default = "default_true")]
    pub model_input: bool,
}

fn default_true() -> bool {
    true
}

impl FeatureSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Numeric,
            categories: Vec::new(),
            protected: false,
            model_input: true,
        }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Categorical,
            categories: categories.into_iter().map(Into::into).collect(),
            protected: false,
            model_input: true,
        }
    }

    pub fn protected(mut self) -> Self {
        self.protected = true;
        self
    }

    pub fn withheld(mut self) -> Self {
        self.model_input = false;
        self
    }

    pub fn is_categorical(&self) -> bool {
        self.kind == FeatureKind::Categorical
    }

    pub fn category_index(&self, label: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == label)
    }

    fn validate(&self) -> Result<(), DataError> {
        match self.kind {
            FeatureKind::Numeric if !self.categories.is_empty() => Err(DataError::InvalidSchema(
                format!("numeric feature `{}` lists categories", self.name),
            )),
            FeatureKind::Categorical if self.categories.is_empty() => {
                Err(DataError::InvalidSchema(format!(
                    "categorical feature `{}` has no categories",
                    self.name
                )))
            }
            FeatureKind::Categorical => {
                let mut seen = HashSet::new();
                for c in &self.categories {
                    if !seen.insert(c) {
                        return Err(DataError::InvalidSchema(format!(
                            "feature `{}` repeats category `{c}`",
                            self.name
                        )));
                    }
                }
                Ok(())
            }
            FeatureKind::Numeric => Ok(()),
        }
    }
}

/// Declarative description of a tabular dataset.
///
/// Construct through [`TableSchema::new`] or deserialization; both validate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaDef", into = "SchemaDef")]
pub struct TableSchema {
    features: Vec<FeatureSpec>,
    positive_label: String,
    label_column: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct SchemaDef {
    positive_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_column: Option<String>,
    features: Vec<FeatureSpec>,
}

impl TryFrom<SchemaDef> for TableSchema {
    type Error = DataError;

    fn try_from(def: SchemaDef) -> Result<Self, Self::Error> {
        TableSchema::new(def.features, def.positive_label, def.label_column)
    }
}

impl From<TableSchema> for SchemaDef {
    fn from(s: TableSchema) -> Self {
        SchemaDef {
            positive_label: s.positive_label,
            label_column: s.label_column,
            features: s.features,
        }
    }
}

impl TableSchema {
    pub fn new(
        features: Vec<FeatureSpec>,
        positive_label: impl Into<String>,
        label_column: Option<String>,
    ) -> Result<Self, DataError> {
        if features.is_empty() {
            return Err(DataError::InvalidSchema("schema has no features".into()));
        }
        let mut names = HashSet::new();
        for f in &features {
            f.validate()?;
            if !names.insert(f.name.as_str()) {
                return Err(DataError::InvalidSchema(format!(
                    "duplicate feature name `{}`",
                    f.name
                )));
            }
        }
        if let Some(label) = &label_column {
            if names.contains(label.as_str()) {
                return Err(DataError::InvalidSchema(format!(
                    "label column `{label}` is also a feature"
                )));
            }
        }
        Ok(Self {
            features,
            positive_label: positive_label.into(),
            label_column,
        })
    }

    /// Parse the TOML schema format.
    pub fn from_toml(text: &str) -> Result<Self, DataError> {
        toml::from_str(text).map_err(|e| DataError::InvalidSchema(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn positive_label(&self) -> &str {
        &self.positive_label
    }

    pub fn label_column(&self) -> Option<&str> {
        self.label_column.as_deref()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn feature(&self, name: &str) -> Result<(usize, &FeatureSpec), DataError> {
        self.index_of(name)
            .map(|i| (i, &self.features[i]))
            .ok_or_else(|| DataError::UnknownFeature(name.to_string()))
    }

    /// Resolve a `(feature, category)` pair to indices.
    pub fn category(&self, feature: &str, category: &str) -> Result<(usize, usize), DataError> {
        let (fi, spec) = self.feature(feature)?;
        if !spec.is_categorical() {
            return Err(DataError::NotCategorical(feature.to_string()));
        }
        let ci = spec
            .category_index(category)
            .ok_or_else(|| DataError::UnknownCategory {
                feature: feature.to_string(),
                value: category.to_string(),
                row: None,
            })?;
        Ok((fi, ci))
    }

    pub fn protected(&self) -> impl Iterator<Item = (usize, &FeatureSpec)> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.protected)
    }

    pub fn model_inputs(&self) -> impl Iterator<Item = (usize, &FeatureSpec)> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.model_input)
    }

    /// Protected features the audited model never sees.
    pub fn withheld(&self) -> impl Iterator<Item = (usize, &FeatureSpec)> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.protected && !f.model_input)
    }

    /// Copy with the given features' `model_input` flag cleared.
    pub fn withholding(&self, names: &[&str]) -> Result<Self, DataError> {
        let mut out = self.clone();
        for name in names {
            let (i, _) = self.feature(name)?;
            out.features[i].model_input = false;
        }
        if out.model_inputs().next().is_none() {
            return Err(DataError::InvalidSchema(
                "withholding leaves the model without inputs".into(),
            ));
        }
        Ok(out)
    }

    /// Content hash identifying this exact schema.
    pub fn fingerprint(&self) -> String {
        fingerprint::of_json(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TableSchema {
        TableSchema::new(
            vec![
                FeatureSpec::numeric("age"),
                FeatureSpec::categorical("sex", ["Female", "Male"]).protected(),
            ],
            ">50K",
            Some("income".into()),
        )
        .unwrap()
    }

    #[test]
    fn rejects_duplicate_names_and_categories() {
        let dup = TableSchema::new(
            vec![FeatureSpec::numeric("a"), FeatureSpec::numeric("a")],
            "y",
            None,
        );
        assert!(matches!(dup, Err(DataError::InvalidSchema(_))));
        let dup_cat = TableSchema::new(vec![FeatureSpec::categorical("c", ["x", "x"])], "y", None);
        assert!(dup_cat.is_err());
        let empty_cat = TableSchema::new(
            vec![FeatureSpec::categorical("c", Vec::<String>::new())],
            "y",
            None,
        );
        assert!(empty_cat.is_err());
        assert!(TableSchema::new(vec![], "y", None).is_err());
    }

    #[test]
    fn protected_and_withheld_can_coexist() {
        let s = sample().withholding(&["sex"]).unwrap();
        let withheld: Vec<_> = s.withheld().map(|(_, f)| f.name.as_str()).collect();
        assert_eq!(withheld, ["sex"]);
        assert!(sample().withholding(&["sex", "age"]).is_err());
    }

    #[test]
    fn toml_round_trip_preserves_schema_and_fingerprint() {
        let s = sample();
        let text = s.to_toml();
        let back = TableSchema::from_toml(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.fingerprint(), s.fingerprint());
    }

    #[test]
    fn toml_defaults_model_input_to_true() {
        let text = r#"
            positive_label = "yes"
            [[features]]
            name = "g"
            kind = "categorical"
            categories = ["a", "b"]
        "#;
        let s = TableSchema::from_toml(text).unwrap();
        assert!(s.features()[0].model_input);
        assert!(!s.features()[0].protected);
    }
}
