//! Output-based group metrics (positivity and true-positive rates with their
//! disparities), distribution summaries of canonical sets, distances between
//! them and intersectional cross-tabs.

mod crosstab;
mod distribution;

use serde::{Deserialize, Serialize};

use crate::blackbox::ScoredTable;
use crate::data::FeatureKind;

pub use crosstab::{intersectional_crosstab, CrossTab, CrossTabRow};
pub use distribution::{
    canonical_delta, distribution_distance, jensen_shannon, shared_bins, summarize, wasserstein1,
    BinSpec, DistanceMetric, DistributionSummary, FeatureDelta, FeatureDistance, FeatureSummary,
    PairedSummary, MAX_BINS,
};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("feature `{0}` is not categorical")]
    NotCategorical(String),
    #[error("ground-truth labels are required")]
    MissingLabels,
    #[error("no category of `{0}` has a defined rate")]
    Undefined(String),
    #[error("cannot summarize an empty table")]
    Empty,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("bin mismatch for `{0}`")]
    BinMismatch(String),
    #[error("invalid cross-tab input: {0}")]
    CrossTab(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    /// A prediction above this counts as a positive decision.
    pub threshold: f64,
    /// Categories with fewer rows are flagged as low support.
    pub support_floor: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            support_floor: 30,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryRates {
    pub category: String,
    pub support: usize,
    pub predicted_positive: usize,
    pub actual_positive: usize,
    pub true_positive: usize,
    /// Undefined for a category with no rows.
    pub pr: Option<f64>,
    /// Undefined for a category with no ground-truth positives.
    pub tpr: Option<f64>,
    pub low_support: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub feature: String,
    pub config: MetricsConfig,
    pub categories: Vec<CategoryRates>,
}

impl GroupMetrics {
    pub fn get(&self, category: &str) -> Option<&CategoryRates> {
        self.categories.iter().find(|c| c.category == category)
    }
}

pub fn group_metrics(
    scored: &ScoredTable,
    feature: &str,
    config: &MetricsConfig,
) -> Result<GroupMetrics, MetricsError> {
    let table = scored.table();
    let (j, spec) = table
        .schema()
        .feature(feature)
        .map_err(|_| MetricsError::UnknownFeature(feature.to_string()))?;
    if spec.kind != FeatureKind::Categorical {
        return Err(MetricsError::NotCategorical(feature.to_string()));
    }
    let truth = table.positive_labels().ok_or(MetricsError::MissingLabels)?;
    let k = spec.categories.len();
    let mut support = vec![0usize; k];
    let mut pred_pos = vec![0usize; k];
    let mut actual = vec![0usize; k];
    let mut tp = vec![0usize; k];
    for ((c, &p), &y) in table
        .categorical_column(j)
        .into_iter()
        .zip(scored.predictions())
        .zip(&truth)
    {
        let decided = p > config.threshold;
        support[c] += 1;
        pred_pos[c] += decided as usize;
        actual[c] += y as usize;
        tp[c] += (decided && y) as usize;
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    let categories = (0..k)
        .map(|c| CategoryRates {
            category: spec.categories[c].clone(),
            support: support[c],
            predicted_positive: pred_pos[c],
            actual_positive: actual[c],
            true_positive: tp[c],
            pr: ratio(pred_pos[c], support[c]),
            tpr: ratio(tp[c], actual[c]),
            low_support: support[c] < config.support_floor,
        })
        .collect();
    Ok(GroupMetrics {
        feature: feature.to_string(),
        config: *config,
        categories,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DisparityKind {
    /// Demographic parity: compares positivity rates.
    Dp,
    /// Equality of opportunity: compares true-positive rates.
    Eop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairGap {
    pub a: String,
    pub b: String,
    /// |rate(a) - rate(b)|, as a fraction.
    pub gap: f64,
    /// Either side is below the support floor.
    pub low_support: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disparity {
    pub feature: String,
    pub kind: DisparityKind,
    /// Every pair of categories with defined rates, in schema order.
    pub pairs: Vec<PairGap>,
    /// Largest gap; 0 with fewer than two defined rates.
    pub max_gap: f64,
    /// Index into `pairs` of the largest gap.
    pub max_pair: Option<usize>,
}

pub fn disparity(metrics: &GroupMetrics, kind: DisparityKind) -> Result<Disparity, MetricsError> {
    let defined: Vec<(&CategoryRates, f64)> = metrics
        .categories
        .iter()
        .filter_map(|c| {
            let rate = match kind {
                DisparityKind::Dp => c.pr,
                DisparityKind::Eop => c.tpr,
            };
            rate.map(|r| (c, r))
        })
        .collect();
    if defined.is_empty() {
        return Err(MetricsError::Undefined(metrics.feature.clone()));
    }
    let mut pairs = Vec::new();
    for (i, (a, ra)) in defined.iter().enumerate() {
        for (b, rb) in &defined[i + 1..] {
            pairs.push(PairGap {
                a: a.category.clone(),
                b: b.category.clone(),
                gap: (ra - rb).abs(),
                low_support: a.low_support || b.low_support,
            });
        }
    }
    let max_pair = (0..pairs.len()).max_by(|&x, &y| pairs[x].gap.total_cmp(&pairs[y].gap));
    Ok(Disparity {
        feature: metrics.feature.clone(),
        kind,
        max_gap: max_pair.map_or(0.0, |i| pairs[i].gap),
        pairs,
        max_pair,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureSpec, RawTable, TableSchema, Value};

    fn scored(cats: &[usize], preds: &[f64], labels: &[&str]) -> ScoredTable {
        let schema = TableSchema::new(
            vec![FeatureSpec::categorical("g", ["a", "b", "c"]).protected()],
            ">50K",
            None,
        )
        .unwrap();
        let rows = cats.iter().map(|&c| vec![Value::Cat(c as u32)]).collect();
        let labels = labels.iter().map(|s| s.to_string()).collect();
        ScoredTable::new(
            RawTable::new(schema, rows, Some(labels)).unwrap(),
            preds.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn hand_computed_rates() {
        let s = scored(
            &[0, 0, 0, 1, 1, 1],
            &[0.9, 0.2, 0.6, 0.1, 0.7, 0.5],
            &[">50K", ">50K", "<=50K", ">50K", "<=50K", "<=50K"],
        );
        let m = group_metrics(&s, "g", &MetricsConfig::default()).unwrap();
        let a = m.get("a").unwrap();
        assert_eq!(
            (
                a.support,
                a.predicted_positive,
                a.actual_positive,
                a.true_positive
            ),
            (3, 2, 2, 1)
        );
        assert_eq!(a.pr, Some(2.0 / 3.0));
        assert_eq!(a.tpr, Some(0.5));
        let b = m.get("b").unwrap();
        // 0.5 is not above the threshold.
        assert_eq!(b.pr, Some(1.0 / 3.0));
        assert_eq!(b.tpr, Some(0.0));
        let c = m.get("c").unwrap();
        assert_eq!((c.pr, c.tpr), (None, None));
        assert!(a.low_support);

        let dp = disparity(&m, DisparityKind::Dp).unwrap();
        assert_eq!(dp.pairs.len(), 1);
        assert!((dp.max_gap - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_category_is_vacuous_and_no_rates_is_an_error() {
        let s = scored(&[1, 1], &[0.9, 0.1], &["<=50K", "<=50K"]);
        let m = group_metrics(&s, "g", &MetricsConfig::default()).unwrap();
        let dp = disparity(&m, DisparityKind::Dp).unwrap();
        assert!(dp.pairs.is_empty());
        assert_eq!((dp.max_gap, dp.max_pair), (0.0, None));
        assert!(matches!(
            disparity(&m, DisparityKind::Eop),
            Err(MetricsError::Undefined(_))
        ));
    }

    #[test]
    fn printed_sex_gap() {
        let m = GroupMetrics {
            feature: "sex".into(),
            config: MetricsConfig::default(),
            categories: [("Male", 0.310), ("Female", 0.113)]
                .iter()
                .map(|&(c, pr)| CategoryRates {
                    category: c.into(),
                    support: 1000,
                    predicted_positive: 0,
                    actual_positive: 0,
                    true_positive: 0,
                    pr: Some(pr),
                    tpr: None,
                    low_support: false,
                })
                .collect(),
        };
        let dp = disparity(&m, DisparityKind::Dp).unwrap();
        assert!((dp.max_gap - 0.197).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let s = scored(&[0], &[0.9], &[">50K"]);
        assert!(matches!(
            group_metrics(&s, "nope", &MetricsConfig::default()),
            Err(MetricsError::UnknownFeature(_))
        ));
        let unlabeled = ScoredTable::new(s.table().without_labels(), vec![0.9]).unwrap();
        assert!(matches!(
            group_metrics(&unlabeled, "g", &MetricsConfig::default()),
            Err(MetricsError::MissingLabels)
        ));
    }
}
