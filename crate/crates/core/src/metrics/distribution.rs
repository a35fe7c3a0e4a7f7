use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{FeatureKind, RawTable, TableSchema};

use super::MetricsError;

/// Upper bound on histogram bins per numeric feature.
pub const MAX_BINS: usize = 200;

/// Histogram edges per numeric feature, shared by every summary compared.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub edges: BTreeMap<String, Vec<f64>>,
}

/// Freedman-Diaconis edges on the union of `tables`.
///
/// Columns holding only integers get unit-aligned bins (edges at half
/// integers) of width `max(1, round(h))` so every value sits inside a bin.
pub fn shared_bins(tables: &[&RawTable]) -> Result<BinSpec, MetricsError> {
    let schema = common_schema(tables)?;
    let mut edges = BTreeMap::new();
    for (j, f) in schema.features().iter().enumerate() {
        if f.kind != FeatureKind::Numeric {
            continue;
        }
        let mut xs: Vec<f64> = tables.iter().flat_map(|t| t.numeric_column(j)).collect();
        if xs.is_empty() {
            return Err(MetricsError::Empty);
        }
        xs.sort_by(f64::total_cmp);
        edges.insert(f.name.clone(), fd_edges(&xs));
    }
    Ok(BinSpec { edges })
}

fn common_schema<'a>(tables: &[&'a RawTable]) -> Result<&'a TableSchema, MetricsError> {
    let first = tables.first().ok_or(MetricsError::Empty)?.schema();
    for t in &tables[1..] {
        if t.schema().fingerprint() != first.fingerprint() {
            return Err(MetricsError::SchemaMismatch(
                "tables use different schemas".into(),
            ));
        }
    }
    Ok(first)
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn fd_edges(sorted: &[f64]) -> Vec<f64> {
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let integral = sorted.iter().all(|x| x.fract() == 0.0);
    let n = sorted.len() as f64;
    let iqr = quantile(sorted, 0.75) - quantile(sorted, 0.25);
    let mut h = 2.0 * iqr / n.cbrt();
    if integral {
        let w = h.round().max(1.0);
        let span = hi - lo + 1.0;
        let bins = ((span / w).ceil() as usize).clamp(1, MAX_BINS);
        let w = if (span / w).ceil() as usize > MAX_BINS {
            span / MAX_BINS as f64
        } else {
            w
        };
        return (0..=bins).map(|i| lo - 0.5 + w * i as f64).collect();
    }
    if hi == lo {
        return vec![lo - 0.5, lo + 0.5];
    }
    if !(h > 0.0) {
        // Sturges when the quartiles coincide.
        h = (hi - lo) / (n.log2() + 1.0).ceil();
    }
    let bins = (((hi - lo) / h).ceil() as usize).clamp(1, MAX_BINS);
    let w = (hi - lo) / bins as f64;
    let mut e: Vec<f64> = (0..=bins).map(|i| lo + w * i as f64).collect();
    e[bins] = hi;
    e
}

/// Index of the bin holding `x`; values outside the edges fall in the end bins.
fn bin_of(edges: &[f64], x: f64) -> usize {
    let bins = edges.len() - 1;
    edges[1..bins].partition_point(|&e| e <= x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureSummary {
    Categorical {
        categories: Vec<String>,
        counts: Vec<usize>,
        frequencies: Vec<f64>,
    },
    Numeric {
        edges: Vec<f64>,
        counts: Vec<usize>,
        masses: Vec<f64>,
    },
}

impl FeatureSummary {
    /// Normalized frequencies or histogram masses.
    pub fn masses(&self) -> &[f64] {
        match self {
            Self::Categorical { frequencies, .. } => frequencies,
            Self::Numeric { masses, .. } => masses,
        }
    }

    /// Category names, or `[lo, hi)` per bin.
    pub fn labels(&self) -> Vec<String> {
        match self {
            Self::Categorical { categories, .. } => categories.clone(),
            Self::Numeric { edges, .. } => edges
                .windows(2)
                .map(|w| format!("[{}, {})", w[0], w[1]))
                .collect(),
        }
    }

    /// Positions used for transport: bin centres, or 0, 1, 2, ... in schema
    /// order for categories.
    pub fn positions(&self) -> Vec<f64> {
        match self {
            Self::Categorical { categories, .. } => {
                (0..categories.len()).map(|i| i as f64).collect()
            }
            Self::Numeric { edges, .. } => edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect(),
        }
    }

    pub fn frequency(&self, category: &str) -> Option<f64> {
        match self {
            Self::Categorical {
                categories,
                frequencies,
                ..
            } => categories
                .iter()
                .position(|c| c == category)
                .map(|i| frequencies[i]),
            Self::Numeric { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub rows: usize,
    /// Features in schema order.
    pub features: Vec<(String, FeatureSummary)>,
}

impl DistributionSummary {
    pub fn feature(&self, name: &str) -> Option<&FeatureSummary> {
        self.features
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
    }

    /// Frequency of `category` in categorical feature `feature`.
    pub fn frequency(&self, feature: &str, category: &str) -> Option<f64> {
        self.feature(feature)?.frequency(category)
    }
}

pub fn summarize(table: &RawTable, bins: &BinSpec) -> Result<DistributionSummary, MetricsError> {
    if table.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = table.len();
    let norm = |counts: &[usize]| {
        counts
            .iter()
            .map(|&c| c as f64 / n as f64)
            .collect::<Vec<_>>()
    };
    let mut features = Vec::new();
    for (j, f) in table.schema().features().iter().enumerate() {
        let summary = match f.kind {
            FeatureKind::Categorical => {
                let mut counts = vec![0usize; f.categories.len()];
                for c in table.categorical_column(j) {
                    counts[c] += 1;
                }
                FeatureSummary::Categorical {
                    categories: f.categories.clone(),
                    frequencies: norm(&counts),
                    counts,
                }
            }
            FeatureKind::Numeric => {
                let edges = bins
                    .edges
                    .get(&f.name)
                    .filter(|e| e.len() >= 2)
                    .ok_or_else(|| MetricsError::BinMismatch(f.name.clone()))?;
                let mut counts = vec![0usize; edges.len() - 1];
                for x in table.numeric_column(j) {
                    counts[bin_of(edges, x)] += 1;
                }
                FeatureSummary::Numeric {
                    edges: edges.clone(),
                    masses: norm(&counts),
                    counts,
                }
            }
        };
        features.push((f.name.clone(), summary));
    }
    Ok(DistributionSummary { rows: n, features })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    Wasserstein1,
    JensenShannon,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureDistance {
    pub feature: String,
    pub value: f64,
    /// Set when the value depends on an arbitrary category order.
    pub caveat: Option<String>,
}

pub const CATEGORY_ORDER_CAVEAT: &str = "categories transported in schema vocabulary order";

/// Jensen-Shannon divergence in bits.
pub fn jensen_shannon(p: &[f64], q: &[f64]) -> f64 {
    let kl = |a: f64, m: f64| if a > 0.0 { a * (a / m).log2() } else { 0.0 };
    let js: f64 = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| {
            let m = 0.5 * (a + b);
            0.5 * kl(a, m) + 0.5 * kl(b, m)
        })
        .sum();
    js.clamp(0.0, 1.0)
}

/// 1-D Wasserstein distance between two mass vectors on shared sorted positions.
pub fn wasserstein1(p: &[f64], q: &[f64], positions: &[f64]) -> f64 {
    let mut cdf = 0.0;
    let mut total = 0.0;
    for i in 0..positions.len().saturating_sub(1) {
        cdf += p[i] - q[i];
        total += cdf.abs() * (positions[i + 1] - positions[i]);
    }
    total
}

fn aligned<'a>(
    a: &'a DistributionSummary,
    b: &'a DistributionSummary,
) -> Result<Vec<(&'a str, &'a FeatureSummary, &'a FeatureSummary)>, MetricsError> {
    if a.features.len() != b.features.len() {
        return Err(MetricsError::SchemaMismatch(
            "different feature counts".into(),
        ));
    }
    a.features
        .iter()
        .zip(&b.features)
        .map(|((na, fa), (nb, fb))| {
            if na != nb {
                return Err(MetricsError::SchemaMismatch(format!(
                    "`{na}` against `{nb}`"
                )));
            }
            let same = match (fa, fb) {
                (
                    FeatureSummary::Categorical { categories: x, .. },
                    FeatureSummary::Categorical { categories: y, .. },
                ) => x == y,
                (
                    FeatureSummary::Numeric { edges: x, .. },
                    FeatureSummary::Numeric { edges: y, .. },
                ) => x == y,
                _ => false,
            };
            if !same {
                return Err(MetricsError::BinMismatch(na.clone()));
            }
            Ok((na.as_str(), fa, fb))
        })
        .collect()
}

pub fn distribution_distance(
    a: &DistributionSummary,
    b: &DistributionSummary,
    metric: DistanceMetric,
) -> Result<Vec<FeatureDistance>, MetricsError> {
    Ok(aligned(a, b)?
        .into_iter()
        .map(|(name, fa, fb)| {
            let categorical = matches!(fa, FeatureSummary::Categorical { .. });
            let (value, caveat) = match metric {
                DistanceMetric::JensenShannon => (jensen_shannon(fa.masses(), fb.masses()), None),
                DistanceMetric::Wasserstein1 => (
                    wasserstein1(fa.masses(), fb.masses(), &fa.positions()),
                    categorical.then(|| CATEGORY_ORDER_CAVEAT.to_string()),
                ),
            };
            FeatureDistance {
                feature: name.to_string(),
                value,
                caveat,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureDelta {
    pub feature: String,
    pub labels: Vec<String>,
    /// Direct minus proxy, per category or bin.
    pub delta: Vec<f64>,
}

pub fn canonical_delta(
    direct: &DistributionSummary,
    proxy: &DistributionSummary,
) -> Result<Vec<FeatureDelta>, MetricsError> {
    Ok(aligned(direct, proxy)?
        .into_iter()
        .map(|(name, fa, fb)| FeatureDelta {
            feature: name.to_string(),
            labels: fa.labels(),
            delta: fa
                .masses()
                .iter()
                .zip(fb.masses())
                .map(|(x, y)| x - y)
                .collect(),
        })
        .collect())
}

/// Summaries of a positive and a negative canonical set on shared bins.
/// Neither side can be built without the other.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedSummary {
    positive: DistributionSummary,
    negative: DistributionSummary,
    bins: BinSpec,
    wasserstein1: Vec<FeatureDistance>,
    jensen_shannon: Vec<FeatureDistance>,
}

impl PairedSummary {
    pub fn new(positive: &RawTable, negative: &RawTable) -> Result<Self, MetricsError> {
        let bins = shared_bins(&[positive, negative])?;
        Self::with_bins(positive, negative, bins)
    }

    /// Pair on caller-provided bins, e.g. bins shared with another audit.
    pub fn with_bins(
        positive: &RawTable,
        negative: &RawTable,
        bins: BinSpec,
    ) -> Result<Self, MetricsError> {
        let positive = summarize(positive, &bins)?;
        let negative = summarize(negative, &bins)?;
        Ok(Self {
            wasserstein1: distribution_distance(
                &positive,
                &negative,
                DistanceMetric::Wasserstein1,
            )?,
            jensen_shannon: distribution_distance(
                &positive,
                &negative,
                DistanceMetric::JensenShannon,
            )?,
            positive,
            negative,
            bins,
        })
    }

    pub fn positive(&self) -> &DistributionSummary {
        &self.positive
    }

    pub fn negative(&self) -> &DistributionSummary {
        &self.negative
    }

    pub fn bins(&self) -> &BinSpec {
        &self.bins
    }

    pub fn distances(&self, metric: DistanceMetric) -> &[FeatureDistance] {
        match metric {
            DistanceMetric::Wasserstein1 => &self.wasserstein1,
            DistanceMetric::JensenShannon => &self.jensen_shannon,
        }
    }

    /// Positive minus negative frequency of a category.
    pub fn gap(&self, feature: &str, category: &str) -> Option<f64> {
        Some(
            self.positive.frequency(feature, category)?
                - self.negative.frequency(feature, category)?,
        )
    }

    /// Rows of `feature, label, positive, negative` for plotting.
    pub fn frequency_rows(&self, feature: &str) -> Option<Vec<(String, f64, f64)>> {
        let p = self.positive.feature(feature)?;
        let n = self.negative.feature(feature)?;
        Some(
            p.labels()
                .into_iter()
                .zip(p.masses().iter().zip(n.masses()))
                .map(|(l, (&a, &b))| (l, a, b))
                .collect(),
        )
    }
}
