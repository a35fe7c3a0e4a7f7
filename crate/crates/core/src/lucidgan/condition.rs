//! Conditional vectors and training-by-sampling.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use fairgen_tensor::Matrix;

use crate::blackbox::ScoredTable;
use crate::transforms::{CategoryBlock, Encoder};

use super::LucidGanError;

/// Prediction followed by the masked category vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionVector {
    pub prediction: f64,
    pub mask: Vec<f64>,
}

impl ConditionVector {
    pub fn width(&self) -> usize {
        1 + self.mask.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.width());
        v.push(self.prediction);
        v.extend_from_slice(&self.mask);
        v
    }
}

/// One draw of training-by-sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledCondition {
    /// Index into the sampler's categorical blocks and the chosen category;
    /// `None` when the table has no categorical feature.
    pub choice: Option<(usize, usize)>,
    /// Real row exhibiting the chosen category.
    pub row: usize,
    pub condition: ConditionVector,
}

/// How masks are filled when generating without a fixed category.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskPolicy {
    /// Category taken from a real row whose prediction is among the 10%
    /// closest to the requested target.
    #[default]
    TargetMatched,
    /// Same distribution as during training.
    TrainingSample,
    AllZero,
}

/// `ln(count + 1)`, normalized.
pub fn log_frequency_weights(counts: &[f64]) -> Vec<f64> {
    let raw: Vec<f64> = counts.iter().map(|&c| (c + 1.0).ln()).collect();
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        raw.iter().map(|w| w / total).collect()
    } else {
        raw
    }
}

fn draw_weighted<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SamplerState {
    blocks: Vec<CategoryBlock>,
    mask_width: usize,
    /// `codes[b][i]`: category of row `i` in block `b`.
    codes: Vec<Vec<u32>>,
    predictions: Vec<f64>,
}

/// Empirical categories and predictions of the scored rows a generator is
/// trained on.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "SamplerState", into = "SamplerState")]
pub struct ConditionSampler {
    state: SamplerState,
    rows_by_category: Vec<Vec<Vec<usize>>>,
    weights: Vec<Vec<f64>>,
}

impl From<ConditionSampler> for SamplerState {
    fn from(s: ConditionSampler) -> Self {
        s.state
    }
}

impl TryFrom<SamplerState> for ConditionSampler {
    type Error = LucidGanError;

    fn try_from(state: SamplerState) -> Result<Self, Self::Error> {
        let n = state.predictions.len();
        if n == 0 {
            return Err(LucidGanError::EmptyData);
        }
        let mut rows_by_category = Vec::with_capacity(state.blocks.len());
        let mut weights = Vec::with_capacity(state.blocks.len());
        for (block, codes) in state.blocks.iter().zip(&state.codes) {
            if codes.len() != n || block.mask_start + block.width > state.mask_width {
                return Err(LucidGanError::InvalidState(
                    "condition sampler layout".into(),
                ));
            }
            let mut by_cat = vec![Vec::new(); block.width];
            for (i, &c) in codes.iter().enumerate() {
                by_cat
                    .get_mut(c as usize)
                    .ok_or_else(|| {
                        LucidGanError::InvalidState("category code out of range".into())
                    })?
                    .push(i);
            }
            let counts: Vec<f64> = by_cat.iter().map(|r| r.len() as f64).collect();
            weights.push(log_frequency_weights(&counts));
            rows_by_category.push(by_cat);
        }
        Ok(Self {
            state,
            rows_by_category,
            weights,
        })
    }
}

impl ConditionSampler {
    pub fn new(scored: &ScoredTable, encoder: &Encoder) -> Result<Self, LucidGanError> {
        let table = scored.table();
        if table.is_empty() {
            return Err(LucidGanError::EmptyData);
        }
        let blocks = encoder.category_blocks();
        let codes = blocks
            .iter()
            .map(|b| {
                table
                    .categorical_column(b.feature)
                    .into_iter()
                    .map(|c| c as u32)
                    .collect()
            })
            .collect();
        SamplerState {
            blocks,
            mask_width: encoder.mask_width(),
            codes,
            predictions: scored.predictions().to_vec(),
        }
        .try_into()
    }

    pub fn blocks(&self) -> &[CategoryBlock] {
        &self.state.blocks
    }

    pub fn mask_width(&self) -> usize {
        self.state.mask_width
    }

    pub fn condition_width(&self) -> usize {
        1 + self.state.mask_width
    }

    pub fn predictions(&self) -> &[f64] {
        &self.state.predictions
    }

    /// Sampling probabilities of the categories of block `b`.
    pub fn category_weights(&self, b: usize) -> &[f64] {
        &self.weights[b]
    }

    pub fn support(&self, b: usize, category: usize) -> usize {
        self.rows_by_category[b][category].len()
    }

    /// Block index of encoder feature `feature`.
    pub fn block_of(&self, feature: usize) -> Option<usize> {
        self.state.blocks.iter().position(|b| b.feature == feature)
    }

    pub fn mask_for(&self, b: usize, category: usize) -> Vec<f64> {
        let mut mask = vec![0.0; self.state.mask_width];
        mask[self.state.blocks[b].mask_start + category] = 1.0;
        mask
    }

    /// Uniform feature, log-frequency category, then a uniform real row
    /// with that category whose prediction enters the condition.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SampledCondition {
        if self.state.blocks.is_empty() {
            let row = rng.random_range(0..self.state.predictions.len());
            return SampledCondition {
                choice: None,
                row,
                condition: ConditionVector {
                    prediction: self.state.predictions[row],
                    mask: Vec::new(),
                },
            };
        }
        let b = rng.random_range(0..self.state.blocks.len());
        let c = draw_weighted(&self.weights[b], rng);
        let row = *self.rows_by_category[b][c]
            .choose(rng)
            .expect("log(count + 1) weights never select an empty category");
        SampledCondition {
            choice: Some((b, c)),
            row,
            condition: ConditionVector {
                prediction: self.state.predictions[row],
                mask: self.mask_for(b, c),
            },
        }
    }

    /// `n` draws as a condition matrix plus the matched rows and choices.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> (Matrix<f64>, Vec<usize>, Vec<Option<(usize, usize)>>) {
        let mut cond = Matrix::zeros(n, self.condition_width());
        let mut rows = Vec::with_capacity(n);
        let mut choices = Vec::with_capacity(n);
        for i in 0..n {
            let s = self.sample(rng);
            cond.row_mut(i).copy_from_slice(&s.condition.to_vec());
            rows.push(s.row);
            choices.push(s.choice);
        }
        (cond, rows, choices)
    }

    /// Rows whose predictions are the `ceil(fraction * n)` closest to `target`.
    pub fn nearest_rows(&self, target: f64, fraction: f64) -> Vec<usize> {
        let p = &self.state.predictions;
        let mut idx: Vec<usize> = (0..p.len()).collect();
        idx.sort_by(|&a, &b| {
            (p[a] - target)
                .abs()
                .total_cmp(&(p[b] - target).abs())
                .then(a.cmp(&b))
        });
        let k = ((fraction * p.len() as f64).ceil() as usize).clamp(1, p.len());
        idx.truncate(k);
        idx
    }

    /// Mask for one unconditioned generation draw.
    pub fn policy_mask<R: Rng + ?Sized>(
        &self,
        policy: MaskPolicy,
        pool: &[usize],
        rng: &mut R,
    ) -> (Vec<f64>, Option<(usize, usize)>) {
        if self.state.blocks.is_empty() || policy == MaskPolicy::AllZero {
            return (vec![0.0; self.state.mask_width], None);
        }
        match policy {
            MaskPolicy::TrainingSample => {
                let s = self.sample(rng);
                (s.condition.mask, s.choice)
            }
            _ => {
                let row = *pool.choose(rng).expect("non-empty pool");
                let b = rng.random_range(0..self.state.blocks.len());
                let c = self.state.codes[b][row] as usize;
                (self.mask_for(b, c), Some((b, c)))
            }
        }
    }

    /// Lower, middle and upper quantiles of the training predictions.
    pub fn prediction_quantiles(&self, qs: &[f64]) -> Vec<f64> {
        let mut p = self.state.predictions.clone();
        p.sort_by(f64::total_cmp);
        qs.iter()
            .map(|q| {
                let pos = q.clamp(0.0, 1.0) * (p.len() - 1) as f64;
                let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
                p[lo] + (p[hi] - p[lo]) * (pos - lo as f64)
            })
            .collect()
    }
}
