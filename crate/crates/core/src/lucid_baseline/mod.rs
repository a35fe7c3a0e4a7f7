//! Gradient-based inverse design: start from uniform random inputs and
//! descend the audited model's cross-entropy against a preferred output in
//! the encoded input space, with the model held fixed.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use fairgen_tensor::Matrix;

use crate::blackbox::{DifferentiableModel, InputBlock, ModelError};
use crate::data::{DataError, RawTable, TableSchema};
use crate::fingerprint;
use crate::lucidgan::{CanonicalSet, Provenance};
use crate::metrics::{
    canonical_delta, shared_bins, summarize, DistributionSummary, FeatureDelta, MetricsError,
};

#[derive(Debug, thiserror::Error)]
pub enum LucidError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Positive,
    Negative,
}

impl Target {
    fn is_positive(self) -> bool {
        self == Target::Positive
    }

    pub fn prediction(self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InverseDesignConfig {
    pub samples: usize,
    /// Initial per-sample step; halved whenever a step would raise the loss.
    pub step_size: f64,
    pub max_iterations: usize,
    /// A sample stops once its probability of the target class reaches this.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for InverseDesignConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            step_size: 0.1,
            max_iterations: 1000,
            threshold: 0.99,
            seed: 0,
        }
    }
}

impl InverseDesignConfig {
    pub fn validate(&self) -> Result<(), LucidError> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(LucidError::Config("threshold must lie in (0, 1)".into()));
        }
        if !(self.step_size > 0.0) || self.max_iterations == 0 {
            return Err(LucidError::Config(
                "step size and iteration count must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LucidRun {
    pub canonical: CanonicalSet,
    /// Decoded starting points, row-aligned with `canonical`.
    pub initial: RawTable,
    /// Samples that reached the threshold before decoding.
    pub converged: usize,
    /// Mean loss before the first step and after each iteration.
    pub loss_trace: Vec<f64>,
    /// Target-class probability of each relaxed input at the end.
    pub final_probability: Vec<f64>,
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &mut [f64]) {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &x) in u.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

fn project(row: &mut [f64], blocks: &[InputBlock], bounds: &[(f64, f64)]) {
    for b in blocks {
        if b.categorical {
            project_simplex(&mut row[b.start..b.start + b.width]);
        } else {
            let (lo, hi) = bounds[b.start];
            row[b.start] = row[b.start].clamp(lo, hi);
        }
    }
}

fn target_probability(p_positive: f64, target: Target) -> f64 {
    if target.is_positive() {
        p_positive
    } else {
        1.0 - p_positive
    }
}

/// Uniform draws over the encoded box; one-hot blocks are drawn uniformly
/// over the simplex.
fn initial_inputs<R: Rng + ?Sized>(
    n: usize,
    blocks: &[InputBlock],
    bounds: &[(f64, f64)],
    rng: &mut R,
) -> Matrix<f64> {
    let width = bounds.len();
    let mut x = Matrix::zeros(n, width);
    for i in 0..n {
        let row = x.row_mut(i);
        for b in blocks {
            if b.categorical {
                let e: Vec<f64> = (0..b.width).map(|_| Exp1.sample(rng)).collect();
                let s: f64 = e.iter().sum();
                for (k, v) in e.into_iter().enumerate() {
                    row[b.start + k] = v / s;
                }
            } else {
                let (lo, hi) = bounds[b.start];
                row[b.start] = if hi > lo {
                    rng.random_range(lo..=hi)
                } else {
                    lo
                };
            }
        }
    }
    x
}

/// `schema` names the output columns; every one of its features must be a
/// model input, in the order the model's encoder lists them.
pub fn lucid_generate(
    model: &dyn DifferentiableModel,
    schema: &TableSchema,
    target: Target,
    config: &InverseDesignConfig,
) -> Result<LucidRun, LucidError> {
    config.validate()?;
    let encoder = model.input_encoder();
    let names: Vec<&str> = schema.features().iter().map(|f| f.name.as_str()).collect();
    if names != encoder.names() {
        return Err(LucidError::SchemaMismatch(
            "output schema must list exactly the model's input features".into(),
        ));
    }
    encoder.locate(schema)?;
    let blocks = encoder.blocks();
    let bounds = encoder.bounds();
    let n = config.samples;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let x0 = initial_inputs(n, &blocks, &bounds, &mut rng);
    let mut x = x0.clone();
    let want = target.is_positive();
    let stop_loss = -config.threshold.ln();

    let (mut grad, mut loss) = if n > 0 {
        model.input_gradient(&x, want)
    } else {
        (Matrix::zeros(0, bounds.len()), Vec::new())
    };
    let mut step = vec![config.step_size; n];
    let mean = |l: &[f64]| {
        if l.is_empty() {
            0.0
        } else {
            l.iter().sum::<f64>() / l.len() as f64
        }
    };
    let mut loss_trace = vec![mean(&loss)];
    for _ in 0..config.max_iterations {
        let active: Vec<usize> = (0..n)
            .filter(|&i| loss[i] > stop_loss && step[i] > 1e-12)
            .collect();
        if active.is_empty() {
            break;
        }
        let mut trial = x.select_rows(&active);
        for (r, &i) in active.iter().enumerate() {
            let row = trial.row_mut(r);
            for (v, g) in row.iter_mut().zip(grad.row(i)) {
                *v -= step[i] * g;
            }
            project(row, &blocks, &bounds);
        }
        let (g_trial, l_trial) = model.input_gradient(&trial, want);
        for (r, &i) in active.iter().enumerate() {
            if l_trial[r] <= loss[i] {
                x.row_mut(i).copy_from_slice(trial.row(r));
                grad.row_mut(i).copy_from_slice(g_trial.row(r));
                loss[i] = l_trial[r];
            } else {
                step[i] *= 0.5;
            }
        }
        loss_trace.push(mean(&loss));
    }

    let final_probability: Vec<f64> = model
        .predict_encoded(&x)
        .into_iter()
        .map(|p| target_probability(p, target))
        .collect();
    let converged = final_probability
        .iter()
        .filter(|&&p| p >= config.threshold)
        .count();
    let to_table = |m: &Matrix<f64>| RawTable::new(schema.clone(), encoder.decode(m), None);
    let canonical = CanonicalSet {
        rows: to_table(&x)?,
        prediction_target: target.prediction(),
        fixed: BTreeMap::new(),
        provenance: Provenance {
            method: "lucid".into(),
            run_id: fingerprint::of_json(&("lucid", model.fingerprint(), target, config))[..16]
                .to_string(),
            seed: config.seed,
            model_fingerprint: model.fingerprint(),
        },
        condition_match_rate: None,
    };
    log::info!(
        "inverse design: {converged}/{n} samples reached {}",
        config.threshold
    );
    Ok(LucidRun {
        canonical,
        initial: to_table(&x0)?,
        converged,
        loss_trace,
        final_probability,
    })
}

/// Canonical set against its random starting points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LucidComparison {
    pub canonical: DistributionSummary,
    pub initial: DistributionSummary,
    /// Canonical minus initial frequency per category or histogram bin.
    pub deltas: Vec<FeatureDelta>,
}

pub fn lucid_compare(
    canonical: &CanonicalSet,
    initial: &RawTable,
) -> Result<LucidComparison, LucidError> {
    if canonical.schema().fingerprint() != initial.schema().fingerprint() {
        return Err(LucidError::SchemaMismatch(
            "canonical and initial sets use different schemas".into(),
        ));
    }
    let bins = shared_bins(&[&canonical.rows, initial])?;
    let c = summarize(&canonical.rows, &bins)?;
    let i = summarize(initial, &bins)?;
    Ok(LucidComparison {
        deltas: canonical_delta(&c, &i)?,
        canonical: c,
        initial: i,
    })
}
