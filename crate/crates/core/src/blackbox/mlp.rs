//! Fully connected ReLU classifier with a two-way softmax output.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use fairgen_tensor::nn::{Adam, AdamConfig, Linear, NamedTensor, ParamStore};
use fairgen_tensor::{Matrix, Scalar, Tape, Var};

use crate::data::{split, RawTable};
use crate::fingerprint;

use super::{DifferentiableModel, InputEncoder, ModelError, ModelUnderAudit};

pub const MLP_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpTrainConfig {
    pub validation_fraction: f64,
    /// Candidate numbers of hidden layers.
    pub depths: Vec<usize>,
    /// Candidate layer widths; every hidden layer of a candidate shares one.
    pub widths: Vec<usize>,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for MlpTrainConfig {
    fn default() -> Self {
        Self {
            validation_fraction: 0.2,
            depths: vec![1, 2, 3],
            widths: vec![32, 64, 128, 256],
            max_epochs: 40,
            patience: 5,
            batch_size: 256,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// Outcome of one candidate architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub hidden: Vec<usize>,
    pub validation_accuracy: f64,
    pub best_epoch: usize,
}

/// Trained classifier. Weights are stored as `[W0, b0, W1, b1, ...]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpArtifact", into = "MlpArtifact")]
pub struct MlpClassifier {
    encoder: InputEncoder,
    positive_label: String,
    hidden: Vec<usize>,
    weights: Vec<Matrix<f64>>,
    validation_accuracy: f64,
    search: Vec<SearchResult>,
}

/// Serialized form of [`MlpClassifier`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MlpArtifact {
    pub format_version: u32,
    /// Hash of input names, kinds and vocabularies.
    pub input_fingerprint: String,
    pub positive_label: String,
    pub encoder: InputEncoder,
    pub hidden: Vec<usize>,
    pub params: Vec<NamedTensor>,
    pub validation_accuracy: f64,
    pub search: Vec<SearchResult>,
}

impl From<MlpClassifier> for MlpArtifact {
    fn from(m: MlpClassifier) -> Self {
        let params = m
            .weights
            .iter()
            .enumerate()
            .map(|(i, w)| NamedTensor {
                name: format!(
                    "layer{}.{}",
                    i / 2,
                    if i % 2 == 0 { "weight" } else { "bias" }
                ),
                rows: w.rows(),
                cols: w.cols(),
                data: w.to_f64_vec(),
            })
            .collect();
        MlpArtifact {
            format_version: MLP_FORMAT_VERSION,
            input_fingerprint: m.encoder.fingerprint(),
            positive_label: m.positive_label,
            encoder: m.encoder,
            hidden: m.hidden,
            params,
            validation_accuracy: m.validation_accuracy,
            search: m.search,
        }
    }
}

impl TryFrom<MlpArtifact> for MlpClassifier {
    type Error = ModelError;

    fn try_from(a: MlpArtifact) -> Result<Self, Self::Error> {
        if a.format_version != MLP_FORMAT_VERSION {
            return Err(ModelError::Artifact(format!(
                "format version {} (expected {MLP_FORMAT_VERSION})",
                a.format_version
            )));
        }
        if a.input_fingerprint != a.encoder.fingerprint() {
            return Err(ModelError::Artifact(
                "input fingerprint does not match encoder".into(),
            ));
        }
        let dims = layer_dims(a.encoder.width(), &a.hidden);
        if a.params.len() != 2 * dims.len() {
            return Err(ModelError::Artifact(
                "parameter count does not match layout".into(),
            ));
        }
        let mut weights = Vec::with_capacity(a.params.len());
        for (i, t) in a.params.into_iter().enumerate() {
            let (din, dout) = dims[i / 2];
            let expect = if i % 2 == 0 { (din, dout) } else { (1, dout) };
            if (t.rows, t.cols) != expect || t.data.iter().any(|x| !x.is_finite()) {
                return Err(ModelError::Artifact(format!("bad tensor `{}`", t.name)));
            }
            weights.push(
                Matrix::from_vec(t.rows, t.cols, t.data)
                    .map_err(|e| ModelError::Artifact(e.to_string()))?,
            );
        }
        Ok(Self {
            encoder: a.encoder,
            positive_label: a.positive_label,
            hidden: a.hidden,
            weights,
            validation_accuracy: a.validation_accuracy,
            search: a.search,
        })
    }
}

fn layer_dims(input: usize, hidden: &[usize]) -> Vec<(usize, usize)> {
    let mut dims = Vec::with_capacity(hidden.len() + 1);
    let mut prev = input;
    for &h in hidden {
        dims.push((prev, h));
        prev = h;
    }
    dims.push((prev, 2));
    dims
}

/// Logits of a stack of ReLU layers, computed without a tape.
fn forward_plain<T: Scalar>(weights: &[Matrix<T>], x: &Matrix<T>) -> Matrix<T> {
    let layers = weights.len() / 2;
    let mut h = x.clone();
    for l in 0..layers {
        let mut z = Matrix::matmul(&h, &weights[2 * l], false, false);
        let b = weights[2 * l + 1].as_slice();
        let last = l + 1 == layers;
        for r in 0..z.rows() {
            for (v, &bv) in z.row_mut(r).iter_mut().zip(b) {
                *v = *v + bv;
                if !last && *v < T::zero() {
                    *v = T::zero();
                }
            }
        }
        h = z;
    }
    h
}

fn forward_tape<T: Scalar>(tape: &Tape<T>, weights: &[Var], x: Var) -> Var {
    let layers = weights.len() / 2;
    let mut h = x;
    for l in 0..layers {
        h = tape.add_row(tape.matmul(h, weights[2 * l]), weights[2 * l + 1]);
        if l + 1 < layers {
            h = tape.relu(h);
        }
    }
    h
}

/// p(positive) from two logits: `sigmoid(l1 - l0)`.
fn positive_probability<T: Scalar>(logits: &Matrix<T>) -> Vec<f64> {
    (0..logits.rows())
        .map(|r| {
            let d = logits.get(r, 1).to_f64_lossless() - logits.get(r, 0).to_f64_lossless();
            1.0 / (1.0 + (-d).exp())
        })
        .collect()
}

fn accuracy(p: &[f64], y: &[bool]) -> f64 {
    let hits = p.iter().zip(y).filter(|(&p, &y)| (p > 0.5) == y).count();
    hits as f64 / y.len().max(1) as f64
}

impl MlpClassifier {
    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn validation_accuracy(&self) -> f64 {
        self.validation_accuracy
    }

    pub fn search(&self) -> &[SearchResult] {
        &self.search
    }

    pub fn positive_label(&self) -> &str {
        &self.positive_label
    }

    /// Flat copy of every weight, for freeze checks.
    pub fn parameters(&self) -> Vec<f64> {
        self.weights.iter().flat_map(|w| w.to_f64_vec()).collect()
    }

    /// Fraction of labeled rows classified correctly at threshold 0.5.
    pub fn accuracy(&self, table: &RawTable) -> Result<f64, ModelError> {
        let y = table.positive_labels().ok_or(ModelError::NoLabels)?;
        Ok(accuracy(&self.predict(table)?, &y))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("classifier serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(text)?)
    }
}

impl ModelUnderAudit for MlpClassifier {
    fn input_features(&self) -> Vec<String> {
        self.encoder.names()
    }

    fn predict(&self, table: &RawTable) -> Result<Vec<f64>, ModelError> {
        Ok(self.predict_encoded(&self.encoder.encode(table)?))
    }
}

impl DifferentiableModel for MlpClassifier {
    fn input_encoder(&self) -> &InputEncoder {
        &self.encoder
    }

    fn fingerprint(&self) -> String {
        fingerprint::of_json(&(self.encoder.fingerprint(), &self.hidden, self.parameters()))
    }

    fn predict_encoded(&self, x: &Matrix<f64>) -> Vec<f64> {
        positive_probability(&forward_plain(&self.weights, x))
    }

    fn input_gradient(&self, x: &Matrix<f64>, target: bool) -> (Matrix<f64>, Vec<f64>) {
        let tape = Tape::<f64>::new();
        let xv = tape.variable(x.clone());
        let ws: Vec<Var> = self
            .weights
            .iter()
            .map(|w| tape.constant(w.clone()))
            .collect();
        let logp = tape.log_softmax_rows(forward_tape(&tape, &ws, xv));
        let col = usize::from(target);
        let pick = Matrix::from_fn(x.rows(), 2, |_, c| if c == col { -1.0 } else { 0.0 });
        let per_row = tape.sum_cols(tape.mul_const(logp, pick));
        let losses = tape.value(per_row).to_f64_vec();
        let grad = tape.grad_values(tape.sum(per_row), &[xv]).remove(0);
        (grad, losses)
    }
}

struct Candidate {
    result: SearchResult,
    weights: Vec<Matrix<f64>>,
}

fn train_candidate(
    hidden: &[usize],
    x: &Matrix<f32>,
    y: &[bool],
    xv: &Matrix<f32>,
    yv: &[bool],
    config: &MlpTrainConfig,
    seed: u64,
) -> Result<Candidate, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f32>::new();
    for (i, (din, dout)) in layer_dims(x.cols(), hidden).into_iter().enumerate() {
        Linear::new(&mut store, &format!("layer{i}"), din, dout, &mut rng);
    }
    let mut adam = Adam::new(config.adam, &store);
    let onehot = |idx: &[usize]| {
        Matrix::<f32>::from_fn(idx.len(), 2, |r, c| {
            if (c == 1) == y[idx[r]] {
                -1.0 / idx.len() as f32
            } else {
                0.0
            }
        })
    };
    let snapshot = |s: &ParamStore<f32>| -> Vec<Matrix<f64>> {
        s.to_named()
            .into_iter()
            .map(|t| Matrix::from_vec(t.rows, t.cols, t.data).expect("snapshot shape"))
            .collect()
    };

    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut best = Candidate {
        result: SearchResult {
            hidden: hidden.to_vec(),
            validation_accuracy: -1.0,
            best_epoch: 0,
        },
        weights: snapshot(&store),
    };
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size.max(1)) {
            let tape = Tape::<f32>::new();
            let bound = store.bind(&tape, true);
            let xb = tape.constant(x.select_rows(batch));
            let logp = tape.log_softmax_rows(forward_tape(&tape, bound.vars(), xb));
            let loss = tape.sum(tape.mul_const(logp, onehot(batch)));
            if !tape.scalar_value(loss).is_finite() {
                return Err(ModelError::Diverged(format!(
                    "non-finite loss in epoch {epoch}"
                )));
            }
            let grads = tape.grad_values(loss, bound.vars());
            adam.step(&mut store, &grads);
        }
        let weights: Vec<Matrix<f32>> = snapshot(&store).iter().map(|w| w.cast()).collect();
        let acc = accuracy(&positive_probability(&forward_plain(&weights, xv)), yv);
        if acc > best.result.validation_accuracy {
            best.result.validation_accuracy = acc;
            best.result.best_epoch = epoch;
            best.weights = snapshot(&store);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(best)
}

/// Train one network per candidate layout on `1 - validation_fraction` of
/// `train` and keep the one with the best validation accuracy.
pub fn train_mlp(train: &RawTable, config: &MlpTrainConfig) -> Result<MlpClassifier, ModelError> {
    let labels = train.labels().ok_or(ModelError::NoLabels)?;
    let mut distinct: Vec<String> = labels.to_vec();
    distinct.sort();
    distinct.dedup();
    if distinct.len() > 2 {
        return Err(ModelError::NonBinaryLabels(distinct));
    }
    if train.is_empty() {
        return Err(ModelError::EmptyTable);
    }
    let (fit, val) = split(train, config.validation_fraction, config.seed)?;
    if fit.is_empty() || val.is_empty() {
        return Err(ModelError::EmptyTable);
    }
    let encoder = InputEncoder::fit(&fit)?;
    let x: Matrix<f32> = encoder.encode(&fit)?.cast();
    let xv: Matrix<f32> = encoder.encode(&val)?.cast();
    let y = fit.positive_labels().expect("labels checked");
    let yv = val.positive_labels().expect("labels checked");

    let mut results = Vec::new();
    let mut best: Option<Candidate> = None;
    for &depth in &config.depths {
        for &width in &config.widths {
            let hidden = vec![width; depth];
            let seed = config.seed ^ ((depth as u64) << 32 | width as u64);
            let cand = train_candidate(&hidden, &x, &y, &xv, &yv, config, seed)?;
            log::info!(
                "mlp {:?}: validation accuracy {:.4} (epoch {})",
                hidden,
                cand.result.validation_accuracy,
                cand.result.best_epoch
            );
            results.push(cand.result.clone());
            if best
                .as_ref()
                .is_none_or(|b| cand.result.validation_accuracy > b.result.validation_accuracy)
            {
                best = Some(cand);
            }
        }
    }
    let best =
        best.ok_or_else(|| ModelError::Artifact("empty architecture search space".into()))?;
    Ok(MlpClassifier {
        encoder,
        positive_label: train.schema().positive_label().to_string(),
        hidden: best.result.hidden.clone(),
        weights: best.weights,
        validation_accuracy: best.result.validation_accuracy,
        search: results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureSpec, TableSchema, Value};
    use rand::Rng;

    fn separable(n: usize, seed: u64) -> RawTable {
        let schema = TableSchema::new(
            vec![FeatureSpec::numeric("a"), FeatureSpec::numeric("b")],
            "pos",
            Some("y".into()),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        while rows.len() < n {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            let margin = a + 0.5 * b;
            if margin.abs() < 0.05 {
                continue;
            }
            rows.push(vec![Value::Num(a), Value::Num(b)]);
            labels.push(if margin > 0.0 { "pos" } else { "neg" }.to_string());
        }
        RawTable::new(schema, rows, Some(labels)).unwrap()
    }

    fn small_config() -> MlpTrainConfig {
        MlpTrainConfig {
            depths: vec![1],
            widths: vec![16],
            max_epochs: 60,
            patience: 60,
            batch_size: 32,
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            ..MlpTrainConfig::default()
        }
    }

    #[test]
    fn separable_data_is_learned() {
        let m = train_mlp(&separable(600, 1), &small_config()).unwrap();
        assert!(
            m.validation_accuracy() >= 0.99,
            "{}",
            m.validation_accuracy()
        );
    }

    #[test]
    fn rejects_more_than_two_labels() {
        let t = separable(30, 2);
        let mut labels = t.labels().unwrap().to_vec();
        labels[0] = "maybe".into();
        let t = RawTable::new(t.schema().clone(), t.rows().to_vec(), Some(labels)).unwrap();
        assert!(matches!(
            train_mlp(&t, &small_config()),
            Err(ModelError::NonBinaryLabels(_))
        ));
    }

    #[test]
    fn artifact_round_trip_preserves_predictions() {
        let t = separable(200, 3);
        let cfg = MlpTrainConfig {
            max_epochs: 3,
            ..small_config()
        };
        let m = train_mlp(&t, &cfg).unwrap();
        let back = MlpClassifier::from_json(&m.to_json()).unwrap();
        assert_eq!(back.predict(&t).unwrap(), m.predict(&t).unwrap());
        let tampered = m.to_json().replace("\"hidden\":[16]", "\"hidden\":[17]");
        assert!(MlpClassifier::from_json(&tampered).is_err());
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let t = separable(200, 4);
        let m = train_mlp(
            &t,
            &MlpTrainConfig {
                max_epochs: 5,
                ..small_config()
            },
        )
        .unwrap();
        let x = m.encoder.encode(&t.select(&[0, 1, 2, 3])).unwrap();
        for target in [true, false] {
            let (g, losses) = m.input_gradient(&x, target);
            assert_eq!(g.shape(), x.shape());
            let h = 1e-6;
            for r in 0..x.rows() {
                for c in 0..x.cols() {
                    let mut plus = x.clone();
                    plus.set(r, c, x.get(r, c) + h);
                    let mut minus = x.clone();
                    minus.set(r, c, x.get(r, c) - h);
                    let fd = (m.input_gradient(&plus, target).1[r]
                        - m.input_gradient(&minus, target).1[r])
                        / (2.0 * h);
                    let an = g.get(r, c);
                    let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
                    assert!(rel < 1e-3 || (an - fd).abs() < 1e-9, "{an} vs {fd}");
                }
                let p = m.predict_encoded(&x.select_rows(&[r]))[0];
                let expect = if target { -p.ln() } else { -(1.0 - p).ln() };
                assert!((losses[r] - expect).abs() < 1e-9);
            }
        }
    }
}
