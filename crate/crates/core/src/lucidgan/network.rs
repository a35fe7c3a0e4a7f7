//! Generator and packed critic.

use rand::Rng;
use rand_distr::{Distribution, Gumbel};
use serde::{Deserialize, Serialize};

use fairgen_tensor::nn::{dropout_mask, BatchNorm, Bound, Linear, NamedTensor, ParamStore};
use fairgen_tensor::{Matrix, Scalar, Tape, Var};

use crate::transforms::{CategoryBlock, Span, SpanKind};

use super::LucidGanError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub noise_dim: usize,
    /// Widths of the residual layers.
    pub hidden: Vec<usize>,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            noise_dim: 128,
            hidden: vec![256, 256],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriticSpec {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    /// Rows packed into one critic input.
    pub pac: usize,
    pub leaky_slope: f64,
}

impl Default for CriticSpec {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            dropout: 0.5,
            pac: 10,
            leaky_slope: 0.2,
        }
    }
}

fn gumbel_noise<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix<T> {
    let g = Gumbel::new(0.0, 1.0).expect("unit gumbel");
    Matrix::from_fn(rows, cols, |_, _| T::of(g.sample(rng)))
}

/// Tanh on scalar spans, Gumbel-softmax at `temperature` on mode and
/// category spans.
pub fn activate<T: Scalar, R: Rng + ?Sized>(
    tape: &Tape<T>,
    logits: Var,
    spans: &[Span],
    temperature: f64,
    rng: &mut R,
) -> Var {
    let rows = tape.shape(logits).0;
    let parts: Vec<Var> = spans
        .iter()
        .map(|s| {
            let block = tape.slice_cols(logits, s.start, s.end());
            match s.kind {
                SpanKind::Scalar => tape.tanh(block),
                SpanKind::Mode | SpanKind::Category => {
                    let noisy = tape.add(block, tape.constant(gumbel_noise(rows, s.width, rng)));
                    tape.softmax_rows(tape.scale(noisy, 1.0 / temperature))
                }
            }
        })
        .collect();
    tape.concat_cols(&parts)
}

/// Same as [`activate`] without a tape.
pub fn activate_plain<R: Rng + ?Sized>(
    logits: &Matrix<f64>,
    spans: &[Span],
    temperature: f64,
    rng: &mut R,
) -> Matrix<f64> {
    let g = Gumbel::new(0.0, 1.0).expect("unit gumbel");
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for s in spans {
            let block = &mut row[s.start..s.end()];
            match s.kind {
                SpanKind::Scalar => block[0] = block[0].tanh(),
                SpanKind::Mode | SpanKind::Category => {
                    for v in block.iter_mut() {
                        *v = (*v + g.sample(rng)) / temperature;
                    }
                    let max = block.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for v in block.iter_mut() {
                        *v = (*v - max).exp();
                        total += *v;
                    }
                    for v in block.iter_mut() {
                        *v /= total;
                    }
                }
            }
        }
    }
    out
}

/// Cross-entropy of the generator's raw category logits against the masked
/// category, summed over rows and divided by the row count. `targets[i]`
/// holds the block and category conditioned on in row `i`.
pub fn condition_loss<T: Scalar>(
    tape: &Tape<T>,
    logits: Var,
    blocks: &[CategoryBlock],
    targets: &[Option<(usize, usize)>],
) -> Var {
    let rows = targets.len();
    let mut total: Option<Var> = None;
    for (b, block) in blocks.iter().enumerate() {
        if !targets
            .iter()
            .any(|t| matches!(t, Some((tb, _)) if *tb == b))
        {
            continue;
        }
        let pick = Matrix::from_fn(rows, block.width, |r, c| match targets[r] {
            Some((tb, tc)) if tb == b && tc == c => T::of(-1.0 / rows as f64),
            _ => T::zero(),
        });
        let logp =
            tape.log_softmax_rows(tape.slice_cols(logits, block.start, block.start + block.width));
        let term = tape.sum(tape.mul_const(logp, pick));
        total = Some(match total {
            Some(t) => tape.add(t, term),
            None => term,
        });
    }
    total.unwrap_or_else(|| tape.constant(Matrix::zeros(1, 1)))
}

/// Residual generator: each hidden layer emits `[relu(bn(fc(h))), h]`.
pub struct GeneratorNet<T: Scalar> {
    pub store: ParamStore<T>,
    residual: Vec<(Linear, BatchNorm)>,
    output: Linear,
}

impl<T: Scalar> GeneratorNet<T> {
    pub fn new<R: Rng + ?Sized>(
        spec: &GeneratorSpec,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        let mut store = ParamStore::new();
        let mut residual = Vec::new();
        let mut width = input;
        for (i, &h) in spec.hidden.iter().enumerate() {
            let fc = Linear::new(&mut store, &format!("residual{i}.fc"), width, h, rng);
            let bn = BatchNorm::new(&mut store, &format!("residual{i}.bn"), h);
            residual.push((fc, bn));
            width += h;
        }
        let output = Linear::new(&mut store, "output", width, output, rng);
        Self {
            store,
            residual,
            output,
        }
    }

    /// Raw logits. Batch statistics are used and running estimates updated.
    pub fn forward_train(&mut self, tape: &Tape<T>, bound: &Bound, input: Var) -> Var {
        let mut h = input;
        for (fc, bn) in &mut self.residual {
            let z = tape.relu(bn.forward_train(tape, bound, fc.forward(tape, bound, h)));
            h = tape.concat_cols(&[z, h]);
        }
        self.output.forward(tape, bound, h)
    }

    pub fn forward_eval(&self, tape: &Tape<T>, bound: &Bound, input: Var) -> Var {
        let mut h = input;
        for (fc, bn) in &self.residual {
            let z = tape.relu(bn.forward_eval(tape, bound, fc.forward(tape, bound, h)));
            h = tape.concat_cols(&[z, h]);
        }
        self.output.forward(tape, bound, h)
    }

    pub fn snapshot(&self) -> GeneratorWeights {
        GeneratorWeights {
            params: self.store.to_named(),
            batch_norm: self
                .residual
                .iter()
                .map(|(_, bn)| RunningStats {
                    mean: bn.running_mean.clone(),
                    var: bn.running_var.clone(),
                    eps: bn.eps,
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub eps: f64,
}

/// Trained generator parameters in `f64`, evaluated without a tape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorWeights {
    /// Per residual layer `fc.weight, fc.bias, bn.gamma, bn.beta`, then
    /// `output.weight, output.bias`.
    pub params: Vec<NamedTensor>,
    pub batch_norm: Vec<RunningStats>,
}

impl GeneratorWeights {
    fn matrix(&self, i: usize) -> Result<Matrix<f64>, LucidGanError> {
        let t = self
            .params
            .get(i)
            .ok_or_else(|| LucidGanError::InvalidState("generator parameter missing".into()))?;
        Matrix::from_vec(t.rows, t.cols, t.data.clone())
            .map_err(|e| LucidGanError::InvalidState(e.to_string()))
    }

    /// Check shapes against a layout with `input` columns in and `output` out.
    pub fn validate(&self, input: usize, output: usize) -> Result<(), LucidGanError> {
        let layers = self.batch_norm.len();
        if self.params.len() != 4 * layers + 2 {
            return Err(LucidGanError::InvalidState(
                "generator parameter count".into(),
            ));
        }
        let mut width = input;
        for (l, stats) in self.batch_norm.iter().enumerate() {
            let w = &self.params[4 * l];
            let h = w.cols;
            let ok = w.rows == width
                && [1, 2, 3]
                    .iter()
                    .all(|&k| (self.params[4 * l + k].rows, self.params[4 * l + k].cols) == (1, h))
                && stats.mean.len() == h
                && stats.var.len() == h
                && stats.var.iter().all(|&v| v >= 0.0);
            if !ok {
                return Err(LucidGanError::InvalidState(format!(
                    "generator layer {l} shape"
                )));
            }
            width += h;
        }
        let (w, b) = (&self.params[4 * layers], &self.params[4 * layers + 1]);
        if (w.rows, w.cols) != (width, output) || (b.rows, b.cols) != (1, output) {
            return Err(LucidGanError::InvalidState("generator output shape".into()));
        }
        if self
            .params
            .iter()
            .any(|t| t.data.iter().any(|x| !x.is_finite()))
        {
            return Err(LucidGanError::InvalidState(
                "non-finite generator weight".into(),
            ));
        }
        Ok(())
    }

    /// Raw logits with batch normalization in inference mode.
    pub fn forward(&self, input: &Matrix<f64>) -> Result<Matrix<f64>, LucidGanError> {
        let mut h = input.clone();
        for (l, stats) in self.batch_norm.iter().enumerate() {
            let w = self.matrix(4 * l)?;
            let b = self.matrix(4 * l + 1)?;
            let gamma = self.matrix(4 * l + 2)?;
            let beta = self.matrix(4 * l + 3)?;
            let mut z = Matrix::matmul(&h, &w, false, false);
            for r in 0..z.rows() {
                for (j, v) in z.row_mut(r).iter_mut().enumerate() {
                    let x = (*v + b.get(0, j) - stats.mean[j]) / (stats.var[j] + stats.eps).sqrt();
                    *v = (x * gamma.get(0, j) + beta.get(0, j)).max(0.0);
                }
            }
            h = Matrix::concat_cols(&[&z, &h]);
        }
        let layers = self.batch_norm.len();
        let w = self.matrix(4 * layers)?;
        let b = self.matrix(4 * layers + 1)?;
        let mut out = Matrix::matmul(&h, &w, false, false);
        for r in 0..out.rows() {
            for (v, &bv) in out.row_mut(r).iter_mut().zip(b.as_slice()) {
                *v += bv;
            }
        }
        Ok(out)
    }
}

/// Critic over packs of `pac` rows, each row carrying its own condition.
pub struct CriticNet<T: Scalar> {
    pub store: ParamStore<T>,
    layers: Vec<Linear>,
    output: Linear,
    spec: CriticSpec,
}

impl<T: Scalar> CriticNet<T> {
    /// `row_width` is the encoded width plus the condition width.
    pub fn new<R: Rng + ?Sized>(spec: &CriticSpec, row_width: usize, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let mut width = spec.pac * row_width;
        let mut layers = Vec::new();
        for (i, &h) in spec.hidden.iter().enumerate() {
            layers.push(Linear::new(&mut store, &format!("layer{i}"), width, h, rng));
            width = h;
        }
        let output = Linear::new(&mut store, "output", width, 1, rng);
        Self {
            store,
            layers,
            output,
            spec: spec.clone(),
        }
    }

    pub fn pac(&self) -> usize {
        self.spec.pac
    }

    /// One score per pack. Rows are packed in order, so the row count must be
    /// a multiple of `pac`. Dropout is applied when `rng` is given.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &Tape<T>,
        bound: &Bound,
        rows: Var,
        mut rng: Option<&mut R>,
    ) -> Result<Var, LucidGanError> {
        let (n, w) = tape.shape(rows);
        let pac = self.spec.pac;
        if pac == 0 || n % pac != 0 {
            return Err(LucidGanError::PackSize { rows: n, pac });
        }
        let mut h = tape.reshape(rows, n / pac, pac * w);
        for layer in &self.layers {
            h = tape.leaky_relu(layer.forward(tape, bound, h), self.spec.leaky_slope);
            if let Some(rng) = rng.as_deref_mut() {
                if self.spec.dropout > 0.0 {
                    let (r, c) = tape.shape(h);
                    h = tape.mul_const(h, dropout_mask(r, c, self.spec.dropout, rng));
                }
            }
        }
        Ok(self.output.forward(tape, bound, h))
    }
}

/// `weight * mean over packs of (||grad critic(x)|| - 1)^2` at interpolates
/// `x = alpha * real + (1 - alpha) * fake`, one `alpha` per pack. The result
/// is differentiable with respect to the critic parameters.
#[allow(clippy::too_many_arguments)]
pub fn gradient_penalty<T: Scalar, R: Rng + ?Sized>(
    tape: &Tape<T>,
    critic: &CriticNet<T>,
    bound: &Bound,
    real: &Matrix<T>,
    fake: &Matrix<T>,
    weight: f64,
    dropout: bool,
    rng: &mut R,
) -> Result<Var, LucidGanError> {
    if real.shape() != fake.shape() {
        return Err(LucidGanError::PackSize {
            rows: fake.rows(),
            pac: critic.pac(),
        });
    }
    let pac = critic.pac();
    let (n, w) = real.shape();
    if pac == 0 || n % pac != 0 {
        return Err(LucidGanError::PackSize { rows: n, pac });
    }
    let alphas: Vec<T> = (0..n / pac).map(|_| T::of(rng.random::<f64>())).collect();
    let interp = Matrix::from_fn(n, w, |r, c| {
        let a = alphas[r / pac];
        a * real.get(r, c) + (T::one() - a) * fake.get(r, c)
    });
    let x = tape.variable(interp);
    let scores = critic.forward(tape, bound, x, if dropout { Some(rng) } else { None })?;
    let grad = tape.grad(tape.sum(scores), &[x]).remove(0);
    let packed = tape.reshape(grad, n / pac, pac * w);
    let norms = tape.sqrt(tape.add_scalar(tape.sum_cols(tape.square(packed)), 1e-12));
    Ok(tape.scale(tape.mean(tape.square(tape.add_scalar(norms, -1.0))), weight))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spans() -> Vec<Span> {
        vec![
            Span {
                feature: 0,
                kind: SpanKind::Scalar,
                start: 0,
                width: 1,
            },
            Span {
                feature: 0,
                kind: SpanKind::Mode,
                start: 1,
                width: 3,
            },
            Span {
                feature: 1,
                kind: SpanKind::Category,
                start: 4,
                width: 2,
            },
        ]
    }

    #[test]
    fn activation_produces_simplex_blocks_and_open_scalars() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits = Matrix::from_fn(200, 6, |r, c| ((r * 7 + c * 3) % 11) as f64 - 5.0);
        let tape = Tape::<f64>::new();
        let act = tape.value(activate(
            &tape,
            tape.constant(logits.clone()),
            &spans(),
            0.2,
            &mut rng,
        ));
        let plain = activate_plain(&logits, &spans(), 0.2, &mut rng);
        for m in [&*act, &plain] {
            for r in 0..m.rows() {
                let row = m.row(r);
                assert!(row[0] > -1.0 && row[0] < 1.0);
                assert!((row[1..4].iter().sum::<f64>() - 1.0).abs() < 1e-5);
                assert!((row[4..6].iter().sum::<f64>() - 1.0).abs() < 1e-5);
                assert!(row.iter().all(|&v| v >= 0.0 || v > -1.0));
            }
        }
    }

    #[test]
    fn low_temperature_approaches_one_hot() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let logits = Matrix::from_fn(1000, 6, |_, c| c as f64 * 0.1);
        let act = activate_plain(&logits, &spans(), 1e-3, &mut rng);
        let mut sharp = 0;
        for r in 0..1000 {
            let row = act.row(r);
            sharp += usize::from(row[1..4].iter().cloned().fold(0.0, f64::max) >= 0.99);
            sharp += usize::from(row[4..6].iter().cloned().fold(0.0, f64::max) >= 0.99);
        }
        assert!(sharp as f64 >= 0.99 * 2000.0, "{sharp}");
    }

    #[test]
    fn eval_forward_matches_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = GeneratorSpec {
            noise_dim: 4,
            hidden: vec![5, 3],
        };
        let mut net = GeneratorNet::<f64>::new(&spec, 6, 4, &mut rng);
        let x = Matrix::from_fn(8, 6, |r, c| ((r + 2 * c) as f64).sin());
        // Move the running statistics away from their initial values.
        {
            let tape = Tape::new();
            let b = net.store.bind(&tape, false);
            let xv = tape.constant(x.clone());
            net.forward_train(&tape, &b, xv);
        }
        let tape = Tape::new();
        let b = net.store.bind(&tape, false);
        let xv = tape.constant(x.clone());
        let on_tape = tape.value(net.forward_eval(&tape, &b, xv));
        let weights = net.snapshot();
        weights.validate(6, 4).unwrap();
        let plain = weights.forward(&x).unwrap();
        for (a, b) in on_tape.as_slice().iter().zip(plain.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(weights.validate(7, 4).is_err());
    }

    #[test]
    fn condition_loss_is_masked_cross_entropy() {
        let blocks = [
            CategoryBlock {
                feature: 0,
                start: 0,
                mask_start: 0,
                width: 2,
            },
            CategoryBlock {
                feature: 1,
                start: 2,
                mask_start: 2,
                width: 3,
            },
        ];
        let logits = Matrix::from_vec(
            2,
            5,
            vec![0.0, 1.0, 2.0, 0.0, -1.0, 3.0, 0.0, 0.5, 0.5, 0.5],
        )
        .unwrap();
        let tape = Tape::<f64>::new();
        let loss = condition_loss(
            &tape,
            tape.constant(logits),
            &blocks,
            &[Some((0, 1)), Some((1, 2))],
        );
        let lse = |v: &[f64]| v.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        let expect = ((lse(&[0.0, 1.0]) - 1.0) + (lse(&[0.5, 0.5, 0.5]) - 0.5)) / 2.0;
        assert!((tape.scalar_value(loss) - expect).abs() < 1e-12);
    }

    #[test]
    fn critic_rejects_partial_packs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let critic = CriticNet::<f64>::new(
            &CriticSpec {
                pac: 3,
                ..CriticSpec::default()
            },
            2,
            &mut rng,
        );
        let tape = Tape::new();
        let b = critic.store.bind(&tape, false);
        let x = tape.constant(Matrix::zeros(4, 2));
        assert!(matches!(
            critic.forward::<ChaCha8Rng>(&tape, &b, x, None),
            Err(LucidGanError::PackSize { rows: 4, pac: 3 })
        ));
    }
}
