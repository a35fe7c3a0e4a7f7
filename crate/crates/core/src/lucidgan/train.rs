use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use fairgen_tensor::nn::{Adam, AdamConfig};
use fairgen_tensor::{Matrix, Tape};

use crate::blackbox::ScoredTable;
use crate::data::{RawTable, Value};
use crate::fingerprint;
use crate::transforms::{argmax, Encoder, ModeSelection};

use super::canonical::{CanonicalSet, Provenance};
use super::condition::{ConditionSampler, MaskPolicy};
use super::network::{
    activate, activate_plain, condition_loss, gradient_penalty, CriticNet, CriticSpec,
    GeneratorNet, GeneratorSpec, GeneratorWeights,
};
use super::LucidGanError;

pub const GAN_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub generator: GeneratorSpec,
    pub critic: CriticSpec,
    pub batch_size: usize,
    pub epochs: usize,
    /// Critic updates per generator update.
    pub critic_steps: usize,
    pub gradient_penalty: f64,
    pub temperature: f64,
    pub generator_adam: AdamConfig,
    pub critic_adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
            weight_decay: 1e-6,
        };
        Self {
            generator: GeneratorSpec::default(),
            critic: CriticSpec::default(),
            batch_size: 500,
            epochs: 300,
            critic_steps: 1,
            gradient_penalty: 10.0,
            temperature: 0.2,
            generator_adam: adam,
            critic_adam: adam,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LucidGanError> {
        let bad = |what: &str| Err(LucidGanError::Config(what.to_string()));
        if self.batch_size == 0 || self.epochs == 0 || self.critic_steps == 0 {
            return bad("batch size, epochs and critic steps must be positive");
        }
        if self.critic.pac == 0 || self.batch_size % self.critic.pac != 0 {
            return bad("pac must divide the batch size");
        }
        if self.generator.noise_dim == 0 {
            return bad("noise width must be positive");
        }
        if !(self.temperature > 0.0) || !(self.gradient_penalty > 0.0) {
            return bad("temperature and gradient-penalty weight must be positive");
        }
        if !(0.0..1.0).contains(&self.critic.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub critic_loss: f64,
    pub generator_loss: f64,
    pub gradient_penalty: f64,
    pub condition_loss: f64,
    /// Share of generator-step rows whose conditioned block argmax matches
    /// the mask.
    pub condition_match_rate: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochStats>,
    pub seconds: f64,
}

/// A trained generator with everything needed to generate and decode.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "GanArtifact", into = "GanArtifact")]
pub struct LucidGan {
    encoder: Encoder,
    sampler: ConditionSampler,
    weights: GeneratorWeights,
    config: TrainConfig,
    log: TrainingLog,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct GanArtifact {
    format_version: u32,
    encoder_fingerprint: String,
    encoder: Encoder,
    config: TrainConfig,
    sampler: ConditionSampler,
    weights: GeneratorWeights,
    log: TrainingLog,
}

impl From<LucidGan> for GanArtifact {
    fn from(g: LucidGan) -> Self {
        GanArtifact {
            format_version: GAN_FORMAT_VERSION,
            encoder_fingerprint: g.encoder.fingerprint(),
            encoder: g.encoder,
            config: g.config,
            sampler: g.sampler,
            weights: g.weights,
            log: g.log,
        }
    }
}

impl TryFrom<GanArtifact> for LucidGan {
    type Error = LucidGanError;

    fn try_from(a: GanArtifact) -> Result<Self, Self::Error> {
        if a.format_version != GAN_FORMAT_VERSION {
            return Err(LucidGanError::InvalidState(format!(
                "generator format version {} (expected {GAN_FORMAT_VERSION})",
                a.format_version
            )));
        }
        if a.encoder.fingerprint() != a.encoder_fingerprint {
            return Err(LucidGanError::InvalidState(
                "encoder fingerprint mismatch".into(),
            ));
        }
        if a.sampler.mask_width() != a.encoder.mask_width() {
            return Err(LucidGanError::InvalidState(
                "condition layout does not match encoder".into(),
            ));
        }
        a.weights.validate(
            a.config.generator.noise_dim + a.sampler.condition_width(),
            a.encoder.width(),
        )?;
        Ok(LucidGan {
            encoder: a.encoder,
            sampler: a.sampler,
            weights: a.weights,
            config: a.config,
            log: a.log,
        })
    }
}

/// What to generate.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRequest {
    pub target: f64,
    pub n: usize,
    /// Categories held fixed, as (feature, category).
    pub fixed: Vec<(String, String)>,
    pub mask_policy: MaskPolicy,
    pub seed: u64,
}

impl GenerationRequest {
    pub fn new(target: f64, n: usize, seed: u64) -> Self {
        Self {
            target,
            n,
            fixed: Vec::new(),
            mask_policy: MaskPolicy::default(),
            seed,
        }
    }

    pub fn fixing(mut self, feature: &str, category: &str) -> Self {
        self.fixed.push((feature.to_string(), category.to_string()));
        self
    }
}

/// Rows whose fixed categories disagree with the generated blocks are
/// redrawn this many times before the categories are overwritten.
const MAX_REDRAWS: usize = 20;

fn normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn check_finite(value: f64, what: &str, epoch: usize) -> Result<(), LucidGanError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(LucidGanError::Diverged(format!(
            "{what} became non-finite in epoch {epoch}"
        )))
    }
}

/// Train a conditional generator on `scored`, whose table must be the one
/// `encoder` was fitted on (or share its schema).
pub fn train(
    scored: &ScoredTable,
    encoder: &Encoder,
    config: &TrainConfig,
) -> Result<(LucidGan, TrainingLog), LucidGanError> {
    config.validate()?;
    if scored.table().schema().fingerprint() != encoder.schema().fingerprint() {
        return Err(LucidGanError::SchemaMismatch(
            "scored table and encoder disagree on the schema".into(),
        ));
    }
    let started = std::time::Instant::now();
    let sampler = ConditionSampler::new(scored, encoder)?;
    let data: Matrix<f32> = encoder
        .transform_table(scored.table(), ModeSelection::Sample, config.seed)?
        .cast();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let width = encoder.width();
    let cond_width = sampler.condition_width();
    let noise_dim = config.generator.noise_dim;
    let spans = encoder.spans().to_vec();
    let blocks = sampler.blocks().to_vec();
    let mut gen =
        GeneratorNet::<f32>::new(&config.generator, noise_dim + cond_width, width, &mut rng);
    let critic = CriticNet::<f32>::new(&config.critic, width + cond_width, &mut rng);
    let mut critic = critic;
    let mut gen_opt = Adam::new(config.generator_adam, &gen.store);
    let mut critic_opt = Adam::new(config.critic_adam, &critic.store);

    let batch = config.batch_size;
    let steps = (scored.len() / batch).max(1);
    let mut log = TrainingLog::default();
    for epoch in 1..=config.epochs {
        let mut sums = [0.0f64; 4];
        let (mut matched, mut conditioned) = (0usize, 0usize);
        for _ in 0..steps {
            for _ in 0..config.critic_steps {
                let noise = normal_matrix(batch, noise_dim, &mut rng);
                let (cond, rows, _) = sampler.sample_batch(batch, &mut rng);
                // Real rows are paired with a shuffled copy of the conditions
                // so that packs mix real and fake conditions differently.
                let mut perm: Vec<usize> = (0..batch).collect();
                perm.shuffle(&mut rng);
                let real_rows: Vec<usize> = perm.iter().map(|&i| rows[i]).collect();
                let real_cond = cond.select_rows(&perm).cast::<f32>();
                let cond = cond.cast::<f32>();

                let tape = Tape::<f32>::new();
                let gb = gen.store.bind(&tape, false);
                let input = tape.constant(Matrix::concat_cols(&[&noise.cast(), &cond]));
                let logits = gen.forward_train(&tape, &gb, input);
                let fake = activate(&tape, logits, &spans, config.temperature, &mut rng);
                let fake_rows = Matrix::concat_cols(&[&*tape.value(fake), &cond]);
                let real = Matrix::concat_cols(&[&data.select_rows(&real_rows), &real_cond]);

                let cb = critic.store.bind(&tape, true);
                let fake_score =
                    critic.forward(&tape, &cb, tape.constant(fake_rows.clone()), Some(&mut rng))?;
                let real_score =
                    critic.forward(&tape, &cb, tape.constant(real.clone()), Some(&mut rng))?;
                let wasserstein = tape.sub(tape.mean(fake_score), tape.mean(real_score));
                let penalty = gradient_penalty(
                    &tape,
                    &critic,
                    &cb,
                    &real,
                    &fake_rows,
                    config.gradient_penalty,
                    true,
                    &mut rng,
                )?;
                let loss = tape.add(wasserstein, penalty);
                let loss_value = tape.scalar_value(loss);
                check_finite(loss_value, "critic loss", epoch)?;
                sums[0] += loss_value;
                sums[2] += tape.scalar_value(penalty);
                let grads = tape.grad_values(loss, cb.vars());
                critic_opt.step(&mut critic.store, &grads);
            }

            let noise = normal_matrix(batch, noise_dim, &mut rng);
            let (cond, _, choices) = sampler.sample_batch(batch, &mut rng);
            let cond = cond.cast::<f32>();
            let tape = Tape::<f32>::new();
            let gb = gen.store.bind(&tape, true);
            let input = tape.constant(Matrix::concat_cols(&[&noise.cast(), &cond]));
            let logits = gen.forward_train(&tape, &gb, input);
            let fake = activate(&tape, logits, &spans, config.temperature, &mut rng);
            let cb = critic.store.bind(&tape, false);
            let rows = tape.concat_cols(&[fake, tape.constant(cond)]);
            let score = critic.forward(&tape, &cb, rows, Some(&mut rng))?;
            let closs = condition_loss(&tape, logits, &blocks, &choices);
            let loss = tape.add(tape.neg(tape.mean(score)), closs);
            let loss_value = tape.scalar_value(loss);
            check_finite(loss_value, "generator loss", epoch)?;
            sums[1] += loss_value;
            sums[3] += tape.scalar_value(closs);

            let fake_value = tape.value(fake);
            for (r, choice) in choices.iter().enumerate() {
                if let Some((b, c)) = *choice {
                    let block = &blocks[b];
                    let row = fake_value.row(r);
                    let probs: Vec<f64> = row[block.start..block.start + block.width]
                        .iter()
                        .map(|&v| v as f64)
                        .collect();
                    matched += usize::from(argmax(&probs) == c);
                    conditioned += 1;
                }
            }
            let grads = tape.grad_values(loss, gb.vars());
            gen_opt.step(&mut gen.store, &grads);
        }
        let k = steps as f64;
        let stats = EpochStats {
            epoch,
            critic_loss: sums[0] / (k * config.critic_steps as f64),
            generator_loss: sums[1] / k,
            gradient_penalty: sums[2] / (k * config.critic_steps as f64),
            condition_loss: sums[3] / k,
            condition_match_rate: if conditioned > 0 {
                matched as f64 / conditioned as f64
            } else {
                1.0
            },
        };
        log::debug!(
            "epoch {epoch}: critic {:.4} generator {:.4} penalty {:.4} condition {:.4} match {:.3}",
            stats.critic_loss,
            stats.generator_loss,
            stats.gradient_penalty,
            stats.condition_loss,
            stats.condition_match_rate
        );
        log.epochs.push(stats);
    }
    log.seconds = started.elapsed().as_secs_f64();
    let model = LucidGan {
        encoder: encoder.clone(),
        sampler,
        weights: gen.snapshot(),
        config: config.clone(),
        log: log.clone(),
    };
    Ok((model, log))
}

impl LucidGan {
    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn sampler(&self) -> &ConditionSampler {
        &self.sampler
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("generator serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LucidGanError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Hash of everything that affects generation; the training log is left
    /// out so identical seeded runs share a fingerprint.
    pub fn fingerprint(&self) -> String {
        fingerprint::of_json(&(&self.encoder, &self.config, &self.sampler, &self.weights))
    }

    /// 5%, 50% and 95% quantiles of the predictions the generator was
    /// conditioned on during training.
    pub fn prediction_quantiles(&self) -> Vec<f64> {
        self.sampler.prediction_quantiles(&[0.05, 0.5, 0.95])
    }

    /// Soft generator output for explicit condition rows
    /// (`[prediction, mask...]`), one noise draw per row.
    pub fn generate_encoded<R: Rng + ?Sized>(
        &self,
        conditions: &Matrix<f64>,
        rng: &mut R,
    ) -> Result<Matrix<f64>, LucidGanError> {
        if conditions.cols() != self.sampler.condition_width() {
            return Err(LucidGanError::InvalidState("condition width".into()));
        }
        let noise = normal_matrix(conditions.rows(), self.config.generator.noise_dim, rng);
        let logits = self
            .weights
            .forward(&Matrix::concat_cols(&[&noise, conditions]))?;
        Ok(activate_plain(
            &logits,
            self.encoder.spans(),
            self.config.temperature,
            rng,
        ))
    }

    fn resolve_fixed(
        &self,
        fixed: &[(String, String)],
    ) -> Result<Vec<(usize, usize)>, LucidGanError> {
        let schema = self.encoder.schema();
        let mut out: Vec<(usize, usize)> = Vec::new();
        for (feature, category) in fixed {
            let (fi, ci) = schema
                .category(feature, category)
                .map_err(|e| LucidGanError::UnknownCategory(e.to_string()))?;
            let b = self.sampler.block_of(fi).ok_or_else(|| {
                LucidGanError::UnknownCategory(format!("`{feature}` is not categorical"))
            })?;
            if out.iter().any(|&(ob, _)| ob == b) {
                return Err(LucidGanError::Config(format!(
                    "feature `{feature}` fixed twice"
                )));
            }
            if self.sampler.support(b, ci) == 0 {
                return Err(LucidGanError::UnknownCategory(format!(
                    "`{feature}` = `{category}` never occurs in the training rows"
                )));
            }
            out.push((b, ci));
        }
        Ok(out)
    }

    /// Generate `request.n` decoded rows at the requested prediction.
    ///
    /// The first fixed category goes into the mask. Rows disagreeing with
    /// any further fixed category are redrawn up to a bounded number of
    /// times. Every fixed category is then written into the encoded row
    /// before decoding.
    pub fn generate(&self, request: &GenerationRequest) -> Result<CanonicalSet, LucidGanError> {
        if !(0.0..=1.0).contains(&request.target) {
            return Err(LucidGanError::Config(format!(
                "prediction target {} outside [0, 1]",
                request.target
            )));
        }
        let fixed = self.resolve_fixed(&request.fixed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
        let blocks = self.sampler.blocks();
        let pool = self.sampler.nearest_rows(request.target, 0.1);
        let n = request.n;

        let draw_conditions =
            |rng: &mut ChaCha8Rng, count: usize| -> (Matrix<f64>, Vec<Option<(usize, usize)>>) {
                let mut cond = Matrix::zeros(count, self.sampler.condition_width());
                let mut choices = Vec::with_capacity(count);
                for i in 0..count {
                    let (mask, choice) = match fixed.first() {
                        Some(&(b, c)) => (self.sampler.mask_for(b, c), Some((b, c))),
                        None => self.sampler.policy_mask(request.mask_policy, &pool, rng),
                    };
                    let row = cond.row_mut(i);
                    row[0] = request.target;
                    row[1..].copy_from_slice(&mask);
                    choices.push(choice);
                }
                (cond, choices)
            };
        let agrees = |row: &[f64], (b, c): (usize, usize)| {
            let block = &blocks[b];
            argmax(&row[block.start..block.start + block.width]) == c
        };

        let (cond, choices) = draw_conditions(&mut rng, n);
        let mut encoded = self.generate_encoded(&cond, &mut rng)?;
        let mut mask_hits = 0;
        let mut mask_total = 0;
        for (r, choice) in choices.iter().enumerate() {
            if let Some(ch) = *choice {
                mask_total += 1;
                mask_hits += usize::from(agrees(encoded.row(r), ch));
            }
        }
        let full_match = |row: &[f64]| fixed.iter().all(|&ch| agrees(row, ch));
        let first_pass = (0..n).filter(|&r| full_match(encoded.row(r))).count();
        if fixed.len() > 1 {
            for _ in 0..MAX_REDRAWS {
                let redo: Vec<usize> = (0..n).filter(|&r| !full_match(encoded.row(r))).collect();
                if redo.is_empty() {
                    break;
                }
                let (cond, _) = draw_conditions(&mut rng, redo.len());
                let fresh = self.generate_encoded(&cond, &mut rng)?;
                for (k, &r) in redo.iter().enumerate() {
                    encoded.row_mut(r).copy_from_slice(fresh.row(k));
                }
            }
        }
        for r in 0..n {
            let row = encoded.row_mut(r);
            for &(b, c) in &fixed {
                let block = &blocks[b];
                for (j, v) in row[block.start..block.start + block.width]
                    .iter_mut()
                    .enumerate()
                {
                    *v = if j == c { 1.0 } else { 0.0 };
                }
            }
        }
        let rows = self.encoder.inverse_transform_table(&encoded)?;

        let match_rate = if !fixed.is_empty() && n > 0 {
            Some(first_pass as f64 / n as f64)
        } else if mask_total > 0 {
            Some(mask_hits as f64 / mask_total as f64)
        } else {
            None
        };
        let fixed_map: BTreeMap<String, String> = request.fixed.iter().cloned().collect();
        let model_fingerprint = self.fingerprint();
        let run_id = fingerprint::of_json(&(
            &model_fingerprint,
            request.target.to_bits(),
            n,
            &fixed_map,
            request.mask_policy,
            request.seed,
        ))[..16]
            .to_string();
        Ok(CanonicalSet {
            rows,
            prediction_target: request.target,
            fixed: fixed_map,
            provenance: Provenance {
                method: "lucid-gan".into(),
                run_id,
                seed: request.seed,
                model_fingerprint,
            },
            condition_match_rate: match_rate,
        })
    }

    /// Argmax agreement between masks drawn by training-by-sampling and the
    /// generated blocks, before any enforcement, over `n` rows.
    pub fn condition_fidelity(&self, n: usize, seed: u64) -> Result<f64, LucidGanError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (cond, _, choices) = self.sampler.sample_batch(n, &mut rng);
        let encoded = self.generate_encoded(&cond, &mut rng)?;
        let blocks = self.sampler.blocks();
        let mut hits = 0;
        let mut total = 0;
        for (r, choice) in choices.iter().enumerate() {
            if let Some((b, c)) = *choice {
                let block = &blocks[b];
                total += 1;
                hits += usize::from(
                    argmax(&encoded.row(r)[block.start..block.start + block.width]) == c,
                );
            }
        }
        Ok(if total == 0 {
            1.0
        } else {
            hits as f64 / total as f64
        })
    }
}

/// Share of rows taking `category` in categorical `feature`.
pub fn category_rate(
    table: &RawTable,
    feature: &str,
    category: &str,
) -> Result<f64, LucidGanError> {
    let (fi, ci) = table
        .schema()
        .category(feature, category)
        .map_err(|e| LucidGanError::UnknownCategory(e.to_string()))?;
    if table.is_empty() {
        return Ok(0.0);
    }
    let hits = table
        .rows()
        .iter()
        .filter(|r| r[fi] == Value::Cat(ci as u32))
        .count();
    Ok(hits as f64 / table.len() as f64)
}
