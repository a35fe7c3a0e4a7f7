mod common;

use fairgen_core::lucidgan::{
    gradient_penalty, train, CanonicalSet, CriticNet, CriticSpec, GenerationRequest, GeneratorSpec,
    LucidGan, LucidGanError, MaskPolicy, TrainConfig,
};
use fairgen_core::transforms::{Encoder, EncoderConfig};
use fairgen_tensor::nn::NamedTensor;
use fairgen_tensor::{Matrix, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 - 1.0)
}

fn linear_critic(weights: Vec<f64>, pac: usize, width: usize) -> CriticNet<f64> {
    let spec = CriticSpec {
        hidden: vec![],
        dropout: 0.0,
        pac,
        ..Default::default()
    };
    let mut critic = CriticNet::new(&spec, width, &mut ChaCha8Rng::seed_from_u64(0));
    critic
        .store
        .load_named(&[
            NamedTensor {
                name: "output.weight".into(),
                rows: pac * width,
                cols: 1,
                data: weights,
            },
            NamedTensor {
                name: "output.bias".into(),
                rows: 1,
                cols: 1,
                data: vec![0.3],
            },
        ])
        .unwrap();
    critic
}

fn penalty(critic: &CriticNet<f64>, real: &Matrix<f64>, fake: &Matrix<f64>) -> f64 {
    let tape = Tape::new();
    let bound = critic.store.bind(&tape, false);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = gradient_penalty(&tape, critic, &bound, real, fake, 10.0, false, &mut rng).unwrap();
    tape.scalar_value(p)
}

#[test]
fn penalty_vanishes_for_unit_norm_linear_critic() {
    let (pac, w) = (2, 3);
    let unit = vec![1.0 / ((pac * w) as f64).sqrt(); pac * w];
    let critic = linear_critic(unit, pac, w);
    let p = penalty(&critic, &random(8, w, 1), &random(8, w, 2));
    assert!(p.abs() < 1e-9, "{p}");
}

#[test]
fn penalty_is_lambda_for_constant_critic() {
    let (pac, w) = (2, 3);
    let critic = linear_critic(vec![0.0; pac * w], pac, w);
    let p = penalty(&critic, &random(8, w, 1), &random(8, w, 2));
    assert!((p - 10.0).abs() < 1e-4, "{p}");
}

#[test]
fn penalty_gradient_matches_finite_differences() {
    let (pac, w) = (2, 3);
    let spec = CriticSpec {
        hidden: vec![2],
        dropout: 0.0,
        pac,
        ..Default::default()
    };
    let mut critic = CriticNet::<f64>::new(&spec, w, &mut ChaCha8Rng::seed_from_u64(5));
    let (real, fake) = (random(6, w, 3), random(6, w, 4));

    let tape = Tape::new();
    let bound = critic.store.bind(&tape, true);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = gradient_penalty(&tape, &critic, &bound, &real, &fake, 10.0, false, &mut rng).unwrap();
    let analytic: Vec<f64> = tape
        .grad_values(p, bound.vars())
        .iter()
        .flat_map(|g| g.to_f64_vec())
        .collect();

    let base = critic.store.to_named();
    let h = 1e-6;
    let mut numeric = Vec::new();
    for t in 0..base.len() {
        for k in 0..base[t].data.len() {
            let mut at = |delta: f64| {
                let mut named = base.clone();
                named[t].data[k] += delta;
                critic.store.load_named(&named).unwrap();
                penalty(&critic, &real, &fake)
            };
            numeric.push((at(h) - at(-h)) / (2.0 * h));
        }
    }
    let diff: f64 = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    assert!(scale > 1e-6);
    assert!(diff / scale < 1e-3, "relative error {}", diff / scale);
}

#[test]
fn identical_pack_scores_identically() {
    let spec = CriticSpec {
        pac: 2,
        ..Default::default()
    };
    let critic = CriticNet::<f64>::new(&spec, 4, &mut ChaCha8Rng::seed_from_u64(2));
    let x = random(4, 4, 9);
    let score = || {
        let tape = Tape::new();
        let bound = critic.store.bind(&tape, false);
        let v = critic
            .forward::<ChaCha8Rng>(&tape, &bound, tape.constant(x.clone()), None)
            .unwrap();
        (*tape.value(v)).clone()
    };
    let (a, b) = (score(), score());
    assert_eq!(a, b);
    assert!(a.is_finite());
}

fn small_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        generator: GeneratorSpec {
            noise_dim: 16,
            hidden: vec![32, 32],
        },
        critic: CriticSpec {
            hidden: vec![32, 32],
            ..Default::default()
        },
        batch_size: 100,
        epochs,
        seed,
        ..Default::default()
    }
}

fn trained(n: usize, epochs: usize, seed: u64) -> LucidGan {
    let scored = common::planted_bias(n, 1);
    let encoder = Encoder::fit(scored.table(), &EncoderConfig::default(), 0).unwrap();
    train(&scored, &encoder, &small_config(epochs, seed))
        .unwrap()
        .0
}

#[test]
fn two_epoch_smoke_run() {
    let scored = common::planted_bias(200, 3);
    let encoder = Encoder::fit(scored.table(), &EncoderConfig::default(), 0).unwrap();
    let config = TrainConfig {
        epochs: 2,
        ..Default::default()
    };
    let (gan, log) = train(&scored, &encoder, &config).unwrap();
    assert_eq!(log.epochs.len(), 2);
    for e in &log.epochs {
        for v in [
            e.critic_loss,
            e.generator_loss,
            e.gradient_penalty,
            e.condition_loss,
        ] {
            assert!(v.is_finite());
        }
    }
    assert_eq!(gan.log().epochs.len(), 2);
}

#[test]
fn invalid_configuration_is_rejected() {
    let scored = common::planted_bias(50, 3);
    let encoder = Encoder::fit(scored.table(), &EncoderConfig::default(), 0).unwrap();
    let config = TrainConfig {
        batch_size: 55,
        ..Default::default()
    };
    assert!(matches!(
        train(&scored, &encoder, &config),
        Err(LucidGanError::Config(_))
    ));
}

#[test]
fn generation_contract() {
    let gan = trained(400, 3, 7);

    let empty = gan.generate(&GenerationRequest::new(1.0, 0, 1)).unwrap();
    assert!(empty.is_empty());
    assert_eq!(empty.provenance.method, "lucid-gan");
    assert_eq!(empty.provenance.model_fingerprint, gan.fingerprint());

    let fixed = gan
        .generate(&GenerationRequest::new(1.0, 300, 2).fixing("c", "b"))
        .unwrap();
    assert_eq!(fixed.len(), 300);
    let j = fixed.schema().index_of("c").unwrap();
    assert!(fixed.rows.categorical_column(j).iter().all(|&c| c == 1));
    assert!(fixed.condition_match_rate.is_some());

    let two = gan
        .generate(
            &GenerationRequest::new(0.0, 200, 3)
                .fixing("c", "d")
                .fixing("g", "1"),
        )
        .unwrap();
    let g = two.schema().index_of("g").unwrap();
    assert!(two.rows.categorical_column(g).iter().all(|&c| c == 1));
    assert!(two.rows.categorical_column(j).iter().all(|&c| c == 3));

    assert!(matches!(
        gan.generate(&GenerationRequest::new(1.0, 10, 1).fixing("c", "zz")),
        Err(LucidGanError::UnknownCategory(_))
    ));
    assert!(matches!(
        gan.generate(&GenerationRequest::new(1.0, 10, 1).fixing("x", "1")),
        Err(LucidGanError::UnknownCategory(_))
    ));
    assert!(gan.generate(&GenerationRequest::new(1.5, 10, 1)).is_err());

    for policy in [
        MaskPolicy::TargetMatched,
        MaskPolicy::TrainingSample,
        MaskPolicy::AllZero,
    ] {
        let req = GenerationRequest {
            mask_policy: policy,
            ..GenerationRequest::new(1.0, 50, 4)
        };
        assert_eq!(gan.generate(&req).unwrap().len(), 50);
    }
}

#[test]
fn artifact_round_trip_generates_identically() {
    let gan = trained(300, 2, 9);
    let back = LucidGan::from_json(&gan.to_json()).unwrap();
    let req = GenerationRequest::new(1.0, 100, 5);
    assert_eq!(gan.generate(&req).unwrap(), back.generate(&req).unwrap());

    let mut tampered: serde_json::Value = serde_json::from_str(&gan.to_json()).unwrap();
    tampered["format_version"] = serde_json::json!(99);
    assert!(LucidGan::from_json(&tampered.to_string()).is_err());
}

#[test]
fn canonical_set_survives_save_and_load() {
    let gan = trained(300, 2, 9);
    let set = gan
        .generate(&GenerationRequest::new(0.0, 40, 6).fixing("g", "0"))
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    set.save(dir.path(), "negative").unwrap();
    let back = CanonicalSet::load(dir.path(), "negative", set.schema()).unwrap();
    assert_eq!(back.fixed, set.fixed);
    assert_eq!(back.len(), 40);
    assert_eq!(back.provenance, set.provenance);
}

#[test]
fn seeded_training_is_reproducible() {
    let a = trained(400, 2, 13);
    let b = trained(400, 2, 13);
    let req = GenerationRequest::new(1.0, 200, 8);
    assert_eq!(a.generate(&req).unwrap(), b.generate(&req).unwrap());
}
