use fairgen_core::blackbox::{
    train_mlp, DifferentiableModel, InputEncoder, MlpArtifact, MlpClassifier, MlpTrainConfig,
    MLP_FORMAT_VERSION,
};
use fairgen_core::data::{load_adult, FeatureSpec, RawTable, TableSchema, Value};
use fairgen_core::lucid_baseline::{
    lucid_compare, lucid_generate, InverseDesignConfig, LucidError, Target,
};
use fairgen_core::metrics::{shared_bins, summarize};
use fairgen_tensor::nn::NamedTensor;

fn schema() -> TableSchema {
    TableSchema::new(
        vec![
            FeatureSpec::numeric("x"),
            FeatureSpec::categorical("c", ["a", "b", "c"]),
        ],
        "yes",
        None,
    )
    .unwrap()
}

fn table() -> RawTable {
    let rows = (0..60)
        .map(|i| vec![Value::Num(i as f64 / 6.0), Value::Cat(i % 3)])
        .collect();
    RawTable::new(schema(), rows, None).unwrap()
}

/// Logistic model: logit(positive) = w_x * z(x) + w_b * [c = b], no hidden layer.
fn linear(w_x: f64, w_b: f64) -> MlpClassifier {
    let encoder = InputEncoder::fit(&table()).unwrap();
    // Rows: x, c=a, c=b, c=c. Columns: negative, positive logit.
    let weight = vec![0.0, w_x, 0.0, 0.0, 0.0, w_b, 0.0, 0.0];
    let artifact = MlpArtifact {
        format_version: MLP_FORMAT_VERSION,
        input_fingerprint: encoder.fingerprint(),
        positive_label: "yes".into(),
        encoder,
        hidden: vec![],
        params: vec![
            NamedTensor {
                name: "layer0.weight".into(),
                rows: 4,
                cols: 2,
                data: weight,
            },
            NamedTensor {
                name: "layer0.bias".into(),
                rows: 1,
                cols: 2,
                data: vec![0.0, 0.0],
            },
        ],
        validation_accuracy: 0.0,
        search: vec![],
    };
    MlpClassifier::try_from(artifact).unwrap()
}

fn mean_x(t: &RawTable) -> f64 {
    let xs = t.numeric_column(0);
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn positive_weight_moves_inputs_up() {
    let model = linear(1.5, 0.0);
    let config = InverseDesignConfig {
        samples: 200,
        ..Default::default()
    };
    let run = lucid_generate(&model, &schema(), Target::Positive, &config).unwrap();
    assert!(mean_x(&run.canonical.rows) > mean_x(&run.initial));
    let neg = lucid_generate(&model, &schema(), Target::Negative, &config).unwrap();
    assert!(mean_x(&neg.canonical.rows) < mean_x(&neg.initial));
    assert_eq!(run.canonical.provenance.method, "lucid");
    assert_eq!(run.canonical.len(), 200);
}

#[test]
fn category_weight_shifts_mass_and_deltas_conserve() {
    let model = linear(0.0, 8.0);
    let config = InverseDesignConfig {
        samples: 300,
        ..Default::default()
    };
    let run = lucid_generate(&model, &schema(), Target::Positive, &config).unwrap();
    let cmp = lucid_compare(&run.canonical, &run.initial).unwrap();
    let c = cmp.deltas.iter().find(|d| d.feature == "c").unwrap();
    assert!(c.delta[1] > 0.3, "{:?}", c.delta);
    for d in &cmp.deltas {
        assert!(d.delta.iter().sum::<f64>().abs() < 1e-9);
    }
}

#[test]
fn identical_sets_have_zero_deltas() {
    let model = linear(1.0, 1.0);
    let run = lucid_generate(
        &model,
        &schema(),
        Target::Positive,
        &InverseDesignConfig::default(),
    )
    .unwrap();
    let mut same = run.canonical.clone();
    same.rows = run.initial.clone();
    let cmp = lucid_compare(&same, &run.initial).unwrap();
    assert!(cmp.deltas.iter().all(|d| d.delta.iter().all(|&v| v == 0.0)));
}

#[test]
fn converged_samples_meet_the_threshold() {
    let model = linear(6.0, 6.0);
    let config = InverseDesignConfig {
        samples: 100,
        threshold: 0.999,
        ..Default::default()
    };
    let run = lucid_generate(&model, &schema(), Target::Positive, &config).unwrap();
    assert!(run.converged > 0);
    let above = run
        .final_probability
        .iter()
        .filter(|&&p| p >= 0.999)
        .count();
    assert_eq!(above, run.converged);
}

#[test]
fn objective_never_increases() {
    let model = linear(0.7, -0.4);
    let config = InverseDesignConfig {
        samples: 50,
        step_size: 5.0,
        max_iterations: 200,
        ..Default::default()
    };
    let run = lucid_generate(&model, &schema(), Target::Positive, &config).unwrap();
    assert!(run.loss_trace.len() > 1);
    for w in run.loss_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn trained_model_weights_are_untouched() {
    let rows: Vec<Vec<Value>> = (0..400)
        .map(|i| vec![Value::Num((i % 40) as f64), Value::Cat(i % 3)])
        .collect();
    let labels = rows
        .iter()
        .map(|r| {
            if r[0].as_num().unwrap() > 20.0 {
                "yes"
            } else {
                "no"
            }
            .to_string()
        })
        .collect();
    let train = RawTable::new(schema(), rows, Some(labels)).unwrap();
    let config = MlpTrainConfig {
        depths: vec![1],
        widths: vec![8],
        max_epochs: 5,
        ..Default::default()
    };
    let model = train_mlp(&train, &config).unwrap();
    let before = (model.parameters(), model.to_json(), model.fingerprint());
    lucid_generate(
        &model,
        &schema(),
        Target::Negative,
        &InverseDesignConfig::default(),
    )
    .unwrap();
    let after = (model.parameters(), model.to_json(), model.fingerprint());
    assert_eq!(before, after);
}

#[test]
fn zero_samples_and_schema_checks() {
    let model = linear(1.0, 0.0);
    let config = InverseDesignConfig {
        samples: 0,
        ..Default::default()
    };
    let run = lucid_generate(&model, &schema(), Target::Positive, &config).unwrap();
    assert!(run.canonical.is_empty());
    assert_eq!(run.converged, 0);

    let other = TableSchema::new(vec![FeatureSpec::numeric("x")], "yes", None).unwrap();
    assert!(matches!(
        lucid_generate(
            &model,
            &other,
            Target::Positive,
            &InverseDesignConfig::default()
        ),
        Err(LucidError::SchemaMismatch(_))
    ));
}

/// On the Adult classifier the positive set leans male.
#[test]
fn adult_positive_set_skews_male() {
    let split = load_adult().unwrap();
    let model = train_mlp(&split.train, &MlpTrainConfig::default()).unwrap();
    let run = lucid_generate(
        &model,
        split.test.schema(),
        Target::Positive,
        &InverseDesignConfig::default(),
    )
    .unwrap();
    let bins = shared_bins(&[&run.canonical.rows, &run.initial]).unwrap();
    let canon = summarize(&run.canonical.rows, &bins).unwrap();
    let init = summarize(&run.initial, &bins).unwrap();
    let male = canon.frequency("sex", "Male").unwrap();
    assert!(
        male > init.frequency("sex", "Male").unwrap(),
        "male share {male}"
    );
    assert!(male > 0.5, "male share {male}");
}
