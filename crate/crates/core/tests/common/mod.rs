#![allow(dead_code)]

use fairgen_core::blackbox::ScoredTable;
use fairgen_core::data::{FeatureSpec, RawTable, TableSchema, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Binary `g`, a four-way nuisance category and a numeric that shifts with
/// `g`; the prediction is `sigmoid(4 * (2g - 1))`.
pub fn planted_bias(n: usize, seed: u64) -> ScoredTable {
    let schema = TableSchema::new(
        vec![
            FeatureSpec::categorical("g", ["0", "1"]).protected(),
            FeatureSpec::categorical("c", ["a", "b", "c", "d"]),
            FeatureSpec::numeric("x"),
        ],
        "1",
        None,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut preds = Vec::with_capacity(n);
    for _ in 0..n {
        let g: u32 = rng.random_range(0..2);
        let x = rng.random::<f64>() * 10.0 + 5.0 * g as f64;
        rows.push(vec![
            Value::Cat(g),
            Value::Cat(rng.random_range(0..4)),
            Value::Num(x),
        ]);
        preds.push(sigmoid(4.0 * (2.0 * g as f64 - 1.0)));
    }
    ScoredTable::new(RawTable::new(schema, rows, None).unwrap(), preds).unwrap()
}

/// Withheld `g`; model input `z` copies `g` with 10% of rows flipped and
/// drives the prediction. Returns the rows and a schema withholding `g`.
pub fn planted_proxy(n: usize, seed: u64) -> (ScoredTable, TableSchema) {
    let schema = TableSchema::new(
        vec![
            FeatureSpec::categorical("g", ["0", "1"]).protected(),
            FeatureSpec::categorical("z", ["0", "1"]),
            FeatureSpec::numeric("x"),
        ],
        "1",
        None,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut preds = Vec::with_capacity(n);
    for _ in 0..n {
        let g: u32 = rng.random_range(0..2);
        let z = if rng.random::<f64>() < 0.1 { 1 - g } else { g };
        let x: f64 = rng.random::<f64>() * 4.0;
        rows.push(vec![Value::Cat(g), Value::Cat(z), Value::Num(x)]);
        preds.push(sigmoid(4.0 * (2.0 * z as f64 - 1.0)));
    }
    let withheld = schema.withholding(&["g"]).unwrap();
    (
        ScoredTable::new(RawTable::new(schema, rows, None).unwrap(), preds).unwrap(),
        withheld,
    )
}
