#![no_main]

use fairgen_core::blackbox::parse_scored_csv;
use libfuzzer_sys::fuzz_target;

mod common;

fuzz_target!(|data: &[u8]| {
    if let Ok(scored) = parse_scored_csv(data, &common::schema()) {
        assert!(scored.predictions().iter().all(|p| (0.0..=1.0).contains(p)));
    }
});
