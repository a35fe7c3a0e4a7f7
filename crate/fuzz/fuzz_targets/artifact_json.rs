#![no_main]

use fairgen_core::blackbox::MlpClassifier;
use fairgen_core::lucidgan::LucidGan;
use fairgen_core::transforms::Encoder;
use libfuzzer_sys::fuzz_target;

// The first byte picks the artifact kind.
fuzz_target!(|data: &[u8]| {
    let Some((&kind, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    match kind % 3 {
        0 => drop(MlpClassifier::from_json(text)),
        1 => drop(Encoder::from_json(text)),
        _ => drop(LucidGan::from_json(text)),
    }
});
