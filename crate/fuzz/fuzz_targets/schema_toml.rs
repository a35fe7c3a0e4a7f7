#![no_main]

use fairgen_core::data::TableSchema;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(schema) = TableSchema::from_toml(text) {
            let again = TableSchema::from_toml(&schema.to_toml()).expect("round trip");
            assert_eq!(again, schema);
        }
    }
});
