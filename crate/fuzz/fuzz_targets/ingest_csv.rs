#![no_main]

use fairgen_core::data::{parse_csv, LoadOptions, UnknownPolicy};
use libfuzzer_sys::fuzz_target;

mod common;

fuzz_target!(|data: &[u8]| {
    let schema = common::schema();
    for unknown in [UnknownPolicy::Drop, UnknownPolicy::Reject] {
        let opts = LoadOptions { unknown, ..LoadOptions::default() };
        if let Ok((table, report)) = parse_csv(data, &schema, &opts) {
            assert_eq!(table.len() + report.dropped(), report.rows_read);
        }
    }
});
