#![no_main]

use libfuzzer_sys::fuzz_target;
use smoe::sampler::parse_block;

fuzz_target!(|data: &[u8]| {
    let columns: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    if let Ok(rows) = parse_block(data, "block", &columns, 4) {
        assert!(rows.iter().all(|(_, v)| v.len() == columns.len()));
    }
});
