#![no_main]

use libfuzzer_sys::fuzz_target;
use smoe::io::LevelDictionary;

fuzz_target!(|data: &[u8]| {
    if let Ok(d) = LevelDictionary::from_json(data) {
        assert!(d.variables.iter().all(|v| !v.levels.is_empty()));
    }
});
