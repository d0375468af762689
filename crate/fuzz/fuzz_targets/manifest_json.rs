#![no_main]

use libfuzzer_sys::fuzz_target;
use smoe::io::DataManifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = DataManifest::from_json(data) {
        assert!(m.smooth_covariates.iter().all(|c| !m.linear_covariates.contains(c)));
    }
});
