#![no_main]

use libfuzzer_sys::fuzz_target;
use smoe::sampler::{DrawStore, StoreBlocks, StoreManifest};

// Input: manifest JSON and the six block CSVs separated by 0xFF bytes.
fuzz_target!(|data: &[u8]| {
    let mut parts = data.split(|&b| b == 0xFF);
    let Some(head) = parts.next() else { return };
    let Ok(manifest) = serde_json::from_slice::<StoreManifest>(head) else {
        return;
    };
    let mut next = || parts.next().unwrap_or_default().to_vec();
    let blocks = StoreBlocks {
        loglik: next(),
        theta: next(),
        gamma: next(),
        beta: next(),
        tau2: next(),
        alloc: next(),
    };
    if let Ok(store) = DrawStore::from_parts(manifest, &blocks) {
        assert_eq!(store.len(), store.config.retained());
    }
});
