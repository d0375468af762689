#![no_main]

use libfuzzer_sys::fuzz_target;
use smoe::io::parse_truth;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = parse_truth(data) {
        assert_eq!(t.ids.len(), t.components.len());
        let _ = t.aligned(&t.ids);
        let _ = t.num_components();
    }
});
