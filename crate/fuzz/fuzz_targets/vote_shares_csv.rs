#![no_main]

use libfuzzer_sys::fuzz_target;
use smoe::io::{effective_parties, parse_vote_shares};

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = parse_vote_shares(data) {
        for w in &t.shares {
            let e = effective_parties(w).expect("validated shares");
            assert!(e >= 1.0 && e <= w.len() as f64);
        }
    }
});
