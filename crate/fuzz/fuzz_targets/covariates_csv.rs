#![no_main]

use libfuzzer_sys::fuzz_target;
use smoe::io::parse_covariates;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = parse_covariates(data, "id") {
        for name in t.names.clone() {
            if let Ok(v) = t.numeric(&name) {
                assert!(v.iter().all(|x| x.is_finite()));
                assert_eq!(v.len(), t.ids.len());
            }
        }
        let order: Vec<String> = t.ids.iter().rev().cloned().collect();
        let rows = t.align(&order).unwrap();
        assert_eq!(t.select(&rows).ids, order);
    }
});
