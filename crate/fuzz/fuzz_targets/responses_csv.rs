#![no_main]

use libfuzzer_sys::fuzz_target;
use smoe::io::{parse_responses, LevelDictionary, VariableLevels};

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = parse_responses(data, "id", None, None) {
        for (row, codes) in t.codes.iter().enumerate() {
            assert_eq!(codes.len(), t.names.len(), "row {row}");
            for (q, &c) in codes.iter().enumerate() {
                assert!(c < t.levels.variables[q].levels.len());
            }
        }
    }
    // the same bytes against a fixed dictionary
    let dict = LevelDictionary {
        variables: ["a", "b"]
            .iter()
            .map(|n| VariableLevels {
                name: n.to_string(),
                levels: vec!["absent".into(), "aye".into(), "no".into()],
            })
            .collect(),
    };
    let cols = ["a".to_string(), "b".to_string()];
    if let Ok(t) = parse_responses(data, "id", Some(&cols), Some(&dict)) {
        assert!(t.codes.iter().flatten().all(|&c| c < 3));
    }
});
