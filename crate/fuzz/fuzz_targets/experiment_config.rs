#![no_main]

use calda::experiment::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ExperimentConfig::from_json(text) {
            let json = serde_json::to_string(&cfg).expect("config serializes");
            let back = ExperimentConfig::from_json(&json).expect("round trip");
            assert_eq!(back.fingerprint(), cfg.fingerprint());
        }
    }
});
