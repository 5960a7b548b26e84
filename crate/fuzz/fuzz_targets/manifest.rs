#![no_main]

use calda::data::parse_manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = parse_manifest(text) {
            let json = serde_json::to_string(&m).expect("manifest serializes");
            assert_eq!(parse_manifest(&json).expect("round trip"), m);
        }
    }
});
