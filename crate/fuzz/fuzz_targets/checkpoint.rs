#![no_main]

use calda::checkpoint::{from_bytes, parse_entries, to_bytes};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_entries(data);
    if let Ok(params) = from_bytes(data) {
        let again = from_bytes(&to_bytes(&params)).expect("re-encoded checkpoint parses");
        assert_eq!(to_bytes(&again), to_bytes(&params));
    }
});
