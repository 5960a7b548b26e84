#![no_main]

use calda::experiment::MethodSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = text.parse::<MethodSpec>() {
            assert_eq!(m.to_string().parse::<MethodSpec>().expect("canonical name parses"), m);
        }
    }
});
