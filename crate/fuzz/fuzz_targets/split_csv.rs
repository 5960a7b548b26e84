#![no_main]

use calda::data::{parse_split_csv, write_split_csv, Manifest, SignalLayout, WindowLen};
use libfuzzer_sys::fuzz_target;

fn manifest(window_len: WindowLen) -> Manifest {
    Manifest {
        name: "fuzz".into(),
        n_channels: 2,
        window_len,
        n_classes: 3,
        class_names: vec!["a".into(), "b".into(), "c".into()],
        domains: vec![0],
        layout: SignalLayout::Components,
    }
}

fuzz_target!(|data: &[u8]| {
    let Some((&selector, body)) = data.split_first() else {
        return;
    };
    let m = if selector % 2 == 0 {
        manifest(WindowLen::Fixed(3))
    } else {
        manifest(WindowLen::Variable)
    };
    if let Ok(windows) = parse_split_csv(body, &m, 0, "fuzz") {
        let text = write_split_csv(&windows, &m).expect("parsed windows fit the manifest");
        let back = parse_split_csv(text.as_bytes(), &m, 0, "fuzz").expect("written split parses");
        assert_eq!(back, windows);
    }
});
