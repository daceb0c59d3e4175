#![no_main]

use libfuzzer_sys::fuzz_target;
use molevers::chemio::load_property_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(t) = load_property_csv(s) {
            assert!(t.values.iter().all(|r| r.len() == t.n_targets()));
        }
    }
});
