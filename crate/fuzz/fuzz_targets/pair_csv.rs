#![no_main]

use libfuzzer_sys::fuzz_target;
use molevers::chemio::{load_pair_csv, serialize_pair_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(recs) = load_pair_csv(s) {
        assert_eq!(load_pair_csv(&serialize_pair_csv(&recs)).unwrap(), recs);
    }
});
