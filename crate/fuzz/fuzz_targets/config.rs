#![no_main]

use libfuzzer_sys::fuzz_target;
use molevers::config::parse_run_config;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        let _ = parse_run_config(s);
    }
});
