#![no_main]

use libfuzzer_sys::fuzz_target;
use molevers::chemio::{read_xyz, write_xyz};

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(m) = read_xyz(s) {
        let back = read_xyz(&write_xyz(&m, "")).expect("written XYZ reparses");
        assert_eq!(back.atoms(), m.atoms());
    }
});
