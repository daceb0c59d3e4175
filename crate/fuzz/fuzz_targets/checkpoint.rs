#![no_main]

use libfuzzer_sys::fuzz_target;
use molevers::training::{read_checkpoint, write_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = read_checkpoint(data) {
        let _ = ck.validate();
        let bytes = write_checkpoint(&ck);
        let again = read_checkpoint(&bytes).expect("written archive reparses");
        assert_eq!(write_checkpoint(&again), bytes);
    }
});
