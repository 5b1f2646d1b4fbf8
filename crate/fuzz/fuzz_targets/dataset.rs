#![no_main]

use libfuzzer_sys::fuzz_target;
use truvrf_core::datasets::{decode_dataset, encode_dataset};

fuzz_target!(|data: &[u8]| {
    if let Ok(set) = decode_dataset(data) {
        let again = decode_dataset(&encode_dataset(&set)).expect("re-encoded dataset decodes");
        assert_eq!(again.samples(), set.samples());
    }
});
