#![no_main]

use libfuzzer_sys::fuzz_target;
use truvrf_core::datasets::idx::encode_idx_labels;
use truvrf_core::datasets::parse_idx_labels;

fuzz_target!(|data: &[u8]| {
    if let Ok(labels) = parse_idx_labels(data) {
        assert_eq!(encode_idx_labels(&labels), data);
    }
});
