#![no_main]

use libfuzzer_sys::fuzz_target;
use truvrf_core::nnet::{decode_model, encode_model};

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = decode_model(data) {
        let again = decode_model(&encode_model(&model)).expect("re-encoded model decodes");
        assert!(again.same_params(&model));
    }
});
