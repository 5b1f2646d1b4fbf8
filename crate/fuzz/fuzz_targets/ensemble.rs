#![no_main]

use libfuzzer_sys::fuzz_target;
use truvrf_core::unlearning::{decode_ensemble, encode_ensemble};

fuzz_target!(|data: &[u8]| {
    if let Ok(e) = decode_ensemble(data) {
        let again = decode_ensemble(&encode_ensemble(&e)).expect("re-encoded ensemble decodes");
        assert_eq!(again, e);
    }
});
