#![no_main]

use libfuzzer_sys::fuzz_target;
use truvrf_core::unlearning::Trained;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = Trained::decode(data) {
        assert_eq!(Trained::decode(&t.encode()).expect("re-encoded model decodes"), t);
    }
});
