#![no_main]

use libfuzzer_sys::fuzz_target;
use truvrf_core::datasets::UnlearnRequest;

fuzz_target!(|data: &[u8]| {
    if let Ok(r) = serde_json::from_slice::<UnlearnRequest>(data) {
        let echoed = serde_json::to_string(&r).expect("request serializes");
        assert_eq!(serde_json::from_str::<UnlearnRequest>(&echoed).expect("echo parses"), r);
    }
});
