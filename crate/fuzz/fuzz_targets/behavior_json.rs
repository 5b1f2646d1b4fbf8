#![no_main]

use libfuzzer_sys::fuzz_target;
use truvrf_core::adversary::ServerBehavior;

fuzz_target!(|data: &[u8]| {
    if let Ok(b) = serde_json::from_slice::<ServerBehavior>(data) {
        let _ = b.validate();
        let _ = b.name();
    }
});
