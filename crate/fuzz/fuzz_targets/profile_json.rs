#![no_main]

use libfuzzer_sys::fuzz_target;
use truvrf_core::sensitivity::SensitivityProfile;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = serde_json::from_slice::<SensitivityProfile>(data) {
        let _ = p.check_comparable(&p);
        let _ = p.total();
    }
});
