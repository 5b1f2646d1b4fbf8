#![no_main]

use libfuzzer_sys::fuzz_target;
use truvrf_core::harness::ScenarioConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ScenarioConfig::from_json(text) {
            let echoed = serde_json::to_string(&cfg).expect("config serializes");
            ScenarioConfig::from_json(&echoed).expect("echoed config validates");
        }
    }
});
