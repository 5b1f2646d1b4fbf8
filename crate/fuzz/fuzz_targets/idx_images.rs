#![no_main]

use libfuzzer_sys::fuzz_target;
use truvrf_core::datasets::parse_idx_images;

fuzz_target!(|data: &[u8]| {
    if let Ok(images) = parse_idx_images(data) {
        assert!(images.pixels.iter().all(|p| p.len() == images.rows * images.cols));
    }
});
