#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use ranai_core::harness::read_per_tick;

fuzz_target!(|data: &[u8]| {
    if let Ok(ticks) = read_per_tick(data, Path::new("fuzz.csv")) {
        for t in ticks {
            assert!((0.0..=1.0).contains(&t.reward));
        }
    }
});
