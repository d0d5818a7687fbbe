#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use ranai_core::harness::read_summary;

fuzz_target!(|data: &[u8]| {
    let _ = read_summary(data, Path::new("fuzz.csv"));
});
