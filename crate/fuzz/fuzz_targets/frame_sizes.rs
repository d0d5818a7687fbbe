#![no_main]

use libfuzzer_sys::fuzz_target;
use ranai_core::app::{FrameSizeTrace, SegmentationMode};

fuzz_target!(|data: &[u8]| {
    if let Ok(trace) = FrameSizeTrace::parse(data) {
        for m in SegmentationMode::ALL {
            let _ = trace.bytes(12_345, m);
        }
    }
});
