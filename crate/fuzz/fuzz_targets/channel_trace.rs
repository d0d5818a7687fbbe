#![no_main]

use libfuzzer_sys::fuzz_target;
use ranai_core::channel::ChannelTrace;

fuzz_target!(|data: &[u8]| {
    if let Ok(trace) = ChannelTrace::parse(data) {
        if trace.validate(80.0).is_ok() {
            let ids: Vec<u32> = trace.vehicles().collect();
            for v in ids {
                if let Some(pl) = trace.pathloss(v, 40.0) {
                    assert!(pl.is_finite());
                }
            }
        }
    }
});
