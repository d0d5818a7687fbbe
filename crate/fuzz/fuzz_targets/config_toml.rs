#![no_main]

use libfuzzer_sys::fuzz_target;
use ranai_core::config::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = ExperimentConfig::from_toml_str(text) {
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml()).expect("echoed config must parse");
        assert_eq!(again.label(), cfg.label());
    }
});
