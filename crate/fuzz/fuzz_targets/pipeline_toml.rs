#![no_main]

use libfuzzer_sys::fuzz_target;
use pihedge_cli::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = PipelineConfig::from_toml_str(text) {
            let rates = cfg.slot_rates();
            assert!(rates.rate.is_finite() && rates.sigma >= 0.0);
            let _ = cfg.hash();
        }
    }
});
