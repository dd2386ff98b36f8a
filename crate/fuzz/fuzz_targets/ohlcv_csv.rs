#![no_main]

use libfuzzer_sys::fuzz_target;
use pihedge_core::market_data::{build_dataset, load_ohlcv_csv, CsvSchema};

fuzz_target!(|data: &[u8]| {
    for drop_first_slot in [true, false] {
        let schema = CsvSchema {
            drop_first_slot,
            ..CsvSchema::default()
        };
        if let Ok(episodes) = load_ohlcv_csv(data, &schema) {
            for e in &episodes {
                if let Ok(samples) = build_dataset(e) {
                    assert!(samples.iter().all(|s| s.d.is_finite() && s.g.is_finite()));
                }
            }
        }
    }
});
