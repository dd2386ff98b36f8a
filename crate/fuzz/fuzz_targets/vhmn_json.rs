#![no_main]

use libfuzzer_sys::fuzz_target;
use pihedge_core::vhmn::{sample_path_seeded, VhmnModel};

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = VhmnModel::from_json(data) {
        let back = VhmnModel::from_json(model.to_json().as_bytes()).expect("round trip");
        assert_eq!(back, model);
        let dims = model.params.dims();
        let path = sample_path_seeded(&model.params, 8, 0, 0);
        assert!(path.hidden.iter().all(|&h| h < dims.hidden));
        assert!(path.observed.iter().all(|&o| o < dims.observed));
    }
});
