#![no_main]

use libfuzzer_sys::fuzz_target;
use pihedge_core::bdnn::Bdnn;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = Bdnn::from_json(data) {
        let back = Bdnn::from_json(model.to_json().as_bytes()).expect("round trip");
        assert_eq!(back.model, model.model);
        let p = model.predict(0.0);
        assert!(p.variance.is_nan() || p.variance >= model.sigma * model.sigma);
    }
});
