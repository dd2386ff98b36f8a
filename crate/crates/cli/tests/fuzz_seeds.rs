//! Replays the checked-in fuzz corpus through the parsers so seeds stay valid
//! inputs and crashes found by fuzzing stay fixed.

use std::fs;
use std::path::PathBuf;

use pihedge_cli::PipelineConfig;
use pihedge_core::bdnn::Bdnn;
use pihedge_core::market_data::{load_ohlcv_csv, CsvSchema};
use pihedge_core::paths::read_path_matrix;
use pihedge_core::vhmn::VhmnModel;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            (
                path.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&path).unwrap(),
            )
        })
        .collect();
    out.sort();
    assert!(!out.is_empty());
    out
}

#[test]
fn ohlcv_seeds() {
    for (name, bytes) in seeds("ohlcv_csv") {
        let parsed = load_ohlcv_csv(bytes.as_slice(), &CsvSchema::default());
        assert_eq!(
            parsed.is_ok(),
            !name.starts_with("bad"),
            "{name}: {parsed:?}"
        );
    }
}

#[test]
fn model_seeds() {
    for (name, bytes) in seeds("bdnn_json") {
        Bdnn::from_json(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    for (name, bytes) in seeds("vhmn_json") {
        VhmnModel::from_json(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn config_and_matrix_seeds() {
    for (name, bytes) in seeds("pipeline_toml") {
        PipelineConfig::from_toml_str(std::str::from_utf8(&bytes).unwrap())
            .unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    for (name, bytes) in seeds("path_matrix_csv") {
        let parsed = read_path_matrix(bytes.as_slice());
        assert_eq!(parsed.is_ok(), name != "ragged.csv", "{name}");
    }
}
