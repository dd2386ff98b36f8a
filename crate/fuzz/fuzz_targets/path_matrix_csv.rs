#![no_main]

use libfuzzer_sys::fuzz_target;
use pihedge_core::paths::{read_path_matrix, write_path_matrix};

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = read_path_matrix(data) {
        let width = rows.first().map_or(0, Vec::len);
        assert!(rows
            .iter()
            .all(|r| r.len() == width && r.iter().all(|v| v.is_finite())));
        let mut buf = Vec::new();
        write_path_matrix(&mut buf, &rows).unwrap();
        assert_eq!(read_path_matrix(buf.as_slice()).unwrap(), rows);
    }
});
