use std::path::PathBuf;

use pflow_core::network::{parse_case, CaseFormat, NetworkCase};

pub fn case_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../cases")
}

pub fn load(name: &str) -> NetworkCase<f64> {
    let path = case_dir().join(name);
    let text = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()));
    let format = if name.ends_with(".csv") {
        CaseFormat::CsvPair
    } else {
        CaseFormat::Json
    };
    parse_case(&text, format).unwrap_or_else(|e| panic!("parsing {name}: {e}"))
}
