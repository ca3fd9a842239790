//! Shared inputs for the benchmarks.

use std::path::PathBuf;

use convsdf::model::{parse_prototxt, ConvNetModel};

pub fn fixture(name: &str) -> ConvNetModel {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../fixtures/models/{name}.prototxt"));
    parse_prototxt(&std::fs::read_to_string(path).unwrap()).unwrap()
}
