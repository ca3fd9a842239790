#![allow(dead_code)]

use std::path::PathBuf;

use convsdf::model::{parse_native, parse_prototxt, ConvNetModel};

pub const FIXTURES: [&str; 9] = [
    "conv1",
    "chain4",
    "small_chain",
    "lenet",
    "inception",
    "resnet",
    "densenet",
    "alexnet",
    "vgg16",
];

/// Fixtures small enough to simulate token by token.
pub const SMALL_FIXTURES: [&str; 7] = ["conv1", "chain4", "small_chain", "lenet", "inception", "resnet", "densenet"];

pub fn fixture_path(name: &str, ext: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures/models")
        .join(format!("{name}.{ext}"))
}

pub fn fixture(name: &str) -> ConvNetModel {
    let text = std::fs::read_to_string(fixture_path(name, "prototxt")).unwrap();
    parse_prototxt(&text).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn fixture_twin(name: &str) -> ConvNetModel {
    let text = std::fs::read_to_string(fixture_path(name, "json")).unwrap();
    parse_native(&text).unwrap_or_else(|e| panic!("{name}: {e}"))
}
