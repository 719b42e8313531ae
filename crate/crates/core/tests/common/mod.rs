#![allow(dead_code)]

pub mod gradcheck;
pub mod oracles;

pub use specdip::ops::Kernel2d;
pub use specdip::Tensor;

use std::path::PathBuf;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
        .join(name)
}
