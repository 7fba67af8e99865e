//! Test-time adaptation for hyperspectral classification under degradation.
//!
//! The crate is organised the way the pipeline runs:
//!
//! * [`hsi`]: cubes, label maps, normalization, patches, splits and file I/O;
//! * [`degrade`]: nine seeded degradation operators with replayable records;
//! * [`tensor`]: a small reverse-mode differentiation engine over `f64`;
//! * [`sstc`]: the spectral-spatial transformer classifier and its training;
//! * [`cela`]: confidence-filtered entropy minimization over LayerNorm affine
//!   parameters;
//! * [`bench`]: synthetic scenes, metrics, previews and the experiment runner.
//!
//! The `book/` directory at the repository root walks through each stage; its
//! code listings are compiled and run as doc-tests of this crate.

// `!(x > 0.0)` also rejects NaN, which `x <= 0.0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cela;
pub mod degrade;
pub mod error;
pub mod hsi;
pub mod rng;
pub mod sstc;
pub mod tensor;

#[cfg(doctest)]
mod book;

pub use error::{Error, Result};

pub(crate) fn hex(bytes: &[u8]) -> String {
    use std::fmt::Write;
    bytes
        .iter()
        .fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}
