//! Deep image prior restoration with spectral-bias measurement and control.
//!
//! An untrained convolutional generator is fitted to a single degraded image.
//! The crate provides the pieces needed to observe and steer what frequencies
//! the generator picks up over the course of optimization:
//!
//! - [`tensor`], [`autodiff`], [`ops`], [`optim`]: a small reverse-mode engine
//!   over rank-4 tensors with exactly the operations the generators need.
//! - [`net`]: Lipschitz-normalized convolutions, Gaussian-controlled
//!   upsampling and the Decoder / Encoder-Decoder / ConvNet builders.
//! - [`fbc`]: frequency-band correspondence between an output and its target.
//! - [`quality`], [`stopping`]: no-reference blur and sharpness, PSNR, and the
//!   blur/sharpness-ratio stopping monitor.
//! - [`degrade`], [`restore`]: degradation operators, task losses and the
//!   optimization driver.
//! - [`io`]: PNG images and CSV traces.

pub mod autodiff;
pub mod degrade;
pub mod error;
pub mod fbc;
pub mod fft;
pub mod io;
pub mod net;
pub mod ops;
pub mod optim;
pub mod quality;
pub mod restore;
pub mod rng;
pub mod spectral_norm;
pub mod stopping;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Scalar, Tensor};

#[cfg(test)]
use ops::Kernel2d;

#[cfg(test)]
#[path = "../tests/common/oracles.rs"]
#[allow(dead_code)]
pub(crate) mod oracles;
