//! Forward/backward kernels behind the autodiff graph.

pub mod conv;
pub mod filter;

pub use conv::{conv2d, ConvGeometry};
pub use filter::{fixed_filter_conv, reflect_index, zero_insert, Kernel2d, ResamplePlan};

use crate::tensor::{Scalar, Tensor};

/// Elementwise `max(x, slope * x)` for `0 <= slope <= 1`.
pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { v * slope })
}
