//! Dense 2D convolution (cross-correlation) via im2col and GEMM.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Sizes resolved from an input shape, a weight shape and stride/padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: Shape, weight: Shape, stride: usize, padding: usize) -> Result<Self> {
        let [out_c, in_c, kh, kw] = weight.dims();
        if input.channels != in_c {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "input has {} channels but weight {weight} expects {in_c}",
                    input.channels
                ),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} must have odd sides"),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        let padded_h = input.height + 2 * padding;
        let padded_w = input.width + 2 * padding;
        if padded_h < kh || padded_w < kw {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "{}x{} input with padding {padding} is smaller than the {kh}x{kw} kernel",
                    input.height, input.width
                ),
            ));
        }
        Ok(Self {
            batch: input.batch,
            in_channels: in_c,
            out_channels: out_c,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            in_h: input.height,
            in_w: input.width,
            out_h: (padded_h - kh) / stride + 1,
            out_w: (padded_w - kw) / stride + 1,
        })
    }

    pub fn output_shape(&self) -> Shape {
        Shape::new(self.batch, self.out_channels, self.out_h, self.out_w)
    }

    /// Rows of the unfolded input matrix (`in_channels * kh * kw`).
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    /// A 1x1, stride-1, unpadded convolution reads the input as its own
    /// unfolded matrix.
    pub fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.padding == 0
    }

    fn src(&self, out: usize, tap: usize, len: usize) -> Option<usize> {
        let pos = (out * self.stride + tap) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
    }
}

/// Unfolds one batch item (`in_channels * in_h * in_w` values) into a
/// `patch_len x out_plane` matrix.
pub fn im2col<T: Scalar>(input: &[T], g: &ConvGeometry, cols: &mut [T]) {
    let plane = g.in_h * g.in_w;
    let opl = g.out_plane();
    let mut row = 0;
    for c in 0..g.in_channels {
        let src = &input[c * plane..(c + 1) * plane];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let dst = &mut cols[row * opl..(row + 1) * opl];
                for oy in 0..g.out_h {
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    match g.src(oy, ky, g.in_h) {
                        None => line.iter_mut().for_each(|v| *v = T::zero()),
                        Some(iy) => {
                            let srow = &src[iy * g.in_w..(iy + 1) * g.in_w];
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = match g.src(ox, kx, g.in_w) {
                                    Some(ix) => srow[ix],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates a `patch_len x out_plane` matrix back
/// onto one batch item.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry, out: &mut [T]) {
    let plane = g.in_h * g.in_w;
    let opl = g.out_plane();
    let mut row = 0;
    for c in 0..g.in_channels {
        let dst = &mut out[c * plane..(c + 1) * plane];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let src = &cols[row * opl..(row + 1) * opl];
                for oy in 0..g.out_h {
                    let Some(iy) = g.src(oy, ky, g.in_h) else {
                        continue;
                    };
                    let line = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    let drow = &mut dst[iy * g.in_w..(iy + 1) * g.in_w];
                    for (ox, &v) in line.iter().enumerate() {
                        if let Some(ix) = g.src(ox, kx, g.in_w) {
                            drow[ix] += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Forward pass. Returns the output and the unfolded input of every batch
/// item (empty for pointwise convolutions) for reuse in the backward pass.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Vec<T>, ConvGeometry)> {
    let g = ConvGeometry::new(input.shape(), weight.shape(), stride, padding)?;
    if let Some(b) = bias {
        if b.len() != g.out_channels {
            return Err(Error::shape(
                "conv2d",
                format!("bias has {} entries for {} channels", b.len(), g.out_channels),
            ));
        }
    }
    let in_item = g.in_channels * g.in_h * g.in_w;
    let out_item = g.out_channels * g.out_plane();
    let col_item = g.patch_len() * g.out_plane();
    let mut out = Tensor::zeros(g.output_shape());
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); col_item * g.batch]
    };
    for b in 0..g.batch {
        let x = &input.data()[b * in_item..(b + 1) * in_item];
        let unfolded: &[T] = if g.is_pointwise() {
            x
        } else {
            let dst = &mut cols[b * col_item..(b + 1) * col_item];
            im2col(x, &g, dst);
            dst
        };
        let y = &mut out.data_mut()[b * out_item..(b + 1) * out_item];
        if let Some(bias) = bias {
            for (c, chunk) in y.chunks_mut(g.out_plane()).enumerate() {
                chunk.fill(bias.data()[c]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(
            false,
            false,
            g.out_channels,
            g.patch_len(),
            g.out_plane(),
            T::one(),
            weight.data(),
            unfolded,
            beta,
            y,
        );
    }
    Ok((out, cols, g))
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    cols: &[T],
    g: &ConvGeometry,
) -> ConvGrads<T> {
    let in_item = g.in_channels * g.in_h * g.in_w;
    let out_item = g.out_channels * g.out_plane();
    let col_item = g.patch_len() * g.out_plane();
    let mut d_input = Tensor::zeros(input.shape());
    let mut d_weight = Tensor::zeros(weight.shape());
    let mut d_bias = Tensor::zeros([1, g.out_channels, 1, 1]);
    let mut d_cols = vec![T::zero(); if g.is_pointwise() { 0 } else { col_item }];
    for b in 0..g.batch {
        let gy = &grad_out.data()[b * out_item..(b + 1) * out_item];
        for (c, chunk) in gy.chunks(g.out_plane()).enumerate() {
            d_bias.data_mut()[c] += chunk.iter().copied().sum();
        }
        let unfolded = if g.is_pointwise() {
            &input.data()[b * in_item..(b + 1) * in_item]
        } else {
            &cols[b * col_item..(b + 1) * col_item]
        };
        // dW += dY * cols^T
        T::gemm(
            false,
            true,
            g.out_channels,
            g.out_plane(),
            g.patch_len(),
            T::one(),
            gy,
            unfolded,
            T::one(),
            d_weight.data_mut(),
        );
        let dx = &mut d_input.data_mut()[b * in_item..(b + 1) * in_item];
        if g.is_pointwise() {
            T::gemm(
                true,
                false,
                g.patch_len(),
                g.out_channels,
                g.out_plane(),
                T::one(),
                weight.data(),
                gy,
                T::zero(),
                dx,
            );
        } else {
            // dcols = W^T * dY, folded back onto the input.
            T::gemm(
                true,
                false,
                g.patch_len(),
                g.out_channels,
                g.out_plane(),
                T::one(),
                weight.data(),
                gy,
                T::zero(),
                &mut d_cols,
            );
            col2im(&d_cols, g, dx);
        }
    }
    ConvGrads {
        input: d_input,
        weight: d_weight,
        bias: d_bias,
    }
}

/// Convolution without gradient bookkeeping.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    conv2d_forward(input, weight, bias, stride, padding).map(|(out, _, _)| out)
}
