//! Fixed (non-learnable) depthwise filtering with reflect padding, zero
//! insertion, and the fused upsample-then-filter used by the upsampling
//! layers.
//!
//! Every variant is driven by a [`ResamplePlan`]: per output row (column) the
//! list of `(kernel tap, source row (column))` pairs that contribute. Forward
//! evaluation gathers along those lists and the backward pass scatters along
//! the same lists, so the adjoint is exact including the reflected border.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// A constant 2D filter with odd side lengths, indexed from its top-left
/// corner; the center tap sits at `(rows / 2, cols / 2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel2d {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Kernel2d {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows % 2 == 0 || cols % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "filter sides must be odd, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "{rows}x{cols} filter needs {} taps, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn delta(size: usize) -> Result<Self> {
        let mut data = vec![0.0; size * size];
        if size % 2 == 1 {
            data[(size / 2) * size + size / 2] = 1.0;
        }
        Self::new(size, size, data)
    }

    /// Separable filter `column[i] * row[j]`.
    pub fn outer(column: &[f64], row: &[f64]) -> Result<Self> {
        let data = column
            .iter()
            .flat_map(|&a| row.iter().map(move |&b| a * b))
            .collect();
        Self::new(column.len(), row.len(), data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Tap at offset `(dy, dx)` from the center.
    pub fn at(&self, dy: isize, dx: isize) -> f64 {
        let r = dy + (self.rows / 2) as isize;
        let c = dx + (self.cols / 2) as isize;
        self.data[r as usize * self.cols + c as usize]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Mirror-reflects `i` into `0..n` without repeating the edge sample
/// (`-1 -> 1`, `n -> n - 2`), folding repeatedly for wide kernels.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

type TapList = Vec<Vec<(usize, usize)>>;

/// Gather lists for one axis: `out[o] = sum over (tap, src) of k[tap] * in[src]`.
fn axis_taps(in_len: usize, taps: usize, upsample: usize, stride: usize) -> (usize, TapList) {
    let expanded = in_len * upsample;
    let out_len = (expanded - 1) / stride + 1;
    let radius = (taps / 2) as isize;
    let lists = (0..out_len)
        .map(|o| {
            (0..taps)
                .filter_map(|t| {
                    let pos = (o * stride) as isize + t as isize - radius;
                    let p = reflect_index(pos, expanded);
                    (p % upsample == 0).then_some((t, p / upsample))
                })
                .collect()
        })
        .collect();
    (out_len, lists)
}

/// Precomputed gather/scatter tables for "zero-insert by `upsample`, filter
/// with reflect padding, keep every `stride`-th sample".
#[derive(Clone, Debug)]
pub struct ResamplePlan {
    kernel: Kernel2d,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    rows: TapList,
    cols: TapList,
}

impl ResamplePlan {
    pub fn new(
        kernel: &Kernel2d,
        in_h: usize,
        in_w: usize,
        upsample: usize,
        stride: usize,
    ) -> Result<Self> {
        if upsample == 0 || stride == 0 {
            return Err(Error::InvalidArgument(
                "upsampling factor and stride must be >= 1".into(),
            ));
        }
        if in_h == 0 || in_w == 0 {
            return Err(Error::InvalidArgument("cannot filter an empty plane".into()));
        }
        let (out_h, rows) = axis_taps(in_h, kernel.rows(), upsample, stride);
        let (out_w, cols) = axis_taps(in_w, kernel.cols(), upsample, stride);
        Ok(Self {
            kernel: kernel.clone(),
            in_h,
            in_w,
            out_h,
            out_w,
            rows,
            cols,
        })
    }

    pub fn output_size(&self) -> (usize, usize) {
        (self.out_h, self.out_w)
    }

    fn check_input(&self, shape: Shape) -> Result<()> {
        if shape.height != self.in_h || shape.width != self.in_w {
            return Err(Error::shape(
                "fixed filter",
                format!(
                    "plan built for {}x{} planes, got {shape}",
                    self.in_h, self.in_w
                ),
            ));
        }
        Ok(())
    }

    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        self.check_input(s)?;
        let k: Vec<T> = self.kernel.data().iter().map(|&v| T::from_f64_lossy(v)).collect();
        let kc = self.kernel.cols();
        let mut out = Tensor::zeros([s.batch, s.channels, self.out_h, self.out_w]);
        for b in 0..s.batch {
            for c in 0..s.channels {
                let src = x.plane(b, c);
                let dst = out.plane_mut(b, c);
                for (oy, row_taps) in self.rows.iter().enumerate() {
                    let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                    for &(ty, sy) in row_taps {
                        let krow = &k[ty * kc..(ty + 1) * kc];
                        let srow = &src[sy * self.in_w..(sy + 1) * self.in_w];
                        for (v, col_taps) in line.iter_mut().zip(&self.cols) {
                            let mut acc = T::zero();
                            for &(tx, sx) in col_taps {
                                acc += krow[tx] * srow[sx];
                            }
                            *v += acc;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Adjoint of [`ResamplePlan::forward`] applied to an output gradient.
    pub fn backward<T: Scalar>(&self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let s = grad_out.shape();
        if s.height != self.out_h || s.width != self.out_w {
            return Err(Error::shape(
                "fixed filter backward",
                format!("expected {}x{} gradient, got {s}", self.out_h, self.out_w),
            ));
        }
        let k: Vec<T> = self.kernel.data().iter().map(|&v| T::from_f64_lossy(v)).collect();
        let kc = self.kernel.cols();
        let mut grad_in = Tensor::zeros([s.batch, s.channels, self.in_h, self.in_w]);
        for b in 0..s.batch {
            for c in 0..s.channels {
                let g = grad_out.plane(b, c);
                let dst = grad_in.plane_mut(b, c);
                for (oy, row_taps) in self.rows.iter().enumerate() {
                    let line = &g[oy * self.out_w..(oy + 1) * self.out_w];
                    for &(ty, sy) in row_taps {
                        let krow = &k[ty * kc..(ty + 1) * kc];
                        let drow = &mut dst[sy * self.in_w..(sy + 1) * self.in_w];
                        for (&gv, col_taps) in line.iter().zip(&self.cols) {
                            for &(tx, sx) in col_taps {
                                drow[sx] += krow[tx] * gv;
                            }
                        }
                    }
                }
            }
        }
        Ok(grad_in)
    }
}

/// Depthwise correlation of every channel with `kernel` under reflect
/// padding, sampled every `stride` pixels.
pub fn fixed_filter_conv<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Kernel2d,
    stride: usize,
) -> Result<Tensor<T>> {
    let s = x.shape();
    ResamplePlan::new(kernel, s.height, s.width, 1, stride)?.forward(x)
}

/// "Bed of nails" expansion: `factor - 1` zeros between pixels along rows and
/// columns; input pixel `(y, x)` lands at `(factor * y, factor * x)`.
pub fn zero_insert<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::InvalidArgument("expansion factor must be >= 1".into()));
    }
    let s = x.shape();
    let mut out = Tensor::zeros([s.batch, s.channels, s.height * factor, s.width * factor]);
    for b in 0..s.batch {
        for c in 0..s.channels {
            for y in 0..s.height {
                for xx in 0..s.width {
                    out.set(b, c, y * factor, xx * factor, x.at(b, c, y, xx));
                }
            }
        }
    }
    Ok(out)
}
