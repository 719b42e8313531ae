//! Degradations: additive noise, inpainting masks and Lanczos resampling.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::ops::filter::{fixed_filter_conv, reflect_index, Kernel2d};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

pub const LANCZOS_A: f64 = 3.0;

/// `x + e` with `e ~ N(0, (sigma_255 / 255)^2)` per element. Not clipped.
pub fn add_gaussian_noise<T: Scalar>(image: &Tensor<T>, sigma_255: f64, rng: &mut Rng) -> Tensor<T> {
    let std = sigma_255 / 255.0;
    if std == 0.0 {
        return image.clone();
    }
    image.map(|v| v + T::from_f64_lossy(rng.normal(0.0, std)))
}

/// `1 x 1 x h x w` mask; each pixel is dropped (0) with `drop_prob`.
pub fn bernoulli_mask<T: Scalar>(h: usize, w: usize, drop_prob: f64, rng: &mut Rng) -> Result<Tensor<T>> {
    if !(0.0..=1.0).contains(&drop_prob) {
        return Err(Error::InvalidArgument(format!(
            "drop probability must be in [0, 1], got {drop_prob}"
        )));
    }
    Ok(Tensor::from_fn([1, 1, h, w], |_| {
        if rng.bernoulli(drop_prob) {
            T::zero()
        } else {
            T::one()
        }
    }))
}

/// `1 x 1 x h x w` mask with a centered square hole of side
/// `round(sqrt(ratio * h * w))`, clipped to the image.
pub fn central_mask<T: Scalar>(h: usize, w: usize, ratio: f64) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!(
            "hole ratio must be in [0, 1), got {ratio}"
        )));
    }
    let side = (ratio * (h * w) as f64).sqrt().round() as usize;
    let (sh, sw) = (side.min(h), side.min(w));
    let (top, left) = ((h - sh) / 2, (w - sw) / 2);
    Ok(Tensor::from_fn([1, 1, h, w], |[_, _, y, x]| {
        if (top..top + sh).contains(&y) && (left..left + sw).contains(&x) {
            T::zero()
        } else {
            T::one()
        }
    }))
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// The Lanczos window `sinc(x) sinc(x / a)` for `|x| < a`, else 0.
pub fn lanczos(x: f64) -> f64 {
    if x != 0.0 && x.fract() == 0.0 {
        // Exact zero crossings, so integer-grid sampling is an identity.
        0.0
    } else if x.abs() < LANCZOS_A {
        sinc(x) * sinc(x / LANCZOS_A)
    } else {
        0.0
    }
}

/// Separable anti-aliasing kernel for decimation by `factor`: taps
/// `L(x / factor)` over the window's support, normalized to unit sum.
pub fn lanczos_kernel(factor: usize) -> Result<Kernel2d> {
    if factor == 0 {
        return Err(Error::InvalidArgument("factor must be >= 1".into()));
    }
    let r = (LANCZOS_A as isize) * factor as isize - 1;
    let taps: Vec<f64> = (-r..=r).map(|x| lanczos(x as f64 / factor as f64)).collect();
    let total: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / total).collect();
    Kernel2d::outer(&taps, &taps)
}

/// Lanczos anti-aliasing followed by taking every `factor`-th pixel.
pub fn lanczos_downsample<T: Scalar>(image: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let s = image.shape();
    if factor == 0 || s.height % factor != 0 || s.width % factor != 0 {
        return Err(Error::InvalidArgument(format!(
            "{}x{} is not divisible by {factor}",
            s.height, s.width
        )));
    }
    fixed_filter_conv(image, &lanczos_kernel(factor)?, factor)
}

/// Lanczos interpolation by `factor`: output pixel `y` samples the input at
/// `y / factor`, the grid convention of [`lanczos_downsample`]. Weights are
/// renormalized per output pixel and borders are mirrored.
pub fn lanczos_upsample<T: Scalar>(image: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::InvalidArgument("factor must be >= 1".into()));
    }
    let s = image.shape();
    let axis = |n_in: usize| -> Vec<Vec<(usize, f64)>> {
        (0..n_in * factor)
            .map(|o| {
                let pos = o as f64 / factor as f64;
                let base = pos.floor() as isize;
                let a = LANCZOS_A as isize;
                let taps: Vec<(usize, f64)> = (base - a + 1..=base + a)
                    .map(|i| (reflect_index(i, n_in), lanczos(pos - i as f64)))
                    .filter(|&(_, w)| w != 0.0)
                    .collect();
                let total: f64 = taps.iter().map(|t| t.1).sum();
                taps.into_iter().map(|(i, w)| (i, w / total)).collect()
            })
            .collect()
    };
    let (ty, tx) = (axis(s.height), axis(s.width));
    let (oh, ow) = (s.height * factor, s.width * factor);
    let mut out = Tensor::zeros([s.batch, s.channels, oh, ow]);
    let mut rows = vec![0.0f64; s.height * ow];
    for b in 0..s.batch {
        for c in 0..s.channels {
            let src = image.plane(b, c);
            for y in 0..s.height {
                for (x, taps) in tx.iter().enumerate() {
                    rows[y * ow + x] = taps.iter().map(|&(i, w)| w * src[y * s.width + i].to_f64_lossy()).sum();
                }
            }
            let dst = out.plane_mut(b, c);
            for (y, taps) in ty.iter().enumerate() {
                for x in 0..ow {
                    dst[y * ow + x] = T::from_f64_lossy(taps.iter().map(|&(i, w)| w * rows[i * ow + x]).sum());
                }
            }
        }
    }
    Ok(out)
}
