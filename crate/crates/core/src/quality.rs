//! No-reference blurriness and sharpness, and PSNR.
//!
//! Both no-reference metrics work on luminance. Blurriness follows the
//! re-blur comparison of Crete et al.; sharpness is the spread of
//! rank-weighted maximum local variations.

use crate::error::{Error, Result};
use crate::ops::filter::reflect_index;
use crate::tensor::{Scalar, Tensor};

pub const PSNR_CAP: f64 = 100.0;

/// Single-channel `h x w` plane in `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Luma {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Luma {
    fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// `0.299 R + 0.587 G + 0.114 B` for color images, a copy for grayscale.
pub fn luminance<T: Scalar>(image: &Tensor<T>) -> Result<Luma> {
    let s = image.shape();
    if s.batch != 1 {
        return Err(Error::shape("luminance", format!("expected one image, got {s}")));
    }
    let data = match s.channels {
        1 => image.plane(0, 0).iter().map(|v| v.to_f64_lossy()).collect(),
        3 => {
            let (r, g, b) = (image.plane(0, 0), image.plane(0, 1), image.plane(0, 2));
            (0..s.plane())
                .map(|i| 0.299 * r[i].to_f64_lossy() + 0.587 * g[i].to_f64_lossy() + 0.114 * b[i].to_f64_lossy())
                .collect()
        }
        c => {
            return Err(Error::shape(
                "luminance",
                format!("expected 1 or 3 channels, got {c}"),
            ))
        }
    };
    Ok(Luma {
        height: s.height,
        width: s.width,
        data,
    })
}

const BLUR_TAPS: isize = 9;

/// Blur estimate in `[0, 1]`; higher is blurrier. The image is re-blurred
/// with 9-tap box filters along each axis and the loss of neighbour
/// variation is compared with the original variation. Directions without
/// any variation are skipped, and a constant image returns 1.0.
pub fn blurriness<T: Scalar>(image: &Tensor<T>) -> Result<f64> {
    let f = luminance(image)?;
    let (h, w) = (f.height, f.width);
    let r = BLUR_TAPS / 2;
    let mut worst: Option<f64> = None;
    for vertical in [true, false] {
        let blurred = |y: usize, x: usize| {
            (-r..=r)
                .map(|d| {
                    if vertical {
                        f.at(reflect_index(y as isize + d, h), x)
                    } else {
                        f.at(y, reflect_index(x as isize + d, w))
                    }
                })
                .sum::<f64>()
                / BLUR_TAPS as f64
        };
        let (mut s_f, mut s_v) = (0.0, 0.0);
        let (y0, x0) = if vertical { (1, 0) } else { (0, 1) };
        for y in y0..h {
            for x in x0..w {
                let (py, px) = (y - y0, x - x0);
                let d_f = (f.at(y, x) - f.at(py, px)).abs();
                let d_b = (blurred(y, x) - blurred(py, px)).abs();
                s_f += d_f;
                s_v += (d_f - d_b).max(0.0);
            }
        }
        if s_f > 0.0 {
            let b = (s_f - s_v) / s_f;
            worst = Some(worst.map_or(b, |v: f64| v.max(b)));
        }
    }
    Ok(worst.unwrap_or(1.0))
}

/// Maximum absolute difference of each pixel to its (up to) 8 neighbours.
pub fn max_local_variation(f: &Luma) -> Vec<f64> {
    let (h, w) = (f.height as isize, f.width as isize);
    let mut out = Vec::with_capacity(f.data.len());
    for y in 0..h {
        for x in 0..w {
            let c = f.at(y as usize, x as usize);
            let mut m = 0.0f64;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if (dy, dx) != (0, 0) && (0..h).contains(&ny) && (0..w).contains(&nx) {
                        m = m.max((c - f.at(ny as usize, nx as usize)).abs());
                    }
                }
            }
            out.push(m);
        }
    }
    out
}

/// Percentile rank in `[0, 1]` of each value; ties share their mean rank.
fn percentile_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 / (n - 1) as f64;
        for &k in &order[i..=j] {
            ranks[k] = mean;
        }
        i = j + 1;
    }
    ranks
}

/// Sharpness `>= 0`; higher is sharper. Standard deviation of the maximum
/// local variations weighted by `exp(percentile rank)`.
pub fn sharpness<T: Scalar>(image: &Tensor<T>) -> Result<f64> {
    let mlv = max_local_variation(&luminance(image)?);
    let ranks = percentile_ranks(&mlv);
    let weighted: Vec<f64> = mlv.iter().zip(&ranks).map(|(v, r)| v * r.exp()).collect();
    let n = weighted.len() as f64;
    let mean = weighted.iter().sum::<f64>() / n;
    Ok((weighted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt())
}

/// `10 log10(1 / MSE)` over all channels and pixels, capped at
/// [`PSNR_CAP`] for identical images.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.expect_same_shape(b, "psnr")?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.to_f64_lossy() - y.to_f64_lossy()).powi(2))
        .sum::<f64>()
        / a.len().max(1) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}
