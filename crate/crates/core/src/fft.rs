//! 2D discrete Fourier transforms of image planes.
//!
//! Arbitrary sizes are transformed directly (rustfft picks mixed-radix or
//! Bluestein plans), so no padding is ever applied before spectral analysis.
//! The forward transform is unnormalized: the DC bin of a constant image `c`
//! is `c * H * W`.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn transform(data: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for row in data.chunks_mut(w) {
        row_fft.process(row);
    }
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = data[y * w + x];
        }
        col_fft.process(&mut column);
        for y in 0..h {
            data[y * w + x] = column[y];
        }
    }
}

/// Unnormalized forward 2D DFT of a row-major `h x w` real plane.
pub fn fft2(plane: &[f64], h: usize, w: usize) -> Vec<Complex<f64>> {
    let mut data: Vec<Complex<f64>> = plane.iter().map(|&v| Complex::new(v, 0.0)).collect();
    transform(&mut data, h, w, false);
    data
}

/// Inverse 2D DFT including the `1 / (h * w)` factor.
pub fn ifft2(spectrum: &[Complex<f64>], h: usize, w: usize) -> Vec<Complex<f64>> {
    let mut data = spectrum.to_vec();
    transform(&mut data, h, w, true);
    let norm = 1.0 / (h * w) as f64;
    data.iter_mut().for_each(|v| *v *= norm);
    data
}

/// Moves the zero-frequency bin from `(0, 0)` to `(h / 2, w / 2)`.
pub fn fftshift<V: Copy>(plane: &[V], h: usize, w: usize) -> Vec<V> {
    let (sy, sx) = (h / 2, w / 2);
    let mut out = plane.to_vec();
    for y in 0..h {
        for x in 0..w {
            out[((y + sy) % h) * w + (x + sx) % w] = plane[y * w + x];
        }
    }
    out
}

/// Inverse of [`fftshift`].
pub fn ifftshift<V: Copy>(plane: &[V], h: usize, w: usize) -> Vec<V> {
    let (sy, sx) = (h / 2, w / 2);
    let mut out = plane.to_vec();
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = plane[((y + sy) % h) * w + (x + sx) % w];
        }
    }
    out
}

/// Center-shifted magnitude spectra, one per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct MagnitudeSpectrum {
    pub height: usize,
    pub width: usize,
    pub channels: Vec<Vec<f64>>,
}

impl MagnitudeSpectrum {
    pub fn max(&self) -> f64 {
        self.channels
            .iter()
            .flatten()
            .copied()
            .fold(0.0, f64::max)
    }
}

/// `|F{x}|` per channel of a single image, zero frequency at the center.
pub fn fft2_magnitude<T: Scalar>(image: &Tensor<T>) -> Result<MagnitudeSpectrum> {
    let s = image.shape();
    if s.batch != 1 || s.height == 0 || s.width == 0 {
        return Err(Error::shape(
            "fft2_magnitude",
            format!("expected one non-empty image, got {s}"),
        ));
    }
    let channels = (0..s.channels)
        .map(|c| {
            let plane: Vec<f64> = image.plane(0, c).iter().map(|v| v.to_f64_lossy()).collect();
            let mags: Vec<f64> = fft2(&plane, s.height, s.width).iter().map(|z| z.norm()).collect();
            fftshift(&mags, s.height, s.width)
        })
        .collect();
    Ok(MagnitudeSpectrum {
        height: s.height,
        width: s.width,
        channels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::naive_dft_magnitude;
    use crate::Rng;

    #[test]
    fn constant_image_has_only_dc() {
        let c = 0.3;
        let img = Tensor::<f64>::full([1, 1, 8, 8], c);
        let spec = fft2_magnitude(&img).unwrap();
        for (i, &m) in spec.channels[0].iter().enumerate() {
            if i == 4 * 8 + 4 {
                assert!((m - 64.0 * c).abs() < 1e-9);
            } else {
                assert!(m.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut img = Tensor::<f64>::zeros([1, 1, 8, 8]);
        img.set(0, 0, 0, 0, 1.0);
        let spec = fft2_magnitude(&img).unwrap();
        assert!(spec.channels[0].iter().all(|m| (m - 1.0).abs() < 1e-12));
    }

    #[test]
    fn matches_naive_dft_on_odd_and_even_sizes() {
        let mut rng = Rng::new(17);
        for (h, w) in [(8, 8), (6, 10), (7, 5)] {
            let img = Tensor::<f64>::from_fn([1, 1, h, w], |_| rng.uniform(0.0, 1.0));
            let got = fft2_magnitude(&img).unwrap();
            let want = fftshift(&naive_dft_magnitude(img.data(), h, w), h, w);
            for (a, b) in got.channels[0].iter().zip(&want) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-9), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn parseval() {
        let mut rng = Rng::new(18);
        let (h, w) = (12, 9);
        let plane: Vec<f64> = (0..h * w).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let spec = fft2(&plane, h, w);
        let lhs: f64 = spec.iter().map(|z| z.norm_sqr()).sum();
        let rhs: f64 = (h * w) as f64 * plane.iter().map(|v| v * v).sum::<f64>();
        assert!((lhs - rhs).abs() <= 1e-9 * rhs);
    }

    #[test]
    fn inverse_round_trip_and_shift_inverse() {
        let mut rng = Rng::new(19);
        let (h, w) = (5, 6);
        let plane: Vec<f64> = (0..h * w).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let back = ifft2(&fft2(&plane, h, w), h, w);
        for (a, b) in back.iter().zip(&plane) {
            assert!((a.re - b).abs() < 1e-12 && a.im.abs() < 1e-12);
        }
        assert_eq!(ifftshift(&fftshift(&plane, h, w), h, w), plane);
    }
}
