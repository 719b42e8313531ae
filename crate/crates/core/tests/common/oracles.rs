//! Independent reference implementations used to freeze expected values.
//! Written for clarity, not speed, and kept free of the library's kernels.

use super::{Kernel2d, Tensor};

/// Direct nested-loop cross-correlation with zero padding.
pub fn direct_conv2d(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    bias: Option<&Tensor<f64>>,
    stride: usize,
    padding: usize,
) -> Tensor<f64> {
    let [n, cin, h, wd] = x.shape().dims();
    let [cout, _, kh, kw] = w.shape().dims();
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (wd + 2 * padding - kw) / stride + 1;
    Tensor::from_fn([n, cout, oh, ow], |[b, o, oy, ox]| {
        let mut acc = bias.map_or(0.0, |t| t.data()[o]);
        for i in 0..cin {
            for ky in 0..kh {
                for kx in 0..kw {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    let ix = (ox * stride + kx) as isize - padding as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                        acc += w.at(o, i, ky, kx) * x.at(b, i, iy as usize, ix as usize);
                    }
                }
            }
        }
        acc
    })
}

fn mirror(i: isize, n: usize) -> usize {
    // Explicit repeated folding, independent of the library's closed form.
    if n == 1 {
        return 0;
    }
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n as isize {
            i = 2 * (n as isize - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Depthwise correlation with reflect padding evaluated tap by tap.
pub fn direct_reflect_filter(x: &Tensor<f64>, k: &Kernel2d, stride: usize) -> Tensor<f64> {
    let [n, c, h, w] = x.shape().dims();
    let oh = (h - 1) / stride + 1;
    let ow = (w - 1) / stride + 1;
    let ry = (k.rows() / 2) as isize;
    let rx = (k.cols() / 2) as isize;
    Tensor::from_fn([n, c, oh, ow], |[b, ch, oy, ox]| {
        let mut acc = 0.0;
        for dy in -ry..=ry {
            for dx in -rx..=rx {
                let sy = mirror((oy * stride) as isize + dy, h);
                let sx = mirror((ox * stride) as isize + dx, w);
                acc += k.at(dy, dx) * x.at(b, ch, sy, sx);
            }
        }
        acc
    })
}

/// O(N^4) DFT magnitudes of one plane, unnormalized, zero frequency at
/// index (0, 0) (no shift).
pub fn naive_dft_magnitude(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let phase = -2.0
                        * std::f64::consts::PI
                        * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                    re += plane[y * w + x] * phase.cos();
                    im += plane[y * w + x] * phase.sin();
                }
            }
            out[u * w + v] = (re * re + im * im).sqrt();
        }
    }
    out
}

/// Largest singular value of a row-major `rows x cols` matrix from the
/// eigenvalues of `M^T M`, computed by cyclic Jacobi rotations.
pub fn jacobi_spectral_norm(m: &[f64], rows: usize, cols: usize) -> f64 {
    let n = cols;
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = (0..rows).map(|r| m[r * cols + i] * m[r * cols + j]).sum();
        }
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        let diag: f64 = (0..n).map(|i| a[i * n + i] * a[i * n + i]).sum();
        if off <= 1e-30 * diag.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n)
        .map(|i| a[i * n + i])
        .fold(0.0f64, f64::max)
        .max(0.0)
        .sqrt()
}

/// Central finite-difference gradient of `f` with respect to every entry of
/// `x`.
pub fn finite_difference(x: &Tensor<f64>, h: f64, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let plus = f(&probe);
            probe.data_mut()[i] = orig - h;
            let minus = f(&probe);
            probe.data_mut()[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Elementwise relative error with denominator `max(|a|, |b|, 1e-8)`.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}
