//! Frequency-band correspondence: the ratio of output to target Fourier
//! magnitudes, averaged inside concentric bands of the centered spectrum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{fft2_magnitude, MagnitudeSpectrum};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_BANDS: usize = 5;

/// Target bins below `DEFAULT_EPS_REL * max|F{target}|` are left out of the
/// band means.
pub const DEFAULT_EPS_REL: f64 = 1e-8;

/// Radial band label of every bin of a center-shifted `height x width` grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BandPartition {
    height: usize,
    width: usize,
    bands: usize,
    labels: Vec<usize>,
    counts: Vec<usize>,
}

impl BandPartition {
    /// Bins at distance `rho` from the center bin `(h / 2, w / 2)` go to band
    /// `min(N, floor(rho / (R / N)) + 1)`, where `R` is the largest distance
    /// on the grid. Labels are 1-based.
    pub fn new(height: usize, width: usize, bands: usize) -> Result<Self> {
        if bands == 0 || height * width < bands {
            return Err(Error::InvalidArgument(format!(
                "cannot split a {height}x{width} grid into {bands} bands"
            )));
        }
        let (cy, cx) = ((height / 2) as f64, (width / 2) as f64);
        let radius = |y: usize, x: usize| (y as f64 - cy).hypot(x as f64 - cx);
        let r_max = [(0, 0), (0, width - 1), (height - 1, 0), (height - 1, width - 1)]
            .iter()
            .map(|&(y, x)| radius(y, x))
            .fold(0.0, f64::max);
        let step = r_max / bands as f64;
        let mut counts = vec![0; bands];
        let labels = (0..height * width)
            .map(|i| {
                let rho = radius(i / width, i % width);
                let band = if step > 0.0 {
                    ((rho / step).floor() as usize + 1).min(bands)
                } else {
                    1
                };
                counts[band - 1] += 1;
                band
            })
            .collect();
        Ok(Self {
            height,
            width,
            bands,
            labels,
            counts,
        })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// 1-based band of the shifted bin `(y, x)`.
    pub fn band_of(&self, y: usize, x: usize) -> usize {
        self.labels[y * self.width + x]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }
}

/// Mean correspondence per band at one optimization step. `None` marks a
/// band whose every bin was excluded by the ratio guard.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FbcBands {
    pub values: Vec<Option<f64>>,
    pub step: usize,
}

impl FbcBands {
    /// Value of the 1-based `band`, if defined.
    pub fn band(&self, band: usize) -> Option<f64> {
        self.values.get(band.checked_sub(1)?).copied().flatten()
    }
}

/// Target spectrum and partition, computed once and reused for every step.
#[derive(Clone, Debug)]
pub struct FbcReference {
    spectrum: MagnitudeSpectrum,
    threshold: f64,
    partition: BandPartition,
}

impl FbcReference {
    pub fn new<T: Scalar>(target: &Tensor<T>, bands: usize, eps_rel: f64) -> Result<Self> {
        let s = target.shape();
        let partition = BandPartition::new(s.height, s.width, bands)?;
        Self::with_partition(target, partition, eps_rel)
    }

    pub fn with_partition<T: Scalar>(target: &Tensor<T>, partition: BandPartition, eps_rel: f64) -> Result<Self> {
        let spectrum = fft2_magnitude(target)?;
        if partition.dims() != (spectrum.height, spectrum.width) {
            return Err(Error::shape(
                "fbc",
                format!(
                    "partition is {:?} but target is {}x{}",
                    partition.dims(),
                    spectrum.height,
                    spectrum.width
                ),
            ));
        }
        let max = spectrum.max();
        if max == 0.0 {
            return Err(Error::InvalidArgument("FBC target is identically zero".into()));
        }
        Ok(Self {
            threshold: eps_rel * max,
            spectrum,
            partition,
        })
    }

    pub fn partition(&self) -> &BandPartition {
        &self.partition
    }

    /// Number of target bins excluded by the ratio guard, over all channels.
    pub fn excluded_bins(&self) -> usize {
        self.spectrum
            .channels
            .iter()
            .flatten()
            .filter(|&&m| m < self.threshold)
            .count()
    }

    /// Per-channel ratio maps are averaged over the channels where the
    /// target bin passes the guard, then averaged inside each band.
    pub fn measure<T: Scalar>(&self, output: &Tensor<T>, step: usize) -> Result<FbcBands> {
        let out = fft2_magnitude(output)?;
        if out.height != self.spectrum.height
            || out.width != self.spectrum.width
            || out.channels.len() != self.spectrum.channels.len()
        {
            return Err(Error::shape(
                "fbc",
                format!(
                    "output is {}x{}x{} but target is {}x{}x{}",
                    out.channels.len(),
                    out.height,
                    out.width,
                    self.spectrum.channels.len(),
                    self.spectrum.height,
                    self.spectrum.width
                ),
            ));
        }
        let n = self.partition.bands();
        let mut sums = vec![0.0; n];
        let mut counts = vec![0usize; n];
        for (bin, &band) in self.partition.labels().iter().enumerate() {
            let (mut acc, mut used) = (0.0, 0usize);
            for (o, t) in out.channels.iter().zip(&self.spectrum.channels) {
                if t[bin] >= self.threshold {
                    acc += o[bin] / t[bin];
                    used += 1;
                }
            }
            if used > 0 {
                sums[band - 1] += acc / used as f64;
                counts[band - 1] += 1;
            }
        }
        let values = sums
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
            .collect();
        Ok(FbcBands { values, step })
    }
}

/// One-shot FBC of `output` against `target`.
pub fn fbc<T: Scalar>(output: &Tensor<T>, target: &Tensor<T>, partition: &BandPartition, eps_rel: f64) -> Result<FbcBands> {
    if output.shape() != target.shape() {
        return Err(Error::shape(
            "fbc",
            format!("output {} vs target {}", output.shape(), target.shape()),
        ));
    }
    FbcReference::with_partition(target, partition.clone(), eps_rel)?.measure(output, 0)
}
