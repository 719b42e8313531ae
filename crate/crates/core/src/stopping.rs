//! Automatic stopping from the blur/sharpness ratio of successive outputs.

use serde::{Deserialize, Serialize};

/// Floor applied to sharpness so the ratio stays finite on flat outputs.
pub const SHARPNESS_FLOOR: f64 = 1e-12;

/// `r = blurriness / max(sharpness, floor)`.
pub fn blur_sharpness_ratio(blurriness: f64, sharpness: f64) -> f64 {
    blurriness / sharpness.max(SHARPNESS_FLOOR)
}

/// `|mean(last n) - mean(previous n)|` of `history`, or `None` with fewer
/// than `2n` entries.
pub fn window_delta(history: &[f64], n: usize) -> Option<f64> {
    if n == 0 || history.len() < 2 * n {
        return None;
    }
    let tail = &history[history.len() - 2 * n..];
    let prev = tail[..n].iter().sum::<f64>() / n as f64;
    let last = tail[n..].iter().sum::<f64>() / n as f64;
    Some((last - prev).abs())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingParams {
    pub window: usize,
    pub eps: f64,
    /// Iterations between ratio evaluations.
    pub stride: usize,
}

impl Default for StoppingParams {
    fn default() -> Self {
        Self {
            window: 100,
            eps: 0.01,
            stride: 1,
        }
    }
}

/// Ratio history of one run and the stop rule over its last `2n` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct StoppingMonitor {
    params: StoppingParams,
    history: Vec<f64>,
}

impl StoppingMonitor {
    pub fn new(params: StoppingParams) -> Self {
        Self {
            params: StoppingParams {
                window: params.window.max(1),
                stride: params.stride.max(1),
                ..params
            },
            history: Vec::new(),
        }
    }

    pub fn params(&self) -> &StoppingParams {
        &self.params
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// Current windowed difference, once `2n` ratios are recorded.
    pub fn delta(&self) -> Option<f64> {
        window_delta(&self.history, self.params.window)
    }

    /// Records `r` and stops once the windowed difference drops below `eps`.
    pub fn update(&mut self, r: f64) -> Decision {
        self.history.push(r);
        match self.delta() {
            Some(d) if d < self.params.eps => Decision::Stop,
            _ => Decision::Continue,
        }
    }

    /// Replays `stream` through a fresh monitor and returns the 1-based
    /// sample count at which it stops.
    pub fn first_stop(params: StoppingParams, stream: impl IntoIterator<Item = f64>) -> Option<usize> {
        let mut m = Self::new(params);
        stream
            .into_iter()
            .position(|r| m.update(r) == Decision::Stop)
            .map(|i| i + 1)
    }
}
