//! Adam and He-normal initialization.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators for a fixed list of parameters.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
    step_count: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self, param: usize) -> Option<&[T]> {
        self.first_moment.get(param).map(Vec::as_slice)
    }

    pub fn second_moment(&self, param: usize) -> Option<&[T]> {
        self.second_moment.get(param).map(Vec::as_slice)
    }

    /// One bias-corrected Adam update of every parameter. Gradients are
    /// validated before anything is modified, so a rejected step leaves both
    /// the parameters and the state untouched.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::InvalidArgument(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("parameter {i} is {} but its gradient is {}", p.shape(), g.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    param: i,
                    step: self.step_count + 1,
                });
            }
        }
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.second_moment = self.first_moment.clone();
        } else if self.first_moment.len() != params.len()
            || self.first_moment.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len())
        {
            return Err(Error::InvalidArgument(
                "parameter list changed between Adam steps".into(),
            ));
        }

        self.step_count += 1;
        let c = &self.config;
        let t = self.step_count as i32;
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let one = T::one();
        let bias1 = T::from_f64_lossy(1.0 - c.beta1.powi(t));
        let bias2 = T::from_f64_lossy(1.0 - c.beta2.powi(t));
        let lr = T::from_f64_lossy(c.lr);
        let eps = T::from_f64_lossy(c.epsilon);

        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Zero-mean normal weights with standard deviation `sqrt(2 / fan_in)`,
/// `fan_in = in_channels * kernel_h * kernel_w` for an
/// `(out, in, kh, kw)` convolution weight.
pub fn he_init<T: Scalar>(shape: impl Into<Shape>, rng: &mut Rng) -> Tensor<T> {
    let shape = shape.into();
    let fan_in = (shape.channels * shape.height * shape.width).max(1);
    let std = (2.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.normal(0.0, std)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::<f64>::full([1, 1, 2, 2], 0.3)];
        let g = vec![Tensor::<f64>::zeros([1, 1, 2, 2])];
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut p, &g).unwrap();
        assert_eq!(p[0].data(), &[0.3; 4]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Tensor::<f64>::zeros([1, 1, 1, 1])];
        let g = vec![Tensor::<f64>::full([1, 1, 1, 1], 1.0)];
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut p, &g).unwrap();
        // m_hat = g, v_hat = g^2 after bias correction.
        let want = -0.001 * (1.0 / (1.0 + 1e-8));
        assert!((p[0].data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn matches_scalar_recurrence() {
        let cfg = AdamConfig::default();
        let grads = [0.7, 0.7, -0.2, 1.5];
        let mut p = vec![Tensor::<f64>::full([1, 1, 1, 1], 0.5)];
        let mut adam = AdamState::new(cfg);
        let (mut m, mut v, mut w) = (0.0f64, 0.0f64, 0.5f64);
        for (t, &g) in grads.iter().enumerate() {
            adam.step(&mut p, &[Tensor::full([1, 1, 1, 1], g)]).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
            let vh = v / (1.0 - 0.999f64.powi(t as i32 + 1));
            w -= 0.001 * mh / (vh.sqrt() + 1e-8);
            assert!((p[0].data()[0] - w).abs() < 1e-12);
        }
        assert_eq!(adam.step_count(), 4);
        assert_eq!(adam.first_moment(0).unwrap().len(), 1);
    }

    #[test]
    fn nan_gradient_rejected_without_side_effects() {
        let mut p = vec![Tensor::<f32>::full([1, 1, 1, 2], 1.0)];
        let g = vec![Tensor::<f32>::from_vec([1, 1, 1, 2], vec![0.1, f32::NAN]).unwrap()];
        let mut adam = AdamState::new(AdamConfig::default());
        assert!(matches!(
            adam.step(&mut p, &g),
            Err(Error::NonFiniteGradient { param: 0, step: 1 })
        ));
        assert_eq!(adam.step_count(), 0);
        assert_eq!(p[0].data(), &[1.0, 1.0]);
    }

    #[test]
    fn he_init_is_deterministic() {
        let a: Tensor<f32> = he_init([4, 3, 3, 3], &mut Rng::new(9));
        let b: Tensor<f32> = he_init([4, 3, 3, 3], &mut Rng::new(9));
        assert_eq!(a, b);
    }

    fn sample_var(t: &Tensor<f64>) -> f64 {
        let n = t.len() as f64;
        let mean = t.sum() / n;
        t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    }

    #[test]
    fn he_init_std() {
        // 10,000 samples, fan_in = 9.
        let w: Tensor<f64> = he_init([10_000, 1, 3, 3], &mut Rng::new(1));
        let w = w.reshape([1, 1, 1, 90_000]).unwrap();
        let first: Vec<f64> = w.data()[..10_000].to_vec();
        let t = Tensor::from_vec([1, 1, 1, 10_000], first).unwrap();
        let std = sample_var(&t).sqrt();
        let want = (2.0f64 / 9.0).sqrt();
        assert!((std - want).abs() <= 0.05 * want, "{std} vs {want}");
    }

    #[test]
    fn doubling_fan_in_halves_variance() {
        let a: Tensor<f64> = he_init([2_000, 2, 3, 3], &mut Rng::new(2));
        let b: Tensor<f64> = he_init([1_000, 4, 3, 3], &mut Rng::new(3));
        let ratio = sample_var(&b) / sample_var(&a);
        assert!((ratio - 0.5).abs() <= 0.05, "{ratio}");
    }
}
