//! Observations, task losses and the optimization loop that fits a freshly
//! initialized generator to one degraded image.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::degrade::lanczos_kernel;
use crate::error::{Error, Result};
use crate::fbc::{FbcReference, DEFAULT_BANDS, DEFAULT_EPS_REL};
use crate::net::{build_network, NetworkSpec};
use crate::ops::filter::reflect_index;
use crate::optim::{AdamConfig, AdamState};
use crate::quality::{blurriness, psnr, sharpness};
use crate::rng::Rng;
use crate::stopping::{blur_sharpness_ratio, Decision, StoppingMonitor, StoppingParams};
use crate::tensor::{Scalar, Tensor};

/// How the unknown image maps to the observation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Operator {
    Identity,
    /// Pixelwise selection by the observation's mask.
    Mask,
    /// Lanczos decimation by the given factor.
    Downsample(usize),
}

/// A degraded image `y0 = A(x) + e` together with what is known about `A`.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradedObservation<T> {
    pub y0: Tensor<T>,
    /// `1 x 1 x H x W`, 1 where observed. Present iff the operator is `Mask`.
    pub mask: Option<Tensor<T>>,
    pub operator: Operator,
    /// Ground truth at output resolution, used only for reporting.
    pub clean_reference: Option<Tensor<T>>,
}

fn check_image<T: Scalar>(x: &Tensor<T>, what: &str) -> Result<()> {
    let s = x.shape();
    if s.batch != 1 || !matches!(s.channels, 1 | 3) || s.height == 0 || s.width == 0 {
        return Err(Error::shape(
            "observation",
            format!("{what} must be one 1- or 3-channel image, got {s}"),
        ));
    }
    Ok(())
}

impl<T: Scalar> DegradedObservation<T> {
    pub fn identity(y0: Tensor<T>) -> Result<Self> {
        check_image(&y0, "y0")?;
        Ok(Self {
            y0,
            mask: None,
            operator: Operator::Identity,
            clean_reference: None,
        })
    }

    pub fn masked(y0: Tensor<T>, mask: Tensor<T>) -> Result<Self> {
        check_image(&y0, "y0")?;
        let (s, m) = (y0.shape(), mask.shape());
        if m.batch != 1 || m.channels != 1 || m.height != s.height || m.width != s.width {
            return Err(Error::shape(
                "observation",
                format!("mask {m} does not match image {s}"),
            ));
        }
        if mask.data().iter().any(|&v| v != T::zero() && v != T::one()) {
            return Err(Error::InvalidArgument("mask must be binary".into()));
        }
        if mask.data().iter().all(|&v| v == T::zero()) {
            return Err(Error::InvalidArgument("mask observes no pixels".into()));
        }
        Ok(Self {
            y0,
            mask: Some(mask),
            operator: Operator::Mask,
            clean_reference: None,
        })
    }

    pub fn downsampled(y0: Tensor<T>, factor: usize) -> Result<Self> {
        check_image(&y0, "y0")?;
        if factor < 2 {
            return Err(Error::InvalidArgument(format!(
                "downsampling factor must be >= 2, got {factor}"
            )));
        }
        Ok(Self {
            y0,
            mask: None,
            operator: Operator::Downsample(factor),
            clean_reference: None,
        })
    }

    pub fn with_reference(mut self, clean: Tensor<T>) -> Result<Self> {
        let want = self.output_shape();
        if clean.shape().dims() != want {
            return Err(Error::shape(
                "observation",
                format!("reference {} should be {want:?}", clean.shape()),
            ));
        }
        self.clean_reference = Some(clean);
        Ok(self)
    }

    fn factor(&self) -> usize {
        match self.operator {
            Operator::Downsample(f) => f,
            _ => 1,
        }
    }

    /// `[1, C, H, W]` of the image being recovered.
    pub fn output_shape(&self) -> [usize; 4] {
        let [b, c, h, w] = self.y0.shape().dims();
        let f = self.factor();
        [b, c, h * f, w * f]
    }

    /// `A(x)` on a plain tensor; the mask is applied to every channel.
    pub fn apply_operator(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let v = g.leaf(x.clone());
        let a = forward_operator(&mut g, v, self)?;
        let mut out = g.value(a).clone();
        if let Some(m) = &self.mask {
            mask_in_place(&mut out, m);
        }
        Ok(out)
    }

    /// `y0` as seen through the mask (unobserved pixels zeroed).
    fn masked_y0(&self) -> Tensor<T> {
        let mut y = self.y0.clone();
        if let Some(m) = &self.mask {
            mask_in_place(&mut y, m);
        }
        y
    }
}

fn mask_in_place<T: Scalar>(x: &mut Tensor<T>, mask: &Tensor<T>) {
    let s = x.shape();
    for c in 0..s.channels {
        for (v, &m) in x.plane_mut(0, c).iter_mut().zip(mask.plane(0, 0)) {
            *v *= m;
        }
    }
}

/// Records `A(out)` on the graph. The mask is not applied here; it enters
/// the loss as per-pixel weights.
pub fn forward_operator<T: Scalar>(g: &mut Graph<T>, out: Var, obs: &DegradedObservation<T>) -> Result<Var> {
    match obs.operator {
        Operator::Identity | Operator::Mask => Ok(out),
        Operator::Downsample(f) => {
            let s = g.value(out).shape();
            if s.height % f != 0 || s.width % f != 0 {
                return Err(Error::InvalidArgument(format!(
                    "{}x{} is not divisible by {f}",
                    s.height, s.width
                )));
            }
            g.fixed_filter(out, &lanczos_kernel(f)?, f)
        }
    }
}

/// Mean squared error between `A(out)` and `y0`, over observed pixels for
/// masked observations.
pub fn task_loss<T: Scalar>(g: &mut Graph<T>, out: Var, obs: &DegradedObservation<T>) -> Result<Var> {
    let a = forward_operator(g, out, obs)?;
    g.mse(a, &obs.y0, obs.mask.as_ref())
}

/// [`task_loss`] evaluated on a plain tensor.
pub fn task_loss_value<T: Scalar>(output: &Tensor<T>, obs: &DegradedObservation<T>) -> Result<f64> {
    let mut g = Graph::new();
    let v = g.leaf(output.clone());
    let l = task_loss(&mut g, v, obs)?;
    Ok(g.value(l).data()[0].to_f64_lossy())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingConfig {
    pub enabled: bool,
    pub params: StoppingParams,
}

impl Default for StoppingConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            params: StoppingParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub network: NetworkSpec,
    pub adam: AdamConfig,
    pub max_iters: usize,
    pub stopping: StoppingConfig,
    /// Iterations between trace records. The first, last and stopping
    /// iterations are always recorded.
    pub trace_every: usize,
    pub bands: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            network: NetworkSpec::default(),
            adam: AdamConfig::default(),
            max_iters: 10_000,
            stopping: StoppingConfig::default(),
            trace_every: 100,
            bands: DEFAULT_BANDS,
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Fixed budgets for super-resolution: 2,000 iterations at x4 and 4,000
    /// at x8, without automatic stopping.
    pub fn superres(factor: usize) -> Self {
        Self {
            max_iters: if factor >= 8 { 4_000 } else { 2_000 },
            stopping: StoppingConfig {
                enabled: false,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
        }
        if self.trace_every == 0 {
            return Err(Error::InvalidArgument("trace_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// One trace step. FBC compares `A(output)` with `y0`; `None` marks an
/// empty band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub loss: f64,
    pub psnr: Option<f64>,
    pub r_ratio: f64,
    pub fbc: Vec<Option<f64>>,
}

#[derive(Clone, Debug)]
pub struct RunResult<T> {
    /// Network output at `stop_iteration`, in `[0, 1]`.
    pub restored: Tensor<T>,
    pub stop_iteration: usize,
    pub stopped_early: bool,
    pub trace: Vec<TraceRecord>,
    pub wall_time: Duration,
}

impl<T> RunResult<T> {
    pub fn final_psnr(&self) -> Option<f64> {
        self.trace.last().and_then(|r| r.psnr)
    }

    pub fn peak_psnr(&self) -> Option<f64> {
        self.trace.iter().filter_map(|r| r.psnr).reduce(f64::max)
    }
}

/// `x` mirrored outward to `h x w` with `x` placed at `(top, left)`.
pub fn reflect_pad<T: Scalar>(x: &Tensor<T>, top: usize, left: usize, h: usize, w: usize) -> Tensor<T> {
    let [b, c, xh, xw] = x.shape().dims();
    Tensor::from_fn([b, c, h, w], |[n, ch, y, xx]| {
        x.at(
            n,
            ch,
            reflect_index(y as isize - top as isize, xh),
            reflect_index(xx as isize - left as isize, xw),
        )
    })
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Padding of the observation grid so the output fits the architecture.
struct Padding {
    /// Observation-grid offset and size.
    obs: (usize, usize, usize, usize),
    /// Output-grid offset and size.
    out: (usize, usize, usize, usize),
}

fn plan_padding<T: Scalar>(obs: &DegradedObservation<T>, multiple: usize) -> Padding {
    let f = obs.factor();
    let q = multiple / gcd(multiple, f);
    let [_, _, h, w] = obs.y0.shape().dims();
    let (hp, wp) = (h.div_ceil(q) * q, w.div_ceil(q) * q);
    let (top, left) = ((hp - h) / 2, (wp - w) / 2);
    Padding {
        obs: (top, left, hp, wp),
        out: (top * f, left * f, hp * f, wp * f),
    }
}

fn pad_observation<T: Scalar>(obs: &DegradedObservation<T>, p: &Padding) -> DegradedObservation<T> {
    let (top, left, h, w) = p.obs;
    DegradedObservation {
        y0: reflect_pad(&obs.y0, top, left, h, w),
        mask: obs.mask.as_ref().map(|m| reflect_pad(m, top, left, h, w)),
        operator: obs.operator,
        clean_reference: None,
    }
}

/// Fits a generator built from `cfg.seed` to `obs`.
///
/// Each iteration refreshes the spectral-norm estimates, runs the forward
/// pass on the fixed input, records the trace and stopping ratio for that
/// output, then takes one Adam step. The returned image is the output of
/// the last forward pass, i.e. of the stopping iteration.
pub fn restore<T: Scalar>(obs: &DegradedObservation<T>, cfg: &RunConfig) -> Result<RunResult<T>> {
    cfg.validate()?;
    let started = Instant::now();
    let [_, channels, h, w] = obs.output_shape();
    if channels != cfg.network.out_channels {
        return Err(Error::InvalidArgument(format!(
            "network produces {} channels but the observation has {channels}",
            cfg.network.out_channels
        )));
    }
    let pad = plan_padding(obs, cfg.network.size_multiple());
    let padded = pad_observation(obs, &pad);
    let (out_top, out_left, out_h, out_w) = pad.out;
    let (obs_top, obs_left, _, _) = pad.obs;
    let [_, _, oh, ow] = obs.y0.shape().dims();

    let root = Rng::new(cfg.seed);
    let mut model = build_network::<T>(&cfg.network, (out_h, out_w), &mut root.fork(0))?;
    let z = model.sample_input(&mut root.fork(1));
    let mut adam = AdamState::new(cfg.adam);
    let fbc_ref = FbcReference::new(&obs.masked_y0(), cfg.bands, DEFAULT_EPS_REL)?;
    let mut monitor = StoppingMonitor::new(cfg.stopping.params);
    let stride = monitor.params().stride;

    let mut trace: Vec<TraceRecord> = Vec::new();
    let mut restored = Tensor::zeros([1, channels, h, w]);
    let mut stop_iteration = cfg.max_iters;
    let mut stopped_early = false;

    for t in 1..=cfg.max_iters {
        model.refresh_spectral_norms();
        let mut g = Graph::new();
        let (out, params) = model.forward_graph(&mut g, &z)?;
        let a = forward_operator(&mut g, out, &padded)?;
        let loss_var = g.mse(a, &padded.y0, padded.mask.as_ref())?;
        let loss = g.value(loss_var).data()[0].to_f64_lossy();
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iteration: t,
                loss,
                last_finite: trace.last().cloned().map(Box::new),
            });
        }

        restored = g.value(out).crop(out_top, out_left, h, w)?;
        let check_stop = cfg.stopping.enabled && t % stride == 0;
        let record = t == 1 || t % cfg.trace_every == 0 || t == cfg.max_iters;
        let r = if check_stop || record {
            Some(blur_sharpness_ratio(blurriness(&restored)?, sharpness(&restored)?))
        } else {
            None
        };
        let stop = match r {
            Some(r) if check_stop => monitor.update(r) == Decision::Stop,
            _ => false,
        };

        if record || stop {
            let mut seen = g.value(a).crop(obs_top, obs_left, oh, ow)?;
            if let Some(m) = &obs.mask {
                mask_in_place(&mut seen, m);
            }
            let fbc = fbc_ref.measure(&seen, t)?;
            let psnr = match &obs.clean_reference {
                Some(clean) => Some(psnr(&restored, clean)?),
                None => None,
            };
            trace.push(TraceRecord {
                iteration: t,
                loss,
                psnr,
                r_ratio: r.unwrap_or(f64::NAN),
                fbc: fbc.values,
            });
            log::debug!("iteration {t}: loss {loss:.6e}, psnr {psnr:?}");
        }
        if stop {
            stop_iteration = t;
            stopped_early = t < cfg.max_iters;
            log::info!("stopping criterion met at iteration {t}");
            break;
        }

        let mut grads = g.backward(loss_var)?;
        let grads: Vec<Tensor<T>> = params
            .iter()
            .zip(model.params())
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        adam.step(model.params_mut(), &grads)?;
    }

    Ok(RunResult {
        restored,
        stop_iteration,
        stopped_early,
        trace,
        wall_time: started.elapsed(),
    })
}

/// `clamp(2 x0 - xs, 0, 1)`.
pub fn unsharp_mask<T: Scalar>(x0: &Tensor<T>, smoothed: &Tensor<T>) -> Result<Tensor<T>> {
    let two = T::from_f64_lossy(2.0);
    Ok(x0.zip_map(smoothed, |a, s| two * a - s)?.clamp(T::zero(), T::one()))
}

/// Detail enhancement: fits the image with the identity operator under the
/// bound `lambda` for a fixed `iters`, then applies [`unsharp_mask`] with
/// the fit as the smoothed image. Returns the enhanced image and the fit.
pub fn enhance<T: Scalar>(x0: &Tensor<T>, lambda: f64, iters: usize, base: &RunConfig) -> Result<(Tensor<T>, RunResult<T>)> {
    let mut cfg = base.clone();
    cfg.network.lipschitz_lambda = Some(lambda);
    cfg.max_iters = iters;
    cfg.stopping.enabled = false;
    let fit = restore(&DegradedObservation::identity(x0.clone())?, &cfg)?;
    Ok((unsharp_mask(x0, &fit.restored)?, fit))
}
