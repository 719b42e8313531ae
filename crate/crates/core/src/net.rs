//! Generator networks: Lipschitz-normalized convolutions, filter-controlled
//! upsampling and the Decoder, Encoder-Decoder and ConvNet builders.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::ops::filter::{Kernel2d, ResamplePlan};
use crate::optim::he_init;
use crate::rng::Rng;
use crate::spectral_norm::power_iteration_sn;
use crate::tensor::{Scalar, Shape, Tensor};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const DEFAULT_GAUSSIAN_SIZE: usize = 5;

// ---------------------------------------------------------------------------
// Upsampling filters

/// Sampled Gaussian on the integer grid centred at zero, scaled so the taps
/// sum to `factor^2` (the DC gain that keeps zero-inserted constants at their
/// level). `sigma == 0` gives a unit delta, i.e. plain zero insertion.
pub fn gaussian_kernel(sigma: f64, size: usize, factor: usize) -> Result<Kernel2d> {
    if size % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "Gaussian kernel size must be odd, got {size}"
        )));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "Gaussian sigma must be finite and >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Kernel2d::delta(size);
    }
    let r = (size / 2) as isize;
    let taps: Vec<f64> = (-r..=r)
        .flat_map(|i| (-r..=r).map(move |j| ((i * i + j * j) as f64 / (-2.0 * sigma * sigma)).exp()))
        .collect();
    let total: f64 = taps.iter().sum();
    let gain = (factor * factor) as f64;
    Kernel2d::new(size, size, taps.into_iter().map(|t| t * gain / total).collect())
}

/// Linear interpolation after zero insertion (tent filter, `2 * factor - 1`
/// taps per axis).
pub fn bilinear_kernel(factor: usize) -> Result<Kernel2d> {
    let s = factor.max(1) as isize;
    let tent: Vec<f64> = (-(s - 1)..=(s - 1))
        .map(|t| 1.0 - t.abs() as f64 / s as f64)
        .collect();
    Kernel2d::outer(&tent, &tent)
}

/// Pixel replication after zero insertion: output `(y, x)` copies input
/// `(y / factor, x / factor)`.
pub fn nearest_kernel(factor: usize) -> Result<Kernel2d> {
    let s = factor.max(1) as isize;
    let boxed: Vec<f64> = (-(s - 1)..=(s - 1))
        .map(|t| if t <= 0 { 1.0 } else { 0.0 })
        .collect();
    Kernel2d::outer(&boxed, &boxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianUpsampleConfig {
    pub factor: usize,
    pub sigma: f64,
    pub kernel_size: usize,
}

impl Default for GaussianUpsampleConfig {
    fn default() -> Self {
        Self {
            factor: 2,
            sigma: 0.5,
            kernel_size: DEFAULT_GAUSSIAN_SIZE,
        }
    }
}

impl GaussianUpsampleConfig {
    pub fn kernel(&self) -> Result<Kernel2d> {
        gaussian_kernel(self.sigma, self.kernel_size, self.factor)
    }
}

/// Zero insertion by `cfg.factor` followed by reflect-padded filtering with
/// the Gaussian kernel, channel by channel.
pub fn gaussian_upsample<T: Scalar>(x: &Tensor<T>, cfg: &GaussianUpsampleConfig) -> Result<Tensor<T>> {
    let s = x.shape();
    ResamplePlan::new(&cfg.kernel()?, s.height, s.width, cfg.factor, 1)?.forward(x)
}

// ---------------------------------------------------------------------------
// Normalization

/// Spectral-norm bound and power-iteration state of one convolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzNorm {
    /// Upper bound on the spectral norm; `None` disables scaling and leaves
    /// mean-only centering.
    pub lambda: Option<f64>,
    u: Vec<f64>,
    sigma: f64,
}

const WARMUP_MAX_ITERS: usize = 2000;
const WARMUP_TOL: f64 = 1e-12;

/// Views an `(out, in, kh, kw)` weight as an `out x (in * kh * kw)` matrix.
fn weight_matrix<T: Scalar>(weight: &Tensor<T>) -> (Vec<f64>, usize, usize) {
    let s = weight.shape();
    let data = weight.data().iter().map(|v| v.to_f64_lossy()).collect();
    (data, s.batch, s.channels * s.height * s.width)
}

impl LipschitzNorm {
    /// Draws `u` from `rng` and iterates until the estimate settles, so a
    /// fresh layer starts from a converged bound.
    pub fn new<T: Scalar>(weight: &Tensor<T>, lambda: Option<f64>, rng: &mut Rng) -> Self {
        let (m, rows, cols) = weight_matrix(weight);
        let mut u: Vec<f64> = (0..rows).map(|_| rng.standard_normal()).collect();
        let n = u.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        u.iter_mut().for_each(|x| *x /= n);
        let mut sigma = 0.0;
        for _ in 0..WARMUP_MAX_ITERS {
            let next = power_iteration_sn(&m, rows, cols, &mut u, 1);
            let done = (next - sigma).abs() <= WARMUP_TOL * next.max(f64::MIN_POSITIVE);
            sigma = next;
            if done {
                break;
            }
        }
        Self { lambda, u, sigma }
    }

    /// One power-iteration step against the current weight.
    pub fn refresh<T: Scalar>(&mut self, weight: &Tensor<T>) -> f64 {
        let (m, rows, cols) = weight_matrix(weight);
        self.sigma = power_iteration_sn(&m, rows, cols, &mut self.u, 1);
        self.sigma
    }

    /// Current spectral-norm estimate.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    /// `1 / max(1, sigma / lambda)`.
    pub fn scale(&self) -> f64 {
        match self.lambda {
            Some(l) => 1.0 / (self.sigma / l).max(1.0),
            None => 1.0,
        }
    }

    /// Records `scale * preact - mu + bias` on the graph. The scale is a
    /// constant of the step: no gradient flows through the norm estimate.
    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, preact: Var, bias: Var) -> Result<Var> {
        g.center_scale_bias(preact, bias, T::from_f64_lossy(self.scale()))
    }
}

/// Lipschitz normalization of a convolution's bias-free output.
pub fn lipschitz_normalize<T: Scalar>(preact: &Tensor<T>, bias: &Tensor<T>, norm: &LipschitzNorm) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.leaf(preact.clone());
    let b = g.leaf(bias.clone());
    let y = norm.apply(&mut g, x, b)?;
    Ok(g.value(y).clone())
}

/// Full per-channel batch normalization without affine terms; used to show
/// the weight-norm invariance that Lipschitz normalization avoids.
pub fn batch_norm<T: Scalar>(x: &Tensor<T>, eps: f64) -> Tensor<T> {
    let s = x.shape();
    let n = (s.batch * s.plane()) as f64;
    let mut out = x.clone();
    for c in 0..s.channels {
        let vals = || (0..s.batch).flat_map(|b| x.plane(b, c).iter().map(|v| v.to_f64_lossy()));
        let mean = vals().sum::<f64>() / n;
        let var = vals().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        for b in 0..s.batch {
            for v in out.plane_mut(b, c) {
                *v = T::from_f64_lossy((v.to_f64_lossy() - mean) * inv);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Architectures

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    Decoder,
    EncoderDecoder,
    ConvNet,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Upsampling {
    Gaussian { sigma: f64, kernel_size: usize },
    Bilinear,
    NearestNeighbor,
}

impl Upsampling {
    pub fn gaussian(sigma: f64) -> Self {
        Upsampling::Gaussian {
            sigma,
            kernel_size: DEFAULT_GAUSSIAN_SIZE,
        }
    }

    pub fn kernel(&self, factor: usize) -> Result<Kernel2d> {
        match *self {
            Upsampling::Gaussian { sigma, kernel_size } => gaussian_kernel(sigma, kernel_size, factor),
            Upsampling::Bilinear => bilinear_kernel(factor),
            Upsampling::NearestNeighbor => nearest_kernel(factor),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub architecture: Architecture,
    pub channels: usize,
    pub stages: usize,
    pub upsample: Upsampling,
    /// `None` = unbounded (mean-only centering, no spectral scaling).
    pub lipschitz_lambda: Option<f64>,
    pub input_depth: usize,
    pub out_channels: usize,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            architecture: Architecture::Decoder,
            channels: 128,
            stages: 5,
            upsample: Upsampling::gaussian(0.5),
            lipschitz_lambda: Some(2.0),
            input_depth: 32,
            out_channels: 3,
        }
    }
}

impl NetworkSpec {
    /// Side lengths the output must be a multiple of.
    pub fn size_multiple(&self) -> usize {
        match self.architecture {
            Architecture::ConvNet => 1,
            Architecture::Decoder | Architecture::EncoderDecoder => 1 << self.stages,
        }
    }

    fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.channels == 0 || self.input_depth == 0 || self.stages == 0 {
            return Err(Error::InvalidArgument(
                "channels, input depth and stages must all be >= 1".into(),
            ));
        }
        if !matches!(self.out_channels, 1 | 3) {
            return Err(Error::InvalidArgument(format!(
                "output must have 1 or 3 channels, got {}",
                self.out_channels
            )));
        }
        if let Some(l) = self.lipschitz_lambda {
            if !(l > 0.0) {
                return Err(Error::InvalidArgument(format!("lambda must be > 0, got {l}")));
            }
        }
        if self.stages >= usize::BITS as usize {
            return Err(Error::InvalidArgument(format!("{} stages is too many", self.stages)));
        }
        let m = self.size_multiple();
        if height == 0 || width == 0 || height % m != 0 || width % m != 0 {
            return Err(Error::InvalidArgument(format!(
                "{:?} with {} stages needs sides divisible by {m}, got {height}x{width}",
                self.architecture, self.stages
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Block {
    Conv {
        weight: usize,
        bias: usize,
        stride: usize,
        norm: usize,
    },
    Upsample,
}

/// An instantiated generator: parameters, per-layer normalization state and
/// the fixed input shape.
#[derive(Clone, Debug)]
pub struct Model<T> {
    spec: NetworkSpec,
    target: (usize, usize),
    input_shape: Shape,
    params: Vec<Tensor<T>>,
    norms: Vec<LipschitzNorm>,
    blocks: Vec<Block>,
    head: (usize, usize),
    head_norm: LipschitzNorm,
    upsample_kernel: Kernel2d,
}

/// He-initializes every convolution and seeds each layer's power-iteration
/// vector from `rng`.
pub fn build_network<T: Scalar>(spec: &NetworkSpec, target: (usize, usize), rng: &mut Rng) -> Result<Model<T>> {
    let (h, w) = target;
    spec.validate(h, w)?;
    let c = spec.channels;
    let mut params: Vec<Tensor<T>> = Vec::new();
    let mut norms = Vec::new();
    let mut blocks = Vec::new();

    let mut conv = |cin: usize, cout: usize, stride: usize, params: &mut Vec<Tensor<T>>, rng: &mut Rng| {
        let weight: Tensor<T> = he_init([cout, cin, 3, 3], rng);
        norms.push(LipschitzNorm::new(&weight, spec.lipschitz_lambda, rng));
        params.push(weight);
        params.push(Tensor::zeros([1, cout, 1, 1]));
        Block::Conv {
            weight: params.len() - 2,
            bias: params.len() - 1,
            stride,
            norm: norms.len() - 1,
        }
    };

    let input_shape = match spec.architecture {
        Architecture::Decoder => {
            for i in 0..spec.stages {
                blocks.push(Block::Upsample);
                let cin = if i == 0 { spec.input_depth } else { c };
                blocks.push(conv(cin, c, 1, &mut params, rng));
            }
            let m = spec.size_multiple();
            Shape::new(1, spec.input_depth, h / m, w / m)
        }
        Architecture::ConvNet => {
            for i in 0..spec.stages {
                let cin = if i == 0 { spec.input_depth } else { c };
                blocks.push(conv(cin, c, 1, &mut params, rng));
            }
            Shape::new(1, spec.input_depth, h, w)
        }
        Architecture::EncoderDecoder => {
            for i in 0..spec.stages {
                let cin = if i == 0 { spec.input_depth } else { c };
                blocks.push(conv(cin, c, 2, &mut params, rng));
                blocks.push(conv(c, c, 1, &mut params, rng));
            }
            for _ in 0..spec.stages {
                blocks.push(Block::Upsample);
                blocks.push(conv(c, c, 1, &mut params, rng));
            }
            Shape::new(1, spec.input_depth, h, w)
        }
    };

    params.push(he_init([spec.out_channels, c, 1, 1], rng));
    params.push(Tensor::zeros([1, spec.out_channels, 1, 1]));
    let head = (params.len() - 2, params.len() - 1);
    let head_norm = LipschitzNorm::new(&params[head.0], spec.lipschitz_lambda, rng);

    Ok(Model {
        spec: spec.clone(),
        target,
        input_shape,
        params,
        norms,
        blocks,
        head,
        head_norm,
        upsample_kernel: spec.upsample.kernel(2)?,
    })
}

impl<T: Scalar> Model<T> {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn output_shape(&self) -> Shape {
        Shape::new(1, self.spec.out_channels, self.target.0, self.target.1)
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn norms(&self) -> &[LipschitzNorm] {
        &self.norms
    }

    pub fn num_weights(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Uniform noise in `[0, 0.1)` of the model's input shape.
    pub fn sample_input(&self, rng: &mut Rng) -> Tensor<T> {
        Tensor::from_fn(self.input_shape, |_| T::from_f64_lossy(rng.uniform(0.0, 0.1)))
    }

    /// Indices of the normalized convolution weights, in layer order.
    pub fn conv_weight_indices(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .filter_map(|b| match b {
                Block::Conv { weight, .. } => Some(*weight),
                Block::Upsample => None,
            })
            .collect()
    }

    /// Advances every layer's power iteration by one step against the
    /// current weights. Call once per optimizer step, before the forward pass.
    pub fn refresh_spectral_norms(&mut self) {
        for block in &self.blocks {
            if let Block::Conv { weight, norm, .. } = block {
                self.norms[*norm].refresh(&self.params[*weight]);
            }
        }
        self.head_norm.refresh(&self.params[self.head.0]);
    }

    /// `weight * scale` of the `layer`-th normalized convolution.
    pub fn effective_weight(&self, layer: usize) -> Option<Tensor<T>> {
        let (w, n) = self
            .blocks
            .iter()
            .filter_map(|b| match b {
                Block::Conv { weight, norm, .. } => Some((*weight, *norm)),
                Block::Upsample => None,
            })
            .nth(layer)?;
        Some(self.params[w].scale(T::from_f64_lossy(self.norms[n].scale())))
    }

    /// Records the forward pass on `g` with every parameter as a trainable
    /// leaf. Returns the output and the parameter handles (same order as
    /// [`Model::params`]).
    pub fn forward_graph(&self, g: &mut Graph<T>, z: &Tensor<T>) -> Result<(Var, Vec<Var>)> {
        if z.shape() != self.input_shape {
            return Err(Error::shape(
                "forward",
                format!("network expects input {}, got {}", self.input_shape, z.shape()),
            ));
        }
        let vars: Vec<Var> = self.params.iter().map(|p| g.param(p.clone())).collect();
        let slope = T::from_f64_lossy(LEAKY_SLOPE);
        let mut x = g.leaf(z.clone());
        for block in &self.blocks {
            x = match *block {
                Block::Upsample => g.upsample_filter(x, &self.upsample_kernel, 2)?,
                Block::Conv {
                    weight,
                    bias,
                    stride,
                    norm,
                } => {
                    let pre = g.conv2d(x, vars[weight], None, stride, 1)?;
                    let normed = self.norms[norm].apply(g, pre, vars[bias])?;
                    g.leaky_relu(normed, slope)
                }
            };
        }
        let pre = g.conv2d(x, vars[self.head.0], None, 1, 0)?;
        let logits = self.head_norm.apply(g, pre, vars[self.head.1])?;
        Ok((g.sigmoid(logits), vars))
    }

    /// Evaluates the network without keeping the graph.
    pub fn forward(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let (out, _) = self.forward_graph(&mut g, z)?;
        Ok(g.value(out).clone())
    }
}
