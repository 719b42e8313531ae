//! Finite-difference checks of every differentiable operation.

use specdip::autodiff::{Graph, Var};
use specdip::degrade::lanczos_kernel;
use specdip::net::{build_network, gaussian_kernel, Architecture, LipschitzNorm, NetworkSpec, Upsampling};
use specdip::optim::he_init;
use specdip::restore::{task_loss, DegradedObservation};
use specdip::{Result, Rng, Tensor};

use super::oracles::{finite_difference, max_relative_error};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug)]
pub struct Check {
    pub name: String,
    pub entries: usize,
    /// Entries whose finite difference straddles a leaky ReLU kink.
    pub excluded: usize,
    pub error: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error <= TOLERANCE && self.excluded * 50 <= self.entries
    }
}

pub fn random(shape: [usize; 4], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
}

/// Checks `d/d input_i sum(probe * build(inputs))` for every input.
pub fn check<F>(name: &str, inputs: &[Tensor<f64>], seed: u64, build: F) -> Vec<Check>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let y = build(&mut g, &vars)?;
        Ok((g, vars, y))
    };
    let (g, vars, y) = eval(inputs).expect("forward");
    let mut rng = Rng::new(seed);
    let probe = random(g.value(y).shape().dims(), &mut rng);
    let mut g = g;
    let s = g.dot(y, &probe).expect("probe");
    let grads = g.backward(s).expect("backward");

    let scalar = |values: &[Tensor<f64>]| -> f64 {
        let (g, _, y) = eval(values).expect("forward");
        g.value(y).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    };
    (0..inputs.len())
        .map(|i| {
            let analytic = grads.get(vars[i]).expect("gradient").data().to_vec();
            let numeric = finite_difference(&inputs[i], STEP, |xi| {
                let mut values = inputs.to_vec();
                values[i] = xi.clone();
                scalar(&values)
            });
            Check {
                name: format!("{name}[{i}]"),
                entries: analytic.len(),
                excluded: 0,
                error: max_relative_error(&numeric, &analytic),
            }
        })
        .collect()
}

/// Leaky ReLU inputs kept away from the kink so the finite difference never
/// straddles it.
fn away_from_zero(shape: [usize; 4], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v = rng.uniform(0.05, 1.0);
        if rng.bernoulli(0.5) {
            v
        } else {
            -v
        }
    })
}

pub fn conv2d() -> Vec<Check> {
    let mut rng = Rng::new(1);
    let mut out = Vec::new();
    for (stride, padding) in [(1, 1), (2, 1), (1, 0)] {
        let x = random([2, 8, 16, 16], &mut rng);
        let w = random([4, 8, 3, 3], &mut rng);
        let b = random([1, 4, 1, 1], &mut rng);
        out.extend(check(&format!("conv2d/s{stride}p{padding}"), &[x, w, b], 11, |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), stride, padding)
        }));
    }
    let x = random([1, 6, 8, 8], &mut rng);
    let w = random([3, 6, 1, 1], &mut rng);
    out.extend(check("conv2d/pointwise", &[x, w], 12, |g, v| g.conv2d(v[0], v[1], None, 1, 0)));
    out
}

pub fn leaky_relu() -> Vec<Check> {
    let x = away_from_zero([2, 8, 16, 16], &mut Rng::new(2));
    check("leaky_relu", &[x], 21, |g, v| Ok(g.leaky_relu(v[0], 0.01)))
}

pub fn fixed_filter_conv() -> Vec<Check> {
    let mut rng = Rng::new(3);
    let mut out = Vec::new();
    for stride in [1, 2, 3] {
        let k = specdip::ops::Kernel2d::new(3, 5, (0..15).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let x = random([2, 3, 12, 12], &mut rng);
        out.extend(check(&format!("fixed_filter/s{stride}"), &[x], 31, |g, v| g.fixed_filter(v[0], &k, stride)));
    }
    out
}

pub fn gaussian_upsample() -> Vec<Check> {
    let mut rng = Rng::new(4);
    let mut out = Vec::new();
    for sigma in [0.0, 0.5, 1.0] {
        let k = gaussian_kernel(sigma, 5, 2).unwrap();
        let x = random([2, 4, 8, 8], &mut rng);
        out.extend(check(&format!("gaussian_upsample/sigma{sigma}"), &[x], 41, |g, v| g.upsample_filter(v[0], &k, 2)));
    }
    out
}

/// Convolution followed by Lipschitz normalization, with the bound active
/// (weights scaled above lambda) and inactive.
pub fn lipschitz_normalize() -> Vec<Check> {
    let mut rng = Rng::new(5);
    let mut out = Vec::new();
    for (label, gain) in [("active", 8.0), ("inactive", 0.1)] {
        let x = random([2, 4, 10, 10], &mut rng);
        let w: Tensor<f64> = he_init([5, 4, 3, 3], &mut rng).scale(gain);
        let b = random([1, 5, 1, 1], &mut rng);
        let norm = LipschitzNorm::new(&w, Some(2.0), &mut rng);
        out.extend(check(&format!("lipschitz_normalize/{label}"), &[x, w, b], 51, |g, v| {
            let pre = g.conv2d(v[0], v[1], None, 1, 1)?;
            norm.apply(g, pre, v[2])
        }));
    }
    out
}

pub fn lanczos_downsample() -> Vec<Check> {
    let mut rng = Rng::new(6);
    let mut out = Vec::new();
    for factor in [2, 4] {
        let k = lanczos_kernel(factor).unwrap();
        let x = random([1, 3, 16, 16], &mut rng);
        out.extend(check(&format!("lanczos_downsample/x{factor}"), &[x], 61, |g, v| g.fixed_filter(v[0], &k, factor)));
    }
    out
}

pub fn task_losses() -> Vec<Check> {
    let mut rng = Rng::new(7);
    let y_full = random([1, 3, 16, 16], &mut rng);
    let mask = Tensor::from_fn([1, 1, 16, 16], |_| if rng.bernoulli(0.5) { 0.0 } else { 1.0 });
    let observations = [
        ("identity", DegradedObservation::identity(y_full.clone()).unwrap()),
        ("mask", DegradedObservation::masked(y_full.clone(), mask).unwrap()),
        ("downsample", DegradedObservation::downsampled(random([1, 3, 4, 4], &mut rng), 4).unwrap()),
    ];
    let mut out = Vec::new();
    for (label, obs) in &observations {
        let x = random([1, 3, 16, 16], &mut rng);
        out.extend(check(&format!("task_loss/{label}"), &[x], 71, |g, v| task_loss(g, v[0], obs)));
    }
    out
}

/// Every parameter of small Decoder, Encoder-Decoder and ConvNet models.
pub fn full_network() -> Vec<Check> {
    let mut out = Vec::new();
    for (arch, up) in [
        (Architecture::Decoder, Upsampling::gaussian(0.5)),
        (Architecture::EncoderDecoder, Upsampling::Bilinear),
        (Architecture::ConvNet, Upsampling::gaussian(0.5)),
    ] {
        let spec = NetworkSpec {
            architecture: arch,
            channels: 3,
            stages: 2,
            upsample: up,
            lipschitz_lambda: Some(2.0),
            input_depth: 2,
            out_channels: 3,
        };
        let mut rng = Rng::new(8);
        let model = build_network::<f64>(&spec, (8, 8), &mut rng).unwrap();
        let z = model.sample_input(&mut rng);
        let probe = random([1, 3, 8, 8], &mut rng);

        let objective = |params: &[Tensor<f64>]| -> f64 {
            let mut m = model.clone();
            m.params_mut().clone_from_slice(params);
            let y = m.forward(&z).unwrap();
            y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let mut g = Graph::new();
        let (y, vars) = model.forward_graph(&mut g, &z).unwrap();
        let s = g.dot(y, &probe).unwrap();
        let grads = g.backward(s).unwrap();
        let params = model.params().to_vec();
        let (mut numeric, mut fine, mut analytic) = (Vec::new(), Vec::new(), Vec::new());
        for (i, v) in vars.iter().enumerate() {
            analytic.extend_from_slice(grads.get(*v).unwrap().data());
            for (step, dst) in [(STEP, &mut numeric), (STEP / 4.0, &mut fine)] {
                dst.extend(finite_difference(&params[i], step, |p| {
                    let mut all = params.clone();
                    all[i] = p.clone();
                    objective(&all)
                }));
            }
        }
        // On a smooth stretch the two steps agree to truncation error; a
        // kink inside the step makes them disagree.
        let smooth: Vec<usize> = (0..numeric.len())
            .filter(|&k| max_relative_error(&numeric[k..=k], &fine[k..=k]) <= 10.0 * TOLERANCE)
            .collect();
        let pick = |v: &[f64]| smooth.iter().map(|&k| v[k]).collect::<Vec<_>>();
        out.push(Check {
            name: format!("network/{arch:?}"),
            entries: numeric.len(),
            excluded: numeric.len() - smooth.len(),
            error: max_relative_error(&pick(&numeric), &pick(&analytic)),
        });
    }
    out
}

pub fn suite() -> Vec<Check> {
    [
        conv2d(),
        leaky_relu(),
        fixed_filter_conv(),
        gaussian_upsample(),
        lipschitz_normalize(),
        lanczos_downsample(),
        task_losses(),
        full_network(),
    ]
    .into_iter()
    .flatten()
    .collect()
}
