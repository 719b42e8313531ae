mod common;

use common::oracles::{direct_conv2d, direct_reflect_filter, jacobi_spectral_norm, naive_dft_magnitude};
use proptest::prelude::*;
use specdip::fbc::{fbc, BandPartition};
use specdip::fft::fft2;
use specdip::io::{read_trace_csv, write_trace_csv};
use specdip::net::{build_network, gaussian_kernel, lipschitz_normalize, LipschitzNorm, NetworkSpec, Upsampling};
use specdip::ops::{conv2d, fixed_filter_conv, Kernel2d};
use specdip::optim::he_init;
use specdip::restore::{task_loss_value, DegradedObservation, TraceRecord};
use specdip::stopping::{window_delta, StoppingMonitor, StoppingParams};
use specdip::{Rng, Tensor};

fn random(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let mut rng = Rng::new(seed);
    Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fft_parseval(h in 1usize..20, w in 1usize..20, seed in any::<u64>()) {
        let x = random([1, 1, h, w], seed);
        let energy: f64 = x.data().iter().map(|v| v * v).sum();
        let spectral: f64 = fft2(x.data(), h, w).iter().map(|z| z.norm_sqr()).sum::<f64>() / (h * w) as f64;
        prop_assert!((energy - spectral).abs() <= 1e-9 * energy.max(1.0));
    }

    #[test]
    fn fft_matches_naive_dft(h in 1usize..9, w in 1usize..9, seed in any::<u64>()) {
        let x = random([1, 1, h, w], seed);
        let fast: Vec<f64> = fft2(x.data(), h, w).iter().map(|z| z.norm()).collect();
        prop_assert!(close(&fast, &naive_dft_magnitude(x.data(), h, w), 1e-10));
    }

    #[test]
    fn conv_matches_direct_oracle(
        cin in 1usize..4, cout in 1usize..4, h in 3usize..10, w in 3usize..10,
        stride in 1usize..3, padding in 0usize..2, seed in any::<u64>(),
    ) {
        let x = random([2, cin, h, w], seed);
        let k = random([cout, cin, 3, 3], seed ^ 1);
        let b = random([1, cout, 1, 1], seed ^ 2);
        let got = conv2d(&x, &k, Some(&b), stride, padding).unwrap();
        let want = direct_conv2d(&x, &k, Some(&b), stride, padding);
        prop_assert_eq!(got.shape(), want.shape());
        prop_assert!(close(got.data(), want.data(), 1e-12));
    }

    #[test]
    fn conv_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
        let x = random([1, 3, 7, 6], seed);
        let y = random([1, 3, 7, 6], seed ^ 1);
        let k = random([2, 3, 3, 3], seed ^ 2);
        let mix = x.zip_map(&y, |p, q| a * p + b * q).unwrap();
        let lhs = conv2d(&mix, &k, None, 1, 1).unwrap();
        let cx = conv2d(&x, &k, None, 1, 1).unwrap();
        let cy = conv2d(&y, &k, None, 1, 1).unwrap();
        let rhs = cx.zip_map(&cy, |p, q| a * p + b * q).unwrap();
        prop_assert!(close(lhs.data(), rhs.data(), 1e-12));
    }

    #[test]
    fn fixed_filter_matches_direct_oracle(h in 2usize..12, w in 2usize..12, stride in 1usize..4, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let k = Kernel2d::new(3, 5, (0..15).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let x = random([1, 2, h, w], seed ^ 3);
        let got = fixed_filter_conv(&x, &k, stride).unwrap();
        let want = direct_reflect_filter(&x, &k, stride);
        prop_assert!(close(got.data(), want.data(), 1e-12));
    }

    #[test]
    fn window_delta_ignores_offsets(
        stream in prop::collection::vec(-5.0f64..5.0, 2..80), n in 1usize..40, c in -10.0f64..10.0,
    ) {
        let shifted: Vec<f64> = stream.iter().map(|v| v + c).collect();
        match (window_delta(&stream, n), window_delta(&shifted, n)) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-9),
            (None, None) => {}
            other => prop_assert!(false, "history length decided differently: {:?}", other),
        }
    }

    #[test]
    fn larger_eps_never_stops_later(
        stream in prop::collection::vec(0.0f64..2.0, 0..200), n in 1usize..20,
        e1 in 0.0f64..0.5, e2 in 0.0f64..0.5,
    ) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let stop = |eps| StoppingMonitor::first_stop(StoppingParams { window: n, eps, stride: 1 }, stream.iter().copied())
            .unwrap_or(usize::MAX);
        prop_assert!(stop(hi) <= stop(lo));
    }

    #[test]
    fn fbc_scales_with_output(a in 0.01f64..10.0, seed in any::<u64>()) {
        let target = random([1, 3, 12, 10], seed);
        let out = random([1, 3, 12, 10], seed ^ 5);
        let p = BandPartition::new(12, 10, 5).unwrap();
        let base = fbc(&out, &target, &p, 1e-8).unwrap();
        let scaled = fbc(&out.scale(a), &target, &p, 1e-8).unwrap();
        for (s, b) in scaled.values.iter().zip(&base.values) {
            match (s, b) {
                (Some(s), Some(b)) => prop_assert!((s - a * b).abs() <= 1e-9 * (1.0 + a * b)),
                (None, None) => {}
                _ => prop_assert!(false),
            }
        }
    }

    #[test]
    fn fbc_ignores_channel_order(seed in any::<u64>()) {
        let target = random([1, 3, 9, 9], seed);
        let out = random([1, 3, 9, 9], seed ^ 7);
        let perm = |t: &Tensor<f64>| Tensor::from_fn([1, 3, 9, 9], |[_, c, y, x]| t.at(0, [2, 0, 1][c], y, x));
        let p = BandPartition::new(9, 9, 5).unwrap();
        let a = fbc(&out, &target, &p, 1e-8).unwrap();
        let b = fbc(&perm(&out), &perm(&target), &p, 1e-8).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x.unwrap() - y.unwrap()).abs() <= 1e-12);
        }
    }

    #[test]
    fn masked_pixels_do_not_affect_loss(seed in any::<u64>(), noise in -1.0f64..1.0) {
        let mut rng = Rng::new(seed);
        let y = random([1, 3, 8, 8], seed);
        let mut mask = Tensor::from_fn([1, 1, 8, 8], |_| if rng.bernoulli(0.4) { 0.0 } else { 1.0 });
        mask.set(0, 0, 0, 0, 1.0);
        let obs = DegradedObservation::masked(y, mask.clone()).unwrap();
        let out = random([1, 3, 8, 8], seed ^ 9);
        let edited = Tensor::from_fn([1, 3, 8, 8], |[_, c, r, q]| {
            if mask.at(0, 0, r, q) == 0.0 { noise } else { out.at(0, c, r, q) }
        });
        let a = task_loss_value(&out, &obs).unwrap();
        let b = task_loss_value(&edited, &obs).unwrap();
        prop_assert!((a - b).abs() <= 1e-15);
    }

    #[test]
    fn lipschitz_bound_holds(out in 1usize..12, inp in 1usize..5, gain in 0.05f64..20.0, lambda in 0.5f64..4.0, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let w: Tensor<f64> = he_init([out, inp, 3, 3], &mut rng).scale(gain);
        let norm = LipschitzNorm::new(&w, Some(lambda), &mut rng);
        let eff = w.scale(norm.scale());
        prop_assert!(jacobi_spectral_norm(eff.data(), out, inp * 9) <= lambda * 1.01);
    }

    #[test]
    fn centering_leaves_bias_as_channel_mean(seed in any::<u64>(), lambda in prop::option::of(0.5f64..4.0)) {
        let mut rng = Rng::new(seed);
        let w: Tensor<f64> = he_init([4, 2, 3, 3], &mut rng);
        let norm = LipschitzNorm::new(&w, lambda, &mut rng);
        let pre = random([1, 4, 6, 5], seed ^ 1).scale(7.0);
        let bias = random([1, 4, 1, 1], seed ^ 2);
        let y = lipschitz_normalize(&pre, &bias, &norm).unwrap();
        for c in 0..4 {
            let mean = y.plane(0, c).iter().sum::<f64>() / 30.0;
            prop_assert!((mean - bias.data()[c]).abs() <= 1e-12);
        }
    }

    /// Holds up to sigma ~ 1.057. Past that the 5-tap kernel drifts toward a
    /// box and its normalized response at the Nyquist frequency grows again.
    #[test]
    fn wider_gaussian_is_stronger_low_pass(s1 in 0.05f64..1.0, ds in 0.0f64..0.04, grid in prop::sample::select(vec![5usize, 8, 16])) {
        let spectrum = |s| {
            let k = gaussian_kernel(s, 5, 2).unwrap();
            let mut plane = vec![0.0; grid * grid];
            for i in 0..5 {
                for j in 0..5 {
                    plane[(i % grid) * grid + j % grid] += k.data()[i * 5 + j];
                }
            }
            naive_dft_magnitude(&plane, grid, grid)
        };
        let (a, b) = (spectrum(s1), spectrum(s1 + 0.01 + ds));
        for bin in 1..grid * grid {
            prop_assert!(b[bin] <= a[bin] + 1e-12);
        }
    }

    #[test]
    fn trace_csv_round_trips(
        rows in prop::collection::vec((0.0f64..1.0, prop::option::of(0.0f64..60.0), 0.0f64..5.0,
            prop::collection::vec(prop::option::of(0.0f64..2.0), 3)), 1..20),
    ) {
        let records: Vec<TraceRecord> = rows.into_iter().enumerate().map(|(i, (loss, psnr, r, fbc))| TraceRecord {
            iteration: 1 + 7 * i, loss, psnr, r_ratio: r, fbc,
        }).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        write_trace_csv(&records, &path).unwrap();
        let back = read_trace_csv(&path).unwrap();
        prop_assert_eq!(back.len(), records.len());
        let sig = |a: f64, b: f64| (a - b).abs() <= 5e-6 * a.abs().max(b.abs()).max(1e-300);
        for (x, y) in back.iter().zip(&records) {
            prop_assert_eq!(x.iteration, y.iteration);
            prop_assert!(sig(x.loss, y.loss) && sig(x.r_ratio, y.r_ratio));
            prop_assert_eq!(x.psnr.is_some(), y.psnr.is_some());
            if let (Some(p), Some(q)) = (x.psnr, y.psnr) { prop_assert!(sig(p, q)); }
            for (p, q) in x.fbc.iter().zip(&y.fbc) {
                prop_assert_eq!(p.is_some(), q.is_some());
                if let (Some(p), Some(q)) = (p, q) { prop_assert!(sig(*p, *q)); }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn network_is_deterministic(seed in any::<u64>(), lambda in prop::option::of(1.0f64..3.0)) {
        let spec = NetworkSpec {
            channels: 4,
            stages: 2,
            input_depth: 3,
            upsample: Upsampling::gaussian(0.5),
            lipschitz_lambda: lambda,
            ..NetworkSpec::default()
        };
        let run = || {
            let mut rng = Rng::new(seed);
            let m = build_network::<f64>(&spec, (12, 8), &mut rng).unwrap();
            let z = m.sample_input(&mut rng);
            m.forward(&z).unwrap()
        };
        let (a, b) = (run(), run());
        prop_assert_eq!(a.data(), b.data());
    }
}
