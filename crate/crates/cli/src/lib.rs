//! Argument parsing and task dispatch for the `specdip` binary.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use specdip::degrade::{bernoulli_mask, central_mask};
use specdip::fbc::{FbcReference, DEFAULT_EPS_REL};
use specdip::io::{load_image, save_image, write_trace_csv};
use specdip::net::{Architecture, NetworkSpec, Upsampling, DEFAULT_GAUSSIAN_SIZE};
use specdip::quality::{blurriness, luminance, psnr, sharpness};
use specdip::restore::{enhance, restore, DegradedObservation, RunConfig, RunResult, StoppingConfig, TraceRecord};
use specdip::stopping::{blur_sharpness_ratio, StoppingParams};
use specdip::{Error, Rng, Tensor};

#[derive(Debug, Parser)]
#[command(name = "specdip", version, about = "Single-image restoration with a spectrally controlled deep image prior")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Remove additive noise from an image.
    Denoise(TaskArgs),
    /// Remove compression artifacts from an already decoded image.
    Deblock(TaskArgs),
    /// Fill in unobserved pixels.
    Inpaint {
        #[command(flatten)]
        task: TaskArgs,
        /// Mask PNG; non-zero pixels are observed.
        #[arg(long, conflicts_with = "mask_spec", required_unless_present = "mask_spec")]
        mask: Option<PathBuf>,
        /// Generated mask: `bernoulli:<drop probability>` or `central:<hole ratio>`.
        #[arg(long, value_parser = parse_mask_spec)]
        mask_spec: Option<MaskSpec>,
    },
    /// Upscale a low-resolution image.
    Superres {
        #[command(flatten)]
        task: TaskArgs,
        #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(2..))]
        factor: u32,
    },
    /// Boost fine detail by unsharp masking against a smoothed fit.
    Enhance {
        #[command(flatten)]
        task: TaskArgs,
        /// Also write the smoothed fit here.
        #[arg(long)]
        smoothed_out: Option<PathBuf>,
    },
    /// Measure frequency-band correspondence of a sequence of images.
    MeasureFbc(MeasureArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum MaskSpec {
    Bernoulli(f64),
    Central(f64),
}

fn parse_mask_spec(s: &str) -> Result<MaskSpec, String> {
    let (kind, value) = s
        .split_once(':')
        .ok_or_else(|| format!("expected bernoulli:<p> or central:<ratio>, got {s:?}"))?;
    let v: f64 = value.parse().map_err(|e| format!("{value:?}: {e}"))?;
    match kind {
        "bernoulli" if (0.0..=1.0).contains(&v) => Ok(MaskSpec::Bernoulli(v)),
        "central" if (0.0..1.0).contains(&v) => Ok(MaskSpec::Central(v)),
        "bernoulli" | "central" => Err(format!("{v} is out of range for {kind}")),
        _ => Err(format!("unknown mask kind {kind:?}")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpsampleKind {
    Gaussian,
    Bilinear,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchKind {
    Decoder,
    EncoderDecoder,
    Convnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Toggle {
    On,
    Off,
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("{v} must be a positive number")),
        Err(e) => Err(e.to_string()),
    }
}

fn non_negative_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("{v} must be >= 0")),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Clone, Args)]
pub struct TaskArgs {
    /// Degraded input PNG (8-bit gray or RGB).
    #[arg(long = "in", value_name = "PNG")]
    pub input: PathBuf,
    /// Clean reference for PSNR reporting.
    #[arg(long = "ref", value_name = "PNG")]
    pub reference: Option<PathBuf>,
    /// Restored image path [default: <input stem>-<task>.png].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Trace CSV path [default: next to --out].
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Spectral-norm bound of every convolution.
    #[arg(long, default_value_t = 2.0, value_parser = positive_f64)]
    pub lambda: f64,
    /// Drop the spectral-norm bound (mean-only centering).
    #[arg(long, conflicts_with = "lambda")]
    pub unbounded: bool,
    #[arg(long, value_enum, default_value_t = UpsampleKind::Gaussian)]
    pub upsample: UpsampleKind,
    /// Gaussian upsampling sigma.
    #[arg(long, default_value_t = 0.5, value_parser = non_negative_f64)]
    pub sigma_up: f64,
    /// Iteration budget [default: 10000; superres 2000 at x4, 4000 at x8; enhance 5000].
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub iters: Option<u64>,
    /// Automatic stopping [default: on; off for superres and enhance].
    #[arg(long, value_enum)]
    pub stop: Option<Toggle>,
    /// Stopping window n.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub window: u64,
    /// Stopping threshold on the windowed ratio difference.
    #[arg(long, default_value_t = 0.01, value_parser = positive_f64)]
    pub eps: f64,
    /// Iterations between stopping-ratio evaluations.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub stride: u64,
    /// Frequency bands for FBC.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub bands: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Iterations between trace rows.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub trace_every: u64,
    #[arg(long, value_enum, default_value_t = ArchKind::Decoder)]
    pub architecture: ArchKind,
    #[arg(long, default_value_t = 128, value_parser = clap::value_parser!(u64).range(1..))]
    pub channels: u64,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..=12))]
    pub stages: u64,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    pub input_depth: u64,
    #[arg(long, default_value_t = 1e-3, value_parser = positive_f64)]
    pub lr: f64,
}

#[derive(Debug, Clone, Args)]
pub struct MeasureArgs {
    /// Directory of PNG frames, measured in file-name order.
    #[arg(long = "in", value_name = "DIR")]
    pub input: PathBuf,
    /// Target image `y0`.
    #[arg(long, value_name = "PNG")]
    pub target: PathBuf,
    /// Clean reference for PSNR.
    #[arg(long = "ref", value_name = "PNG")]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub bands: u64,
    /// Output CSV [default: <input dir>/fbc.csv].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ConfigEcho<'a> {
    tool_version: &'a str,
    subcommand: &'a str,
    input: &'a Path,
    reference: Option<&'a Path>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask: Option<MaskEcho<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    superres_factor: Option<u32>,
    outputs: Vec<&'a Path>,
    run: &'a RunConfig,
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
enum MaskEcho<'a> {
    File { file: &'a Path },
    Generated(MaskSpec),
}

/// Parses `argv` (including the program name), runs the task and returns
/// the process exit code: 0 on success, 1 on runtime errors and 2 on usage
/// errors.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Denoise(_) => "denoise",
        Command::Deblock(_) => "deblock",
        Command::Inpaint { .. } => "inpaint",
        Command::Superres { .. } => "superres",
        Command::Enhance { .. } => "enhance",
        Command::MeasureFbc(_) => "measure-fbc",
    }
}

fn execute(cmd: &Command) -> Result<(), Error> {
    let task = name(cmd);
    match cmd {
        Command::Denoise(args) | Command::Deblock(args) => {
            let y0: Tensor<f32> = load_image(&args.input)?;
            let obs = DegradedObservation::identity(y0)?;
            run_task(task, args, obs, None, None)
        }
        Command::Inpaint { task: args, mask, mask_spec } => {
            let y0: Tensor<f32> = load_image(&args.input)?;
            let [_, _, h, w] = y0.shape().dims();
            let (m, echo) = match (mask, mask_spec) {
                (Some(path), _) => {
                    let raw: Tensor<f32> = load_image(path)?;
                    if raw.shape().channels != 1 {
                        return Err(Error::Format(format!("{}: mask must be grayscale", path.display())));
                    }
                    (raw.map(|v| if v > 0.0 { 1.0 } else { 0.0 }), MaskEcho::File { file: path })
                }
                (None, Some(spec)) => {
                    let m = match *spec {
                        MaskSpec::Bernoulli(p) => bernoulli_mask(h, w, p, &mut Rng::new(args.seed).fork(2))?,
                        MaskSpec::Central(r) => central_mask(h, w, r)?,
                    };
                    (m, MaskEcho::Generated(*spec))
                }
                (None, None) => unreachable!("clap requires a mask"),
            };
            let masked = Tensor::from_fn(y0.shape(), |[_, c, y, x]| y0.at(0, c, y, x) * m.at(0, 0, y, x));
            let obs = DegradedObservation::masked(masked, m)?;
            run_task(task, args, obs, Some(echo), None)
        }
        Command::Superres { task: args, factor } => {
            let y0: Tensor<f32> = load_image(&args.input)?;
            let obs = DegradedObservation::downsampled(y0, *factor as usize)?;
            run_task(task, args, obs, None, Some(*factor))
        }
        Command::Enhance { task: args, smoothed_out } => run_enhance(args, smoothed_out.as_deref()),
        Command::MeasureFbc(args) => measure_fbc(args),
    }
}

fn run_config(task: &str, args: &TaskArgs, channels: usize, factor: Option<u32>) -> RunConfig {
    let upsample = match args.upsample {
        UpsampleKind::Gaussian => Upsampling::Gaussian {
            sigma: args.sigma_up,
            kernel_size: DEFAULT_GAUSSIAN_SIZE,
        },
        UpsampleKind::Bilinear => Upsampling::Bilinear,
        UpsampleKind::Nearest => Upsampling::NearestNeighbor,
    };
    let architecture = match args.architecture {
        ArchKind::Decoder => Architecture::Decoder,
        ArchKind::EncoderDecoder => Architecture::EncoderDecoder,
        ArchKind::Convnet => Architecture::ConvNet,
    };
    let mut cfg = match factor {
        Some(f) => RunConfig::superres(f as usize),
        None => RunConfig::default(),
    };
    if task == "enhance" {
        cfg.max_iters = 5_000;
        cfg.stopping.enabled = false;
    }
    if let Some(n) = args.iters {
        cfg.max_iters = n as usize;
    }
    if let Some(t) = args.stop {
        cfg.stopping.enabled = t == Toggle::On;
    }
    cfg.stopping = StoppingConfig {
        enabled: cfg.stopping.enabled,
        params: StoppingParams {
            window: args.window as usize,
            eps: args.eps,
            stride: args.stride as usize,
        },
    };
    cfg.network = NetworkSpec {
        architecture,
        channels: args.channels as usize,
        stages: args.stages as usize,
        upsample,
        lipschitz_lambda: (!args.unbounded).then_some(args.lambda),
        input_depth: args.input_depth as usize,
        out_channels: channels,
    };
    cfg.adam.lr = args.lr;
    cfg.trace_every = args.trace_every as usize;
    cfg.bands = args.bands as usize;
    cfg.seed = args.seed;
    cfg
}

fn default_out(input: &Path, task: &str) -> PathBuf {
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    PathBuf::from(format!("{stem}-{task}.png"))
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn write_echo(path: &Path, echo: &ConfigEcho) -> Result<(), Error> {
    let json = serde_json::to_string_pretty(echo).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, json + "\n")?;
    Ok(())
}

fn report_psnr(restored: &Tensor<f32>, reference: &Tensor<f32>) -> Result<(), Error> {
    println!("psnr: {:.4} dB", psnr(restored, reference)?);
    if restored.shape().channels == 3 {
        let to_tensor = |img: &Tensor<f32>| -> Result<Tensor<f64>, Error> {
            let l = luminance(img)?;
            Tensor::from_vec([1, 1, l.height, l.width], l.data)
        };
        println!("psnr_y: {:.4} dB", psnr(&to_tensor(restored)?, &to_tensor(reference)?)?);
    }
    Ok(())
}

fn run_task(
    task: &str,
    args: &TaskArgs,
    mut obs: DegradedObservation<f32>,
    mask: Option<MaskEcho>,
    factor: Option<u32>,
) -> Result<(), Error> {
    let channels = obs.y0.shape().channels;
    let cfg = run_config(task, args, channels, factor);
    if let Some(r) = &args.reference {
        obs = obs.with_reference(load_image(r)?)?;
    }
    let out = args.out.clone().unwrap_or_else(|| default_out(&args.input, task));
    let trace = args.trace.clone().unwrap_or_else(|| sibling(&out, "csv"));
    let echo_path = sibling(&out, "json");
    write_echo(
        &echo_path,
        &ConfigEcho {
            tool_version: env!("CARGO_PKG_VERSION"),
            subcommand: task,
            input: &args.input,
            reference: args.reference.as_deref(),
            mask,
            superres_factor: factor,
            outputs: vec![&out, &trace],
            run: &cfg,
        },
    )?;

    let result: RunResult<f32> = restore(&obs, &cfg)?;
    save_image(&result.restored, &out)?;
    write_trace_csv(&result.trace, &trace)?;
    println!("stop_iteration: {}", result.stop_iteration);
    if let Some(clean) = &obs.clean_reference {
        report_psnr(&result.restored, clean)?;
    }
    println!("output: {}", out.display());
    println!("trace: {}", trace.display());
    println!("config: {}", echo_path.display());
    Ok(())
}

fn run_enhance(args: &TaskArgs, smoothed_out: Option<&Path>) -> Result<(), Error> {
    let x0: Tensor<f32> = load_image(&args.input)?;
    let cfg = run_config("enhance", args, x0.shape().channels, None);
    let lambda = cfg.network.lipschitz_lambda.unwrap_or(f64::INFINITY);
    let out = args.out.clone().unwrap_or_else(|| default_out(&args.input, "enhance"));
    let trace = args.trace.clone().unwrap_or_else(|| sibling(&out, "csv"));
    let echo_path = sibling(&out, "json");
    let mut outputs = vec![out.as_path(), trace.as_path()];
    outputs.extend(smoothed_out);
    write_echo(
        &echo_path,
        &ConfigEcho {
            tool_version: env!("CARGO_PKG_VERSION"),
            subcommand: "enhance",
            input: &args.input,
            reference: args.reference.as_deref(),
            mask: None,
            superres_factor: None,
            outputs,
            run: &cfg,
        },
    )?;
    let (enhanced, fit) = enhance(&x0, lambda, cfg.max_iters, &cfg)?;
    save_image(&enhanced, &out)?;
    if let Some(p) = smoothed_out {
        save_image(&fit.restored, p)?;
    }
    write_trace_csv(&fit.trace, &trace)?;
    println!("stop_iteration: {}", fit.stop_iteration);
    if let Some(r) = &args.reference {
        report_psnr(&enhanced, &load_image(r)?)?;
    }
    println!("output: {}", out.display());
    println!("trace: {}", trace.display());
    println!("config: {}", echo_path.display());
    Ok(())
}

fn measure_fbc(args: &MeasureArgs) -> Result<(), Error> {
    let target: Tensor<f32> = load_image(&args.target)?;
    let reference: Option<Tensor<f32>> = args.reference.as_ref().map(load_image).transpose()?;
    let fbc_ref = FbcReference::new(&target, args.bands as usize, DEFAULT_EPS_REL)?;
    let mut frames: Vec<PathBuf> = fs::read_dir(&args.input)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    frames.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
    frames.sort();
    if frames.is_empty() {
        return Err(Error::InvalidArgument(format!("no PNG frames in {}", args.input.display())));
    }
    let out = args.out.clone().unwrap_or_else(|| args.input.join("fbc.csv"));
    frames.retain(|p| *p != out);

    let mut rows = Vec::with_capacity(frames.len());
    for (i, path) in frames.iter().enumerate() {
        let img: Tensor<f32> = load_image(path)?;
        let step = i + 1;
        let diff = img.zip_map(&target, |a, b| a - b)?;
        rows.push(TraceRecord {
            iteration: step,
            loss: diff.data().iter().map(|&d| (d as f64).powi(2)).sum::<f64>() / diff.len() as f64,
            psnr: reference.as_ref().map(|r| psnr(&img, r)).transpose()?,
            r_ratio: blur_sharpness_ratio(blurriness(&img)?, sharpness(&img)?),
            fbc: fbc_ref.measure(&img, step)?.values,
        });
    }
    write_trace_csv(&rows, &out)?;
    let echo_path = sibling(&out, "json");
    let echo = serde_json::json!({
        "tool_version": env!("CARGO_PKG_VERSION"),
        "subcommand": "measure-fbc",
        "input": args.input,
        "target": args.target,
        "reference": args.reference,
        "bands": args.bands,
        "eps_rel": DEFAULT_EPS_REL,
        "frames": frames,
        "outputs": [&out],
    });
    fs::write(&echo_path, serde_json::to_string_pretty(&echo).map_err(|e| Error::Format(e.to_string()))? + "\n")?;
    println!("frames: {}", rows.len());
    println!("output: {}", out.display());
    println!("config: {}", echo_path.display());
    Ok(())
}
