//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Error;
use crate::image::{GrayImage, Region};
use crate::io::{self, BitDepth};
use crate::metrics::{to_csv, MetricReport};
use crate::noise::{
    estimate_pg_params, estimate_sigma_mad, synthesize_awgn, synthesize_poisson_gaussian, GatTable, GaussianNoiseSpec,
    PoissonGaussianParams,
};
use crate::pipeline::{denoise_gaussian, denoise_poisson_gaussian, denoise_raw, evaluate_raw, simulate_raw, DenoiseConfig, RawMosaic};
use crate::va_filter::{IciConfig, WienerConfig};

#[derive(Debug, Parser)]
#[command(name = "nlpca-denoise", version, about = "Texture-preserving nonlocal PCA image denoiser")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Denoise a grayscale image or a raw mosaic.
    Denoise(DenoiseArgs),
    /// Add synthetic noise to an image.
    AddNoise(AddNoiseArgs),
    /// Simulate a noisy RGGB raw mosaic from an RGB image.
    SimulateRaw(SimulateRawArgs),
    /// Print PSNR/SSIM of an estimate against a reference as CSV.
    Evaluate(EvaluateArgs),
    /// Write the exact unbiased inverse table of the Anscombe transform.
    GatTable(GatTableArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Gaussian,
    Pg,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    /// Gaussian noise standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Poisson gain.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Gaussian std of the Poisson-Gaussian model.
    #[arg(long)]
    pub b: Option<f64>,
    /// Pedestal.
    #[arg(long)]
    pub p: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long, default_value_t = 8)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 128)]
    pub window: usize,
    #[arg(long, default_value_t = 96)]
    pub step: usize,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long, default_value_t = 1.1)]
    pub mu: f64,
    #[arg(long, default_value_t = 0.7)]
    pub beta: f64,
    #[arg(long, default_value_t = 2.0)]
    pub gamma_ici: f64,
    #[arg(long, default_value_t = 200)]
    pub lt: usize,
    #[arg(long, default_value_t = 0.7)]
    pub rho: f64,
    #[arg(long, default_value_t = 1.3e-10)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all hardware threads).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Directory for per-window cluster label maps.
    #[arg(long)]
    pub dump_clusters: Option<PathBuf>,
}

impl ConfigArgs {
    pub fn to_config(&self) -> DenoiseConfig {
        DenoiseConfig {
            patch_size: self.patch_size,
            window_size: self.window,
            window_step: self.step,
            patch_stride: self.stride,
            mu: self.mu,
            ici: IciConfig { gamma: self.gamma_ici, ..IciConfig::default() },
            wiener: WienerConfig { beta: self.beta, ..WienerConfig::default() },
            size_gate: self.lt,
            rho_amp: self.rho,
            epsilon: self.epsilon,
            seed: self.seed,
            threads: self.threads,
            dump_clusters: self.dump_clusters.clone(),
        }
    }
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    #[arg(long, value_enum, default_value_t = Mode::Gaussian)]
    pub mode: Mode,
    #[command(flatten)]
    pub noise: NoiseArgs,
    /// Flat region `row,col,height,width` for Poisson-Gaussian parameter estimation.
    #[arg(long, value_parser = parse_region)]
    pub flat_region: Option<Region>,
    /// Treat the input as an RGGB mosaic with a JSON sidecar.
    #[arg(long)]
    pub raw: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
    pub input: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct AddNoiseArgs {
    #[arg(long, value_enum, default_value_t = Mode::Gaussian)]
    pub mode: Mode,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    pub input: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateRawArgs {
    #[arg(long)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    pub b: f64,
    #[arg(long, default_value_t = 0.0)]
    pub p: f64,
    #[arg(long, default_value_t = 1.0)]
    pub r_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the noise-free mosaic here.
    #[arg(long)]
    pub clean: Option<PathBuf>,
    pub input: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Peak value (default: the reference file's full scale).
    #[arg(long)]
    pub peak: Option<f64>,
    /// Average over the four CFA planes of raw mosaics.
    #[arg(long)]
    pub raw: bool,
    /// Label for the image column (default: the estimate's file name).
    #[arg(long)]
    pub image: Option<String>,
    /// Label for the sigma column.
    #[arg(long, default_value = "")]
    pub sigma: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    pub reference: PathBuf,
    pub estimate: PathBuf,
}

#[derive(Debug, Args)]
pub struct GatTableArgs {
    #[arg(long)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    pub b: f64,
    #[arg(long, default_value_t = 0.0)]
    pub p: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_region(s: &str) -> Result<Region, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [row, col, height, width] => Ok(Region::new(row, col, height, width)),
        _ => Err("expected row,col,height,width".into()),
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult = Result<(), Failure>;

fn usage<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Usage(msg.into()))
}

fn depth_for(img: &GrayImage) -> BitDepth {
    if img.peak() > 255.0 {
        BitDepth::Sixteen
    } else {
        BitDepth::Eight
    }
}

fn pg_params(noise: &NoiseArgs, alpha: f64) -> Result<PoissonGaussianParams, Failure> {
    Ok(PoissonGaussianParams::new(alpha, noise.b.unwrap_or(0.0), noise.p.unwrap_or(0.0))?)
}

fn emit(text: &str, out: Option<&Path>) -> CliResult {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure::Runtime(e.into())),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| Failure::Runtime(e.into())),
    }
}

fn cmd_denoise(args: &DenoiseArgs) -> CliResult {
    let cfg = args.config.to_config();
    if args.mode == Mode::Pg && !args.raw && args.noise.alpha.is_none() && args.flat_region.is_none() {
        return usage("--mode pg requires --alpha (or --flat-region to estimate it)");
    }
    if args.raw {
        let mut raw = RawMosaic::load(&args.input)?;
        if let Some(alpha) = args.noise.alpha {
            raw.params = pg_params(&args.noise, alpha)?;
        }
        let out = denoise_raw(&raw, &cfg)?;
        out.save(&args.output)?;
        return Ok(());
    }

    let img = io::read_gray(&args.input)?;
    let out = match args.mode {
        Mode::Gaussian => {
            let sigma = match args.noise.sigma {
                Some(s) => s,
                None => {
                    let s = estimate_sigma_mad(&img)?;
                    eprintln!("estimated sigma = {s:.4}");
                    s
                }
            };
            denoise_gaussian(&img, sigma, &cfg)?
        }
        Mode::Pg => {
            let params = match (args.noise.alpha, args.flat_region) {
                (Some(alpha), _) => pg_params(&args.noise, alpha)?,
                (None, Some(region)) => {
                    let p = estimate_pg_params(&img, region)?;
                    eprintln!("estimated alpha = {:.6}, b = {:.6}, p = {:.6}", p.alpha, p.b, p.p);
                    p
                }
                (None, None) => unreachable!("checked above"),
            };
            denoise_poisson_gaussian(&img, &params, &cfg, None)?
        }
    };
    io::write_gray(&out, &args.output, depth_for(&img))?;
    Ok(())
}

fn cmd_add_noise(args: &AddNoiseArgs) -> CliResult {
    match args.mode {
        Mode::Gaussian if args.noise.sigma.is_none() => return usage("--mode gaussian requires --sigma"),
        Mode::Pg if args.noise.alpha.is_none() => return usage("--mode pg requires --alpha"),
        _ => {}
    }
    let img = io::read_gray(&args.input)?;
    let noisy = match (args.mode, args.noise.sigma, args.noise.alpha) {
        (Mode::Gaussian, Some(sigma), _) => synthesize_awgn(&img, &GaussianNoiseSpec::new(sigma, args.seed)?),
        (Mode::Pg, _, Some(alpha)) => synthesize_poisson_gaussian(&img, &pg_params(&args.noise, alpha)?, args.seed)?,
        _ => unreachable!("checked above"),
    };
    io::write_gray(&noisy, &args.output, depth_for(&img))?;
    Ok(())
}

fn cmd_simulate_raw(args: &SimulateRawArgs) -> CliResult {
    let rgb = io::read_rgb(&args.input)?;
    let params = PoissonGaussianParams::new(args.alpha, args.b, args.p)?;
    let (noisy, clean) = simulate_raw(&rgb, args.r_max, &params, args.seed)?;
    noisy.save(&args.output)?;
    if let Some(path) = &args.clean {
        clean.save(path)?;
    }
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> CliResult {
    let label = args.image.clone().unwrap_or_else(|| {
        args.estimate.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    });
    let report = if args.raw {
        let reference = RawMosaic::load(&args.reference)?;
        let estimate = RawMosaic::load(&args.estimate)?;
        let peak = args.peak.unwrap_or(reference.r_max);
        let avg = evaluate_raw(&estimate.subimages(), &reference.subimages(), peak)?;
        MetricReport { image: label, sigma: args.sigma.clone(), psnr_db: avg.psnr_db, ssim: avg.ssim }
    } else {
        let reference = io::read_gray(&args.reference)?;
        let estimate = io::read_gray(&args.estimate)?;
        let peak = args.peak.unwrap_or(reference.peak());
        MetricReport::compute(&label, &args.sigma, &reference, &estimate, peak)?
    };
    emit(&to_csv(&[report]), args.out.as_deref())
}

fn cmd_gat_table(args: &GatTableArgs) -> CliResult {
    let params = PoissonGaussianParams::new(args.alpha, args.b, args.p)?;
    let table = GatTable::build(&params);
    let mut buf = Vec::new();
    table.write_to(&mut buf)?;
    emit(&String::from_utf8_lossy(&buf), args.out.as_deref())
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 usage error, 2 runtime error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Denoise(a) => cmd_denoise(a),
        Command::AddNoise(a) => cmd_add_noise(a),
        Command::SimulateRaw(a) => cmd_simulate_raw(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::GatTable(a) => cmd_gat_table(a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}
