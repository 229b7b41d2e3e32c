//! `seisgan`: synthesize data, degrade, train, enhance, evaluate, export and
//! search hyperparameters from the shell.
//!
//! Exit codes: 0 on success, 1 for runtime and data errors, 2 for usage and
//! validation errors.

mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "seisgan", version, about = "Conditional GAN enhancement of synthetic seismic images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (truth, degraded, condition) volume triples plus a manifest.
    Synth(SynthArgs),
    /// Lowpass filter a volume and add uniform noise.
    Degrade(DegradeArgs),
    /// Train a generator/discriminator pair from a JSON config.
    Train(TrainArgs),
    /// Run a trained generator over a degraded volume.
    Enhance(EnhanceArgs),
    /// PSNR, SSIM and MS-SSIM of a test volume against a reference.
    Eval(EvalArgs),
    /// Percentage gains of one metrics report over another.
    Gain(GainArgs),
    /// Write volume slices as 8-bit PGM images.
    Export(ExportArgs),
    /// Random hyperparameter search.
    Hpsearch(HpsearchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Deterministic,
    Probabilistic,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum NoiseModeArg {
    Amplitude,
    PixelFraction,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SsimModeArg {
    Volumetric,
    SliceAveraged,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Volume size, e.g. 64x64 or 32x32x32 (depth first).
    #[arg(long)]
    pub size: Dims,
    #[arg(long, default_value_t = seisgan::synthdata::DEFAULT_CLASSES)]
    pub classes: usize,
    #[arg(long, default_value_t = 1)]
    pub salt_blobs: usize,
    /// Base seed; sample i uses seed + i. Random (and printed) if omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "deterministic")]
    pub condition_mode: ModeArg,
    /// Gaussian blur of the salt mask for probabilistic conditions.
    #[arg(long, default_value_t = 2.0)]
    pub blur_sigma: f64,
    #[arg(long, default_value_t = seisgan::synthdata::DEFAULT_WAVELET_HZ)]
    pub wavelet_hz: f64,
    #[command(flatten)]
    pub degrade: DegradeFlags,
}

#[derive(Args)]
pub struct DegradeFlags {
    #[arg(long, default_value_t = seisgan::synthdata::DEFAULT_CUTOFF_HZ)]
    pub cutoff_hz: f64,
    /// Noise fraction in [0, 1].
    #[arg(long, default_value_t = seisgan::synthdata::DEFAULT_NOISE_FRACTION)]
    pub noise: f64,
    #[arg(long, value_enum, default_value = "amplitude")]
    pub noise_mode: NoiseModeArg,
    #[arg(long, default_value_t = seisgan::synthdata::DEFAULT_TAPS)]
    pub taps: usize,
}

#[derive(Args)]
pub struct DegradeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Sample interval; defaults to the one stored in the input.
    #[arg(long)]
    pub dt_ms: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub degrade: DegradeFlags,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long = "config")]
    pub config: PathBuf,
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out_ckpt: PathBuf,
    /// Replaces the config's total_steps.
    #[arg(long = "steps")]
    pub steps_override: Option<u64>,
    /// History file; defaults to history.json beside the checkpoint.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub cond: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub report_out: Option<PathBuf>,
    #[arg(long, default_value_t = seisgan::metrics::DEFAULT_DATA_RANGE)]
    pub data_range: f64,
    #[arg(long, value_enum, default_value = "volumetric")]
    pub ssim_mode: SsimModeArg,
}

#[derive(Args)]
pub struct GainArgs {
    #[arg(long)]
    pub baseline_report: PathBuf,
    #[arg(long)]
    pub model_report: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ExportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// "axis:index" or "all:mid"; ignored for 2D volumes.
    #[arg(long, default_value = "all:mid")]
    pub slice: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct HpsearchArgs {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    /// Training steps per trial.
    #[arg(long, default_value_t = 100)]
    pub budget: u64,
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Patch size; whole volumes when omitted.
    #[arg(long)]
    pub patch: Option<Dims>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Volume extents written as `64x64` or `16x16x16`.
#[derive(Clone, Debug)]
pub struct Dims(pub Vec<usize>);

impl std::str::FromStr for Dims {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let dims: Vec<usize> = s
            .split(['x', 'X'])
            .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad dimension {p:?} in {s:?}")))
            .collect::<Result<_, _>>()?;
        if !(2..=3).contains(&dims.len()) || dims.contains(&0) {
            return Err(format!("{s:?} must be 2 or 3 positive sizes like 64x64"));
        }
        Ok(Dims(dims))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Degrade(a) => commands::degrade(a),
        Command::Train(a) => commands::train(a),
        Command::Enhance(a) => commands::enhance(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gain(a) => commands::gain(a),
        Command::Export(a) => commands::export(a),
        Command::Hpsearch(a) => commands::hpsearch(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
