use std::fs;
use std::hash::{BuildHasher, Hasher};
use std::path::Path;
use std::time::Instant;

use serde::de::DeserializeOwned;

use seisgan::gannet::enhance as run_generator;
use seisgan::io::{self, DatasetFiles, Manifest, ManifestEntry, SliceSpec};
use seisgan::metrics::{self, MetricsReport, SsimMode};
use seisgan::synthdata::{self, extract_patches, generate_sample, DegradeConfig, NoiseMode, PatchPair, SynthConfig};
use seisgan::training::{self, Checkpoint, Dataset, PatchConfig, SearchSpace, TrainConfig};
use seisgan::{ConditionMode, Error};

use crate::{
    DegradeArgs, DegradeFlags, EnhanceArgs, EvalArgs, ExportArgs, GainArgs, HpsearchArgs, ModeArg, NoiseModeArg,
    SsimModeArg, SynthArgs, TrainArgs,
};

pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Parameter(_) | Error::Spec(_) | Error::Contract(_) | Error::Space(_) => 2,
            _ => 1,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult = Result<(), CliError>;

fn seed_or_random(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = std::collections::hash_map::RandomState::new().build_hasher().finish();
        eprintln!("seed: {s}");
        s
    })
}

/// Strict JSON parse reporting the path of the offending field.
fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError { code: 1, message: format!("{}: {e}", path.display()) })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        CliError::usage(format!("{}: field `{at}`: {}", path.display(), e.into_inner()))
    })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(Error::from)?;
    bytes.push(b'\n');
    io::write_atomic(path, &bytes)?;
    Ok(())
}

fn degrade_config(f: &DegradeFlags, dt_ms: f64) -> Result<DegradeConfig, CliError> {
    if !(0.0..=1.0).contains(&f.noise) {
        return Err(CliError::usage(format!("--noise {} must lie in [0, 1]", f.noise)));
    }
    Ok(DegradeConfig {
        cutoff_hz: f.cutoff_hz,
        dt_ms,
        taps: f.taps,
        noise_fraction: f.noise,
        noise_mode: match f.noise_mode {
            NoiseModeArg::Amplitude => NoiseMode::Amplitude,
            NoiseModeArg::PixelFraction => NoiseMode::PixelFraction,
        },
    })
}

pub fn synth(a: SynthArgs) -> CliResult {
    let seed = seed_or_random(a.seed);
    let mut cfg = SynthConfig::new(&a.size.0);
    cfg.earth.classes = a.classes;
    cfg.earth.salt_blobs = a.salt_blobs;
    cfg.wavelet_hz = a.wavelet_hz;
    cfg.degrade = degrade_config(&a.degrade, synthdata::DEFAULT_DT_MS)?;
    cfg.condition_mode = match a.condition_mode {
        ModeArg::Deterministic => ConditionMode::Deterministic,
        ModeArg::Probabilistic => ConditionMode::Probabilistic,
    };
    cfg.blur_sigma = if cfg.condition_mode == ConditionMode::Probabilistic { a.blur_sigma } else { 0.0 };
    fs::create_dir_all(&a.out_dir).map_err(|e| CliError { code: 1, message: format!("{}: {e}", a.out_dir.display()) })?;
    let mut entries = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let s = seed.wrapping_add(i as u64);
        let sample = generate_sample::<f32>(&cfg, s)?;
        let e = ManifestEntry {
            seed: s,
            truth: format!("sample_{i:04}_truth.svol"),
            degraded: format!("sample_{i:04}_degraded.svol"),
            condition: Some(format!("sample_{i:04}_cond.scnd")),
        };
        io::write_volume(&a.out_dir.join(&e.truth), &sample.truth)?;
        io::write_volume(&a.out_dir.join(&e.degraded), &sample.degraded)?;
        io::write_condition(&a.out_dir.join(e.condition.as_ref().expect("set above")), &sample.condition)?;
        entries.push(e);
    }
    Manifest { synth: cfg, base_seed: seed, entries }.write(&a.out_dir)?;
    eprintln!("wrote {} samples to {}", a.count, a.out_dir.display());
    Ok(())
}

pub fn degrade(a: DegradeArgs) -> CliResult {
    let v = io::read_volume(&a.input)?;
    let seed = seed_or_random(a.seed);
    let cfg = degrade_config(&a.degrade, a.dt_ms.unwrap_or(v.dt_ms as f64))?;
    let out = synthdata::degrade(&v, &cfg, seed)?;
    io::write_volume(&a.out, &out)?;
    Ok(())
}

fn to_patches(files: Vec<DatasetFiles>, patch: Option<&PatchConfig>) -> Result<Vec<PatchPair<f32>>, CliError> {
    let mut out = Vec::new();
    for (i, f) in files.into_iter().enumerate() {
        let (dims, stride) = match patch {
            Some(p) => (p.dims.clone(), p.stride),
            None => (f.truth.dims().to_vec(), 1),
        };
        out.extend(extract_patches(&f.truth, &f.degraded, f.condition.as_ref(), &dims, stride, i, 0, false)?);
    }
    Ok(out)
}

fn load_patches(dir: &Path, conditional: bool, patch: Option<&PatchConfig>) -> Result<Dataset<f32>, CliError> {
    let files = io::load_dataset(dir, conditional).map_err(|e| match e {
        // a conditional run over unconditioned data is a usage problem
        Error::Data(m) if conditional && m.contains("condition") => CliError::usage(m),
        other => other.into(),
    })?;
    if files.is_empty() {
        return Err(CliError { code: 1, message: format!("{} lists no samples", dir.display()) });
    }
    Ok(Dataset::split(to_patches(files, patch)?))
}

pub fn train(a: TrainArgs) -> CliResult {
    let mut config: TrainConfig = read_json(&a.config)?;
    if let Some(s) = a.steps_override {
        config.total_steps = s;
    }
    config.validate()?;
    let mut ck = Checkpoint::<f32>::init(&config)?;
    let history = if config.total_steps == 0 {
        Vec::new()
    } else {
        let data = load_patches(&a.data_dir, config.is_conditional(), config.patch.as_ref())?;
        eprintln!("{} training / {} held-out patches", data.train.len(), data.heldout.len());
        ck.check_dataset(&data)?;
        let mut history = Vec::with_capacity(config.total_steps as usize);
        for _ in 0..config.total_steps {
            let h = ck.train_step(&data)?;
            if let Some(p) = h.eval_psnr {
                eprintln!("step {}: d {:.4} g {:.4} held-out psnr {p:.2} dB", h.step, h.d_loss, h.g_loss);
            }
            history.push(h);
        }
        history
    };
    io::write_checkpoint(&a.out_ckpt, &ck)?;
    let history_path = a.history.unwrap_or_else(|| a.out_ckpt.with_file_name("history.json"));
    write_json(&history_path, &history)
}

pub fn enhance(a: EnhanceArgs) -> CliResult {
    let ck: Checkpoint<f32> = io::read_checkpoint(&a.ckpt)?;
    let z = io::read_volume(&a.input)?;
    let c = a.cond.as_deref().map(io::read_condition).transpose()?;
    let t = Instant::now();
    let g = run_generator(&ck.generator, &z, c.as_ref())?;
    let secs = t.elapsed().as_secs_f64().max(1e-9);
    eprintln!("{:.0} samples/sec", z.len() as f64 / secs);
    io::write_volume(&a.out, &g)?;
    Ok(())
}

pub fn eval(a: EvalArgs) -> CliResult {
    let x = io::read_volume(&a.reference)?;
    let g = io::read_volume(&a.test)?;
    let mode = match a.ssim_mode {
        SsimModeArg::Volumetric => SsimMode::Volumetric,
        SsimModeArg::SliceAveraged => SsimMode::SliceAveraged,
    };
    let report = metrics::evaluate_with(&x, &g, a.data_range, mode).map_err(|e| match e {
        Error::Parameter(m) => CliError { code: 1, message: m },
        other => other.into(),
    })?;
    let json = report.to_json()?;
    println!("{json}");
    if let Some(p) = a.report_out {
        io::write_atomic(&p, format!("{json}\n").as_bytes())?;
    }
    Ok(())
}

fn read_report(path: &Path) -> Result<MetricsReport, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError { code: 1, message: format!("{}: {e}", path.display()) })?;
    MetricsReport::from_json(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn gain(a: GainArgs) -> CliResult {
    let g = metrics::gains(&read_report(&a.baseline_report)?, &read_report(&a.model_report)?)?;
    let json = serde_json::to_string(&g).map_err(Error::from)?;
    println!("{json}");
    if let Some(p) = a.out {
        io::write_atomic(&p, format!("{json}\n").as_bytes())?;
    }
    Ok(())
}

pub fn export(a: ExportArgs) -> CliResult {
    let v = io::read_volume(&a.input)?;
    let spec: SliceSpec = a.slice.parse()?;
    let slices = io::slices(&v, spec)?;
    for (s, path) in slices.iter().zip(io::slice_paths(&a.out, &slices)) {
        let comment = format!("source {} slice {}", a.input.display(), s.label);
        io::write_atomic(&path, &io::encode_pgm(s.width, s.height, &s.pixels, &comment))?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

pub fn hpsearch(a: HpsearchArgs) -> CliResult {
    let space: SearchSpace = read_json(&a.space)?;
    space.validate()?;
    let seed = seed_or_random(a.seed);
    let patch = a.patch.map(|d| PatchConfig { stride: a.stride.unwrap_or(d.0[0]), dims: d.0 });
    let data = load_patches(&a.data_dir, space.condition_channels > 0, patch.as_ref())?;
    let results = training::hpsearch(&space, a.trials, a.budget, &data, seed)?;
    for r in &results {
        eprintln!("trial {}: ssim {:.4}", r.trial, r.score);
    }
    write_json(&a.out, &results)
}
