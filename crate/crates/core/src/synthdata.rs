//! Synthetic layered-earth models with salt bodies, convolutional seismic
//! synthesis, the low-pass + noise degradation, conditioning channels and
//! patch extraction.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensorcore::Scalar;
use crate::volume::{check_dims, ConditionField, ConditionMode, Volume};

pub const DEFAULT_CLASSES: usize = 31;
pub const DEFAULT_DT_MS: f64 = 8.0;
pub const DEFAULT_WAVELET_HZ: f64 = 25.0;
pub const DEFAULT_CUTOFF_HZ: f64 = 5.0;
pub const DEFAULT_NOISE_FRACTION: f64 = 0.5;
pub const DEFAULT_TAPS: usize = 257;

const IMPEDANCE_LO: f64 = 2e6;
const IMPEDANCE_HI: f64 = 8e6;

/// Deterministic generator for a seed and a stream index, so that one user
/// seed can drive several independent draws.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarthConfig {
    pub dims: Vec<usize>,
    pub classes: usize,
    /// Inclusive range the layer count is drawn from.
    pub layers: (usize, usize),
    /// Peak interface displacement, in samples.
    pub fold_amplitude: f64,
    pub salt_blobs: usize,
    /// Inclusive range of ellipsoid semi-axes as a fraction of each extent.
    pub salt_radius: (f64, f64),
}

impl EarthConfig {
    pub fn new(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            classes: DEFAULT_CLASSES,
            layers: (6, 14),
            fold_amplitude: 3.0,
            salt_blobs: 1,
            salt_radius: (0.08, 0.2),
        }
    }
}

/// Axis-aligned salt ellipsoid in grid coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SaltBody {
    pub center: Vec<f64>,
    pub semi_axes: Vec<f64>,
}

impl SaltBody {
    pub fn contains(&self, idx: &[usize]) -> bool {
        idx.iter()
            .zip(self.center.iter().zip(&self.semi_axes))
            .map(|(&i, (&c, &r))| ((i as f64 - c) / r).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EarthModel {
    pub dims: Vec<usize>,
    pub class_count: usize,
    pub salt_class: usize,
    pub classes: Vec<usize>,
    pub impedance: Vec<f64>,
    pub salt_bodies: Vec<SaltBody>,
}

/// Impedance band `[lo, hi)` of a lithology class.
pub fn impedance_band(class: usize, class_count: usize) -> (f64, f64) {
    let w = (IMPEDANCE_HI - IMPEDANCE_LO) / class_count as f64;
    let lo = IMPEDANCE_LO + w * class as f64;
    (lo, lo + w)
}

fn unravel(mut flat: usize, dims: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; dims.len()];
    for a in (0..dims.len()).rev() {
        idx[a] = flat % dims[a];
        flat /= dims[a];
    }
    idx
}

pub fn generate_earth_model(cfg: &EarthConfig, seed: u64) -> Result<EarthModel> {
    check_dims(&cfg.dims)?;
    if cfg.classes < 2 {
        return Err(Error::Parameter(format!("need at least 2 classes, got {}", cfg.classes)));
    }
    let (lmin, lmax) = cfg.layers;
    if lmin == 0 || lmin > lmax {
        return Err(Error::Parameter(format!("invalid layer-count range {lmin}..={lmax}")));
    }
    let depth = cfg.dims[0];
    if lmax > depth {
        return Err(Error::Parameter(format!("{lmax} layers do not fit {depth} depth samples")));
    }
    let (rmin, rmax) = cfg.salt_radius;
    if cfg.salt_blobs > 0 && !(rmin > 0.0 && rmin <= rmax && rmax <= 0.5) {
        return Err(Error::Parameter(format!("salt radius range ({rmin}, {rmax}) must lie in (0, 0.5]")));
    }
    if !cfg.fold_amplitude.is_finite() || cfg.fold_amplitude < 0.0 {
        return Err(Error::Parameter(format!("fold amplitude {} must be non-negative", cfg.fold_amplitude)));
    }

    let mut rng = seeded_rng(seed, 0);
    let n_layers = rng.random_range(lmin..=lmax);
    let mut tops: Vec<usize> = rand::seq::index::sample(&mut rng, depth - 1, n_layers - 1)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    tops.sort_unstable();

    let salt_class = cfg.classes - 1;
    let mut layer_class = Vec::with_capacity(n_layers);
    let mut layer_imp = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let class = rng.random_range(0..salt_class);
        let (lo, hi) = impedance_band(class, cfg.classes);
        layer_class.push(class);
        layer_imp.push(lo + (hi - lo) * rng.random::<f64>());
    }

    // one shared fold surface keeps interfaces from crossing
    let lateral = &cfg.dims[1..];
    let waves: Vec<(f64, f64)> = lateral
        .iter()
        .map(|&n| {
            let wavelength = n as f64 * (0.5 + 1.5 * rng.random::<f64>());
            (2.0 * PI / wavelength, 2.0 * PI * rng.random::<f64>())
        })
        .collect();
    let fold = |idx: &[usize]| -> f64 {
        let s: f64 = idx.iter().zip(&waves).map(|(&u, &(k, ph))| (k * u as f64 + ph).sin()).sum();
        cfg.fold_amplitude * s / waves.len() as f64
    };

    let total: usize = cfg.dims.iter().product();
    let mut classes = vec![0; total];
    let mut impedance = vec![0.0; total];
    for (flat, (cls, imp)) in classes.iter_mut().zip(impedance.iter_mut()).enumerate() {
        let idx = unravel(flat, &cfg.dims);
        let shift = fold(&idx[1..]);
        let z = idx[0] as f64;
        let layer = tops.iter().filter(|&&t| t as f64 + shift <= z).count();
        *cls = layer_class[layer];
        *imp = layer_imp[layer];
    }

    let (salt_lo, salt_hi) = impedance_band(salt_class, cfg.classes);
    let salt_imp = 0.5 * (salt_lo + salt_hi);
    let mut salt_bodies = Vec::with_capacity(cfg.salt_blobs);
    for _ in 0..cfg.salt_blobs {
        let mut center = Vec::with_capacity(cfg.dims.len());
        let mut semi_axes = Vec::with_capacity(cfg.dims.len());
        for &n in &cfg.dims {
            let extent = (n - 1) as f64;
            let r = (rmin + (rmax - rmin) * rng.random::<f64>()) * n as f64;
            let r = r.clamp(0.5, (extent / 2.0).max(0.5));
            let span = (extent - 2.0 * r).max(0.0);
            center.push(r + span * rng.random::<f64>());
            semi_axes.push(r);
        }
        salt_bodies.push(SaltBody { center, semi_axes });
    }
    if !salt_bodies.is_empty() {
        for flat in 0..total {
            let idx = unravel(flat, &cfg.dims);
            if salt_bodies.iter().any(|b| b.contains(&idx)) {
                classes[flat] = salt_class;
                impedance[flat] = salt_imp;
            }
        }
    }

    Ok(EarthModel { dims: cfg.dims.clone(), class_count: cfg.classes, salt_class, classes, impedance, salt_bodies })
}

/// Ricker wavelet `(1 - 2π²f²t²)·exp(-π²f²t²)` sampled every `dt_ms` on
/// `[-1.5/f, 1.5/f]`; element `len/2` is `t = 0`.
pub fn ricker(peak_hz: f64, dt_ms: f64) -> Vec<f64> {
    let dt = dt_ms / 1000.0;
    let half = (1.5 / peak_hz / dt).ceil() as i64;
    (-half..=half)
        .map(|j| {
            let a = (PI * peak_hz * j as f64 * dt).powi(2);
            (1.0 - 2.0 * a) * (-a).exp()
        })
        .collect()
}

/// Normal-incidence reflection coefficients down axis 0; the last sample of
/// every trace is zero.
pub fn reflectivity(model: &EarthModel) -> Result<Volume<f64>> {
    if let Some(p) = model.impedance.iter().position(|&z| !(z > 0.0 && z.is_finite())) {
        return Err(Error::Data(format!("impedance {} at cell {p} is not positive", model.impedance[p])));
    }
    let depth = model.dims[0];
    let plane: usize = model.dims[1..].iter().product();
    let z = &model.impedance;
    let mut r = vec![0.0; z.len()];
    for i in 0..depth - 1 {
        for p in 0..plane {
            let (a, b) = (z[i * plane + p], z[(i + 1) * plane + p]);
            r[i * plane + p] = (b - a) / (b + a);
        }
    }
    Volume::new(model.dims.clone(), r, 0.0)
}

/// Same-length convolution of every axis-0 trace with a centered kernel,
/// treating samples outside the trace as zero.
fn convolve_traces(data: &[f64], dims: &[usize], kernel: &[f64]) -> Vec<f64> {
    let depth = dims[0];
    let plane: usize = dims[1..].iter().product();
    let half = (kernel.len() / 2) as i64;
    let mut out = vec![0.0; data.len()];
    for i in 0..depth as i64 {
        for (j, &w) in kernel.iter().enumerate() {
            let src = i - (j as i64 - half);
            if src < 0 || src >= depth as i64 {
                continue;
            }
            let (o, s) = (i as usize * plane, src as usize * plane);
            for p in 0..plane {
                out[o + p] += w * data[s + p];
            }
        }
    }
    out
}

/// Convolutional seismogram of `model`, normalized to unit peak amplitude.
pub fn synthesize<T: Scalar>(model: &EarthModel, peak_hz: f64, dt_ms: f64) -> Result<Volume<T>> {
    if !(peak_hz > 0.0 && dt_ms > 0.0) {
        return Err(Error::Parameter(format!("wavelet {peak_hz} Hz at dt {dt_ms} ms")));
    }
    if peak_hz >= nyquist_hz(dt_ms) {
        return Err(Error::Parameter(format!(
            "wavelet peak {peak_hz} Hz is not below Nyquist {} Hz",
            nyquist_hz(dt_ms)
        )));
    }
    let r = reflectivity(model)?;
    let trace = convolve_traces(r.samples(), &model.dims, &ricker(peak_hz, dt_ms));
    let mut v = Volume::new(model.dims.clone(), trace, dt_ms as f32)?;
    v.normalize_peak();
    Ok(v.cast())
}

pub fn nyquist_hz(dt_ms: f64) -> f64 {
    500.0 / dt_ms
}

/// Hamming-windowed sinc low-pass taps with unit DC gain.
pub fn lowpass_taps(cutoff_hz: f64, dt_ms: f64, taps: usize) -> Result<Vec<f64>> {
    if taps % 2 == 0 {
        return Err(Error::Parameter(format!("filter length {taps} must be odd")));
    }
    if !(cutoff_hz > 0.0) || !(dt_ms > 0.0) || cutoff_hz >= nyquist_hz(dt_ms) {
        return Err(Error::Parameter(format!(
            "cutoff {cutoff_hz} Hz must lie in (0, {}) for dt {dt_ms} ms",
            nyquist_hz(dt_ms)
        )));
    }
    let fc = cutoff_hz * dt_ms / 1000.0;
    let half = (taps / 2) as f64;
    // built from |n| so the taps are exactly symmetric
    let mut h: Vec<f64> = (0..taps)
        .map(|i| {
            let n = (i as f64 - half).abs();
            let sinc = if n == 0.0 { 2.0 * fc } else { (2.0 * PI * fc * n).sin() / (PI * n) };
            let window = if taps == 1 { 1.0 } else { 0.54 + 0.46 * (PI * n / half).cos() };
            sinc * window
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    Ok(h)
}

/// Mirror an index into `0..n` (whole-sample symmetric extension).
fn reflect(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < n as i64 { m } else { period - m }) as usize
}

/// Zero-phase FIR along axis 0 with reflected edges.
pub fn apply_fir<T: Scalar>(volume: &Volume<T>, taps: &[f64]) -> Result<Volume<T>> {
    let dims = volume.dims();
    let depth = dims[0];
    let plane: usize = dims[1..].iter().product();
    let half = (taps.len() / 2) as i64;
    let x = volume.samples();
    let mut out = vec![0.0f64; x.len()];
    for i in 0..depth {
        let o = i * plane;
        for (j, &w) in taps.iter().enumerate() {
            let s = reflect(i as i64 + j as i64 - half, depth) * plane;
            for p in 0..plane {
                out[o + p] += w * x[s + p].as_f64();
            }
        }
    }
    Volume::new(dims.to_vec(), out.into_iter().map(T::from_f64_lossy).collect(), volume.dt_ms)
}

pub fn lowpass_filter<T: Scalar>(volume: &Volume<T>, cutoff_hz: f64, dt_ms: f64, taps: usize) -> Result<Volume<T>> {
    apply_fir(volume, &lowpass_taps(cutoff_hz, dt_ms, taps)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Every sample gets `U(-f·A, f·A)` added.
    #[default]
    Amplitude,
    /// A fraction `f` of samples is replaced by `U(-A, A)`.
    PixelFraction,
}

/// Uniform noise scaled by the volume's peak magnitude `A`, then clipped to
/// `[-1, 1]`.
pub fn add_uniform_noise<T: Scalar>(volume: &Volume<T>, fraction: f64, mode: NoiseMode, seed: u64) -> Result<Volume<T>> {
    if volume.is_empty() {
        return Err(Error::Parameter("cannot add noise to an empty volume".into()));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Parameter(format!("noise fraction {fraction} outside [0, 1]")));
    }
    let a = volume.max_abs().as_f64();
    let mut rng = seeded_rng(seed, 1);
    let mut out = volume.clone();
    for v in out.samples_mut() {
        let x = v.as_f64();
        let y = match mode {
            NoiseMode::Amplitude => x + fraction * a * (2.0 * rng.random::<f64>() - 1.0),
            NoiseMode::PixelFraction => {
                let hit = rng.random::<f64>() < fraction;
                let u = a * (2.0 * rng.random::<f64>() - 1.0);
                if hit {
                    u
                } else {
                    x
                }
            }
        };
        *v = T::from_f64_lossy(y.clamp(-1.0, 1.0));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradeConfig {
    pub cutoff_hz: f64,
    pub dt_ms: f64,
    pub taps: usize,
    pub noise_fraction: f64,
    pub noise_mode: NoiseMode,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        Self {
            cutoff_hz: DEFAULT_CUTOFF_HZ,
            dt_ms: DEFAULT_DT_MS,
            taps: DEFAULT_TAPS,
            noise_fraction: DEFAULT_NOISE_FRACTION,
            noise_mode: NoiseMode::Amplitude,
        }
    }
}

/// Low-pass then noise.
pub fn degrade<T: Scalar>(volume: &Volume<T>, cfg: &DegradeConfig, seed: u64) -> Result<Volume<T>> {
    let filtered = lowpass_filter(volume, cfg.cutoff_hz, cfg.dt_ms, cfg.taps)?;
    add_uniform_noise(&filtered, cfg.noise_fraction, cfg.noise_mode, seed)
}

/// Normalized Gaussian taps on `[-ceil(4σ), ceil(4σ)]`.
fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let half = (4.0 * sigma).ceil() as i64;
    let mut w: Vec<f64> = (-half..=half).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable Gaussian blur with clamp-to-edge boundaries.
fn gaussian_blur(data: &mut [f64], dims: &[usize], sigma: f64) {
    let w = gaussian_taps(sigma);
    let half = (w.len() / 2) as i64;
    let mut scratch = vec![0.0; data.len()];
    for axis in 0..dims.len() {
        let n = dims[axis];
        let stride: usize = dims[axis + 1..].iter().product();
        for (flat, out) in scratch.iter_mut().enumerate() {
            let i = (flat / stride) % n;
            let base = flat - i * stride;
            *out = w
                .iter()
                .enumerate()
                .map(|(j, &wj)| {
                    let s = (i as i64 + j as i64 - half).clamp(0, n as i64 - 1) as usize;
                    wj * data[base + s * stride]
                })
                .sum();
        }
        data.copy_from_slice(&scratch);
    }
}

/// One-hot lithology channels, or a blurred single salt-probability channel.
pub fn encode_condition<T: Scalar>(model: &EarthModel, mode: ConditionMode, blur_sigma: f64) -> Result<ConditionField<T>> {
    let k = model.class_count;
    if let Some(p) = model.classes.iter().position(|&c| c >= k) {
        return Err(Error::Data(format!("class id {} at cell {p} outside 0..{k}", model.classes[p])));
    }
    let spatial = model.classes.len();
    match mode {
        ConditionMode::Deterministic => {
            let mut data = vec![T::zero(); k * spatial];
            for (p, &c) in model.classes.iter().enumerate() {
                data[c * spatial + p] = T::one();
            }
            ConditionField::new(mode, k, model.dims.clone(), data)
        }
        ConditionMode::Probabilistic => {
            if !(blur_sigma >= 0.0 && blur_sigma.is_finite()) {
                return Err(Error::Parameter(format!("blur sigma {blur_sigma} must be non-negative")));
            }
            let mut p: Vec<f64> = model.classes.iter().map(|&c| f64::from(u8::from(c == model.salt_class))).collect();
            if blur_sigma > 0.0 {
                gaussian_blur(&mut p, &model.dims, blur_sigma);
            }
            let data = p.into_iter().map(|v| T::from_f64_lossy(v.clamp(0.0, 1.0))).collect();
            ConditionField::new(mode, 1, model.dims.clone(), data)
        }
    }
}

/// Co-located ground truth `x`, degraded input `z` and optional condition `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair<T> {
    pub truth: Volume<T>,
    pub degraded: Volume<T>,
    pub condition: Option<ConditionField<T>>,
    pub source_id: usize,
    pub offset: Vec<usize>,
}

fn grid_starts(n: usize, size: usize, stride: usize) -> Vec<usize> {
    (0..=n - size).step_by(stride).collect()
}

/// Regular-grid patches, optionally in a seeded shuffled order.
#[allow(clippy::too_many_arguments)]
pub fn extract_patches<T: Scalar>(
    x: &Volume<T>,
    z: &Volume<T>,
    c: Option<&ConditionField<T>>,
    patch: &[usize],
    stride: usize,
    source_id: usize,
    seed: u64,
    shuffle: bool,
) -> Result<Vec<PatchPair<T>>> {
    x.same_dims(z)?;
    if let Some(c) = c {
        if c.dims() != x.dims() {
            return Err(shape_err(format!("condition dims {:?} vs volume dims {:?}", c.dims(), x.dims())));
        }
    }
    if stride == 0 {
        return Err(Error::Parameter("patch stride must be positive".into()));
    }
    if patch.len() != x.rank() || patch.iter().zip(x.dims()).any(|(&p, &d)| p == 0 || p > d) {
        return Err(shape_err(format!("patch {patch:?} does not fit volume {:?}", x.dims())));
    }
    let starts: Vec<Vec<usize>> = patch.iter().zip(x.dims()).map(|(&p, &d)| grid_starts(d, p, stride)).collect();
    let mut offsets: Vec<Vec<usize>> = vec![vec![]];
    for axis in &starts {
        offsets = offsets
            .into_iter()
            .flat_map(|o| axis.iter().map(move |&s| [o.as_slice(), &[s]].concat()))
            .collect();
    }
    if shuffle {
        offsets.shuffle(&mut seeded_rng(seed, 2));
    }
    offsets
        .into_iter()
        .map(|off| {
            Ok(PatchPair {
                truth: x.crop(&off, patch)?,
                degraded: z.crop(&off, patch)?,
                condition: c.map(|c| c.crop(&off, patch)).transpose()?,
                source_id,
                offset: off,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub earth: EarthConfig,
    pub wavelet_hz: f64,
    pub degrade: DegradeConfig,
    pub condition_mode: ConditionMode,
    pub blur_sigma: f64,
}

impl SynthConfig {
    pub fn new(dims: &[usize]) -> Self {
        Self {
            earth: EarthConfig::new(dims),
            wavelet_hz: DEFAULT_WAVELET_HZ,
            degrade: DegradeConfig::default(),
            condition_mode: ConditionMode::Deterministic,
            blur_sigma: 0.0,
        }
    }
}

/// One generated `(model, x, z, c)` record.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub model: EarthModel,
    pub truth: Volume<T>,
    pub degraded: Volume<T>,
    pub condition: ConditionField<T>,
}

/// Generates a full record: model, peak-normalized truth, its degradation
/// and the conditioning channels.
pub fn generate_sample<T: Scalar>(cfg: &SynthConfig, seed: u64) -> Result<Sample<T>> {
    let model = generate_earth_model(&cfg.earth, seed)?;
    let truth: Volume<f64> = synthesize(&model, cfg.wavelet_hz, cfg.degrade.dt_ms)?;
    let degraded = degrade(&truth, &cfg.degrade, seed)?;
    let condition = encode_condition(&model, cfg.condition_mode, cfg.blur_sigma)?;
    Ok(Sample { truth: truth.cast(), degraded: degraded.cast(), condition, model })
}

/// Patches from `count` generated volumes (seeds `seed..seed+count`), in
/// generation order.
pub fn generate_patches<T: Scalar>(
    cfg: &SynthConfig,
    count: usize,
    patch: &[usize],
    stride: usize,
    seed: u64,
) -> Result<Vec<PatchPair<T>>> {
    let mut out = Vec::new();
    for i in 0..count {
        let s = generate_sample::<T>(cfg, seed.wrapping_add(i as u64))?;
        out.extend(extract_patches(&s.truth, &s.degraded, Some(&s.condition), patch, stride, i, 0, false)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
