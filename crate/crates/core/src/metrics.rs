//! Image quality metrics: PSNR, SSIM, MS-SSIM and percentage gains.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::tensorcore::Scalar;
use crate::volume::Volume;

pub const DEFAULT_DATA_RANGE: f64 = 2.0;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Gaussian window of SSIM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub size: usize,
    pub sigma: f64,
}

impl Window {
    /// 11 wide for images, 7 wide for volumes, both with sigma 1.5.
    pub fn for_rank(rank: usize) -> Self {
        let size = if rank == 3 { 7 } else { 11 };
        Self { size, sigma: 1.5 }
    }

    /// Normalized 1-D taps; the n-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let c = (self.size as f64 - 1.0) / 2.0;
        let mut g: Vec<f64> =
            (0..self.size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * self.sigma * self.sigma)).exp()).collect();
        let s: f64 = g.iter().sum();
        g.iter_mut().for_each(|v| *v /= s);
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SsimMode {
    /// One window spanning every axis.
    #[default]
    Volumetric,
    /// Mean of 2-D SSIM over the axis-0 slices of a volume.
    SliceAveraged,
}

fn check_pair<T: Scalar>(x: &Volume<T>, g: &Volume<T>, data_range: f64) -> Result<()> {
    x.same_dims(g)?;
    if !(data_range > 0.0 && data_range.is_finite()) {
        return Err(Error::Parameter(format!("data range {data_range} must be positive")));
    }
    Ok(())
}

fn to_f64<T: Scalar>(v: &Volume<T>) -> Vec<f64> {
    v.samples().iter().map(|s| s.as_f64()).collect()
}

pub fn mse<T: Scalar>(x: &Volume<T>, g: &Volume<T>) -> Result<f64> {
    x.same_dims(g)?;
    let n = x.len() as f64;
    Ok(x.samples().iter().zip(g.samples()).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum::<f64>() / n)
}

/// `10·log10(R²/MSE)`; identical inputs give `f64::INFINITY`.
pub fn psnr<T: Scalar>(x: &Volume<T>, g: &Volume<T>, data_range: f64) -> Result<f64> {
    check_pair(x, g, data_range)?;
    let m = mse(x, g)?;
    Ok(if m == 0.0 { f64::INFINITY } else { 10.0 * (data_range * data_range / m).log10() })
}

/// Correlates every axis with `taps`, keeping only positions where the
/// window lies inside the grid.
fn filter_valid(data: &[f64], dims: &[usize], taps: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut cur = data.to_vec();
    let mut cur_dims = dims.to_vec();
    let k = taps.len();
    for axis in 0..dims.len() {
        let n = cur_dims[axis];
        let outer: usize = cur_dims[..axis].iter().product();
        let inner: usize = cur_dims[axis + 1..].iter().product();
        let m = n + 1 - k;
        let mut out = vec![0.0; outer * m * inner];
        for o in 0..outer {
            for i in 0..m {
                let dst = &mut out[(o * m + i) * inner..(o * m + i + 1) * inner];
                for (j, &w) in taps.iter().enumerate() {
                    let src = &cur[(o * n + i + j) * inner..(o * n + i + j + 1) * inner];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            }
        }
        cur = out;
        cur_dims[axis] = m;
    }
    (cur, cur_dims)
}

/// Means of the SSIM map and of its contrast-structure factor.
fn ssim_components(x: &[f64], y: &[f64], dims: &[usize], window: Window, data_range: f64) -> (f64, f64) {
    let taps = window.taps();
    let xx: Vec<f64> = x.iter().map(|a| a * a).collect();
    let yy: Vec<f64> = y.iter().map(|a| a * a).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (mx, _) = filter_valid(x, dims, &taps);
    let (my, _) = filter_valid(y, dims, &taps);
    let (exx, _) = filter_valid(&xx, dims, &taps);
    let (eyy, _) = filter_valid(&yy, dims, &taps);
    let (exy, _) = filter_valid(&xy, dims, &taps);
    let c1 = (K1 * data_range).powi(2);
    let c2 = (K2 * data_range).powi(2);
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mx.len() {
        let (a, b) = (mx[i], my[i]);
        let vx = exx[i] - a * a;
        let vy = eyy[i] - b * b;
        let cov = exy[i] - a * b;
        let l = (2.0 * a * b + c1) / (a * a + b * b + c1);
        let c = (2.0 * cov + c2) / (vx + vy + c2);
        ssim += l * c;
        cs += c;
    }
    let n = mx.len() as f64;
    (ssim / n, cs / n)
}

fn check_window(dims: &[usize], window: Window) -> Result<()> {
    if dims.iter().any(|&d| d < window.size) {
        return Err(Error::Parameter(format!(
            "dims {dims:?} are smaller than the {}-wide SSIM window",
            window.size
        )));
    }
    Ok(())
}

/// Mean SSIM with the default window for the volume's rank.
pub fn ssim<T: Scalar>(x: &Volume<T>, g: &Volume<T>, data_range: f64) -> Result<f64> {
    ssim_with(x, g, data_range, Window::for_rank(x.rank()), SsimMode::Volumetric)
}

pub fn ssim_with<T: Scalar>(x: &Volume<T>, g: &Volume<T>, data_range: f64, window: Window, mode: SsimMode) -> Result<f64> {
    check_pair(x, g, data_range)?;
    let dims = x.dims();
    let (a, b) = (to_f64(x), to_f64(g));
    if mode == SsimMode::SliceAveraged && dims.len() == 3 {
        let plane = &dims[1..];
        check_window(plane, window)?;
        let sz = plane[0] * plane[1];
        let total: f64 = (0..dims[0])
            .map(|s| ssim_components(&a[s * sz..(s + 1) * sz], &b[s * sz..(s + 1) * sz], plane, window, data_range).0)
            .sum();
        return Ok(total / dims[0] as f64);
    }
    check_window(dims, window)?;
    Ok(ssim_components(&a, &b, dims, window, data_range).0)
}

/// 2× average pooling on every axis; odd trailing samples are dropped.
pub fn downsample2(data: &[f64], dims: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let out_dims: Vec<usize> = dims.iter().map(|d| d / 2).collect();
    let total: usize = out_dims.iter().product();
    let corners = 1usize << dims.len();
    let mut out = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut idx = vec![0; dims.len()];
        for a in (0..dims.len()).rev() {
            idx[a] = rem % out_dims[a];
            rem /= out_dims[a];
        }
        let mut s = 0.0;
        for corner in 0..corners {
            let mut off = 0;
            for a in 0..dims.len() {
                off = off * dims[a] + 2 * idx[a] + ((corner >> a) & 1);
            }
            s += data[off];
        }
        out.push(s / corners as f64);
    }
    (out, out_dims)
}

/// Scales usable by MS-SSIM: scale `j` needs every extent halved `j`
/// times to still hold the window. At most five.
pub fn ms_ssim_scales(dims: &[usize], window: Window) -> usize {
    (0..MS_SSIM_WEIGHTS.len()).take_while(|&j| dims.iter().all(|&d| d >> j >= window.size)).count()
}

/// Weights for `scales` levels, renormalized to sum to one.
pub fn ms_ssim_weights(scales: usize) -> Vec<f64> {
    let w = &MS_SSIM_WEIGHTS[..scales];
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Contrast-structure means at every scale but the last, full SSIM at the
/// coarsest, combined as a weighted geometric mean with negatives clamped
/// to zero.
pub fn ms_ssim<T: Scalar>(x: &Volume<T>, g: &Volume<T>, data_range: f64) -> Result<f64> {
    check_pair(x, g, data_range)?;
    let window = Window::for_rank(x.rank());
    let scales = ms_ssim_scales(x.dims(), window);
    if scales < 2 {
        return Err(Error::Parameter(format!(
            "dims {:?} support {scales} MS-SSIM scale(s); use single-scale SSIM",
            x.dims()
        )));
    }
    let weights = ms_ssim_weights(scales);
    let (mut a, mut b, mut dims) = (to_f64(x), to_f64(g), x.dims().to_vec());
    let mut result = 1.0;
    for (j, &w) in weights.iter().enumerate() {
        let (s, cs) = ssim_components(&a, &b, &dims, window, data_range);
        let term = if j + 1 == scales { s } else { cs };
        result *= term.max(0.0).powf(w);
        if j + 1 < scales {
            let (na, nd) = downsample2(&a, &dims);
            b = downsample2(&b, &dims).0;
            a = na;
            dims = nd;
        }
    }
    Ok(result)
}

/// `100·(value − baseline)/baseline`.
pub fn percent_gain(baseline: f64, value: f64) -> Result<f64> {
    if baseline == 0.0 || !baseline.is_finite() {
        return Err(Error::Domain(format!("percent gain needs a finite non-zero baseline, got {baseline}")));
    }
    Ok(100.0 * (value - baseline) / baseline)
}

mod psnr_serde {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    #[serde(with = "psnr_serde")]
    pub psnr_db: f64,
    pub ssim: f64,
    pub ms_ssim: Option<f64>,
    pub data_range: f64,
    /// Why `ms_ssim` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ms_ssim_skipped: Option<String>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub fn evaluate<T: Scalar>(reference: &Volume<T>, test: &Volume<T>, data_range: f64) -> Result<MetricsReport> {
    evaluate_with(reference, test, data_range, SsimMode::Volumetric)
}

pub fn evaluate_with<T: Scalar>(reference: &Volume<T>, test: &Volume<T>, data_range: f64, mode: SsimMode) -> Result<MetricsReport> {
    check_pair(reference, test, data_range)?;
    let psnr_db = psnr(reference, test, data_range)?;
    let ssim = ssim_with(reference, test, data_range, Window::for_rank(reference.rank()), mode)?;
    let (ms_ssim, ms_ssim_skipped) = match ms_ssim(reference, test, data_range) {
        Ok(v) => (Some(v), None),
        Err(Error::Parameter(reason)) => (None, Some(reason)),
        Err(e) => return Err(e),
    };
    Ok(MetricsReport { psnr_db, ssim, ms_ssim, data_range, ms_ssim_skipped })
}

/// Percentage gain of `model` over `baseline` for each metric both carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub psnr_gain_pct: Option<f64>,
    pub ssim_gain_pct: Option<f64>,
    pub ms_ssim_gain_pct: Option<f64>,
}

pub fn gains(baseline: &MetricsReport, model: &MetricsReport) -> Result<GainReport> {
    let finite_pair = |b: f64, v: f64| -> Result<Option<f64>> {
        if b.is_finite() && v.is_finite() {
            percent_gain(b, v).map(Some)
        } else {
            Ok(None)
        }
    };
    Ok(GainReport {
        psnr_gain_pct: finite_pair(baseline.psnr_db, model.psnr_db)?,
        ssim_gain_pct: finite_pair(baseline.ssim, model.ssim)?,
        ms_ssim_gain_pct: match (baseline.ms_ssim, model.ms_ssim) {
            (Some(b), Some(v)) => Some(percent_gain(b, v)?),
            _ => None,
        },
    })
}
