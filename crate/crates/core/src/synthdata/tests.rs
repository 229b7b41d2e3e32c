use std::collections::VecDeque;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::*;

fn model_cfg(dims: &[usize], layers: usize, blobs: usize) -> EarthConfig {
    EarthConfig { layers: (layers, layers), salt_blobs: blobs, ..EarthConfig::new(dims) }
}

/// |H(f)| of a tap vector by a zero-padded FFT whose bins land on `freqs`.
fn response_db(taps: &[f64], dt_ms: f64, n: usize, freqs: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n).map(|i| Complex::new(taps.get(i).copied().unwrap_or(0.0), 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    freqs
        .iter()
        .map(|&f| {
            let bin = f * dt_ms / 1000.0 * n as f64;
            assert!((bin - bin.round()).abs() < 1e-9, "{f} Hz is not on an FFT bin");
            20.0 * buf[bin.round() as usize].norm().log10()
        })
        .collect()
}

#[test]
fn single_layer_without_salt_is_uniform() {
    let m = generate_earth_model(&model_cfg(&[32, 16], 1, 0), 7).unwrap();
    assert!(m.classes.iter().all(|&c| c == m.classes[0]));
    assert!(m.impedance.iter().all(|&z| z == m.impedance[0]));
}

#[test]
fn earth_model_is_deterministic() {
    let cfg = EarthConfig::new(&[40, 24]);
    let a = generate_earth_model(&cfg, 11).unwrap();
    let b = generate_earth_model(&cfg, 11).unwrap();
    assert_eq!(a, b);
    let c = generate_earth_model(&cfg, 12).unwrap();
    assert_ne!(a.classes, c.classes);
}

#[test]
fn classes_and_impedances_are_in_range() {
    let m = generate_earth_model(&EarthConfig::new(&[24, 10, 12]), 3).unwrap();
    for (&c, &z) in m.classes.iter().zip(&m.impedance) {
        assert!(c < m.class_count);
        let (lo, hi) = impedance_band(c, m.class_count);
        assert!(z >= lo && z <= hi, "class {c} impedance {z}");
    }
}

#[test]
fn too_many_layers_is_a_parameter_error() {
    let err = generate_earth_model(&model_cfg(&[8, 8], 9, 0), 0).unwrap_err();
    assert!(matches!(err, Error::Parameter(_)), "{err}");
}

#[test]
fn salt_cells_are_exactly_the_blob_union() {
    let cfg = EarthConfig { salt_radius: (0.05, 0.15), ..model_cfg(&[128, 128], 8, 3) };
    let m = generate_earth_model(&cfg, 5).unwrap();
    assert_eq!(m.salt_bodies.len(), 3);
    let (h, w) = (128usize, 128usize);
    let inside = |b: &SaltBody, y: usize, x: usize| {
        let dy = (y as f64 - b.center[0]) / b.semi_axes[0];
        let dx = (x as f64 - b.center[1]) / b.semi_axes[1];
        dy * dy + dx * dx <= 1.0
    };
    let mut union = 0;
    for y in 0..h {
        for x in 0..w {
            let expect = m.salt_bodies.iter().any(|b| inside(b, y, x));
            union += usize::from(expect);
            assert_eq!(m.classes[y * w + x] == m.salt_class, expect, "cell ({y}, {x})");
        }
    }

    // flood fill: every salt component is a connected piece of the union,
    // and there are no more components than blobs
    let mut seen = vec![false; h * w];
    let mut components = 0;
    let mut counted = 0;
    for start in 0..h * w {
        if seen[start] || m.classes[start] != m.salt_class {
            continue;
        }
        components += 1;
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(p) = queue.pop_front() {
            counted += 1;
            let (y, x) = (p / w, p % w);
            let nbrs = [(y.wrapping_sub(1), x), (y + 1, x), (y, x.wrapping_sub(1)), (y, x + 1)];
            for (ny, nx) in nbrs {
                if ny < h && nx < w {
                    let q = ny * w + nx;
                    if !seen[q] && m.classes[q] == m.salt_class {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
    }
    assert_eq!(counted, union);
    assert!((1..=3).contains(&components), "{components} components");

    let frac = union as f64 / (h * w) as f64;
    let lo = std::f64::consts::PI * 0.05 * 0.05 * 0.5;
    let hi = 3.0 * std::f64::consts::PI * 0.15 * 0.15;
    assert!(frac >= lo && frac <= hi, "salt fraction {frac} outside [{lo}, {hi}]");
}

#[test]
fn ricker_peak_is_one() {
    let w = ricker(25.0, 8.0);
    assert_eq!(w.len() % 2, 1);
    assert_eq!(w[w.len() / 2], 1.0);
    assert!(w.iter().all(|v| v.abs() <= 1.0));
}

#[test]
fn uniform_model_gives_silent_section() {
    let m = generate_earth_model(&model_cfg(&[32, 8], 1, 0), 1).unwrap();
    let v: Volume<f32> = synthesize(&m, 25.0, 8.0).unwrap();
    assert!(v.samples().iter().all(|&s| s == 0.0));
}

fn two_layer(depth: usize, width: usize, interface: usize) -> EarthModel {
    let mut impedance = vec![2e6; depth * width];
    impedance[interface * width..].fill(3e6);
    EarthModel {
        dims: vec![depth, width],
        class_count: 2,
        salt_class: 1,
        classes: vec![0; depth * width],
        impedance,
        salt_bodies: vec![],
    }
}

#[test]
fn single_interface_reproduces_the_wavelet() {
    let (depth, width, d) = (64, 3, 30);
    let m = two_layer(depth, width, d);
    let r = reflectivity(&m).unwrap();
    let coeff = (3e6 - 2e6) / (3e6 + 2e6);
    // the contrast sits between samples d-1 and d
    assert!((r.samples()[(d - 1) * width] - coeff).abs() < 1e-15);

    let v: Volume<f64> = synthesize(&m, 25.0, 8.0).unwrap();
    let f = 25.0;
    for i in 0..depth {
        let t = (i as f64 - (d - 1) as f64) * 0.008;
        let a = (std::f64::consts::PI * f * t).powi(2);
        let mut expect = (1.0 - 2.0 * a) * (-a).exp();
        if t.abs() > 1.5 / f + 0.008 {
            expect = 0.0;
        }
        // unit-peak normalization divides out the coefficient
        for p in 0..width {
            assert!((v.samples()[i * width + p] - expect).abs() < 1e-12, "sample {i}: {} vs {expect}", v.samples()[i * width + p]);
        }
    }
}

#[test]
fn synthesized_volume_is_peak_normalized() {
    let m = generate_earth_model(&EarthConfig::new(&[48, 20]), 9).unwrap();
    let v: Volume<f32> = synthesize(&m, 25.0, 8.0).unwrap();
    assert!((v.max_abs() - 1.0).abs() < 1e-6);
}

#[test]
fn non_positive_impedance_is_a_data_error() {
    let mut m = two_layer(8, 2, 4);
    m.impedance[3] = 0.0;
    assert!(matches!(reflectivity(&m), Err(Error::Data(_))));
}

#[test]
fn filter_frequency_response() {
    let taps = lowpass_taps(5.0, 8.0, DEFAULT_TAPS).unwrap();
    assert_eq!(taps.len(), 257);
    let db = response_db(&taps, 8.0, 1000, &[0.0, 1.0, 20.0]);
    assert!(db[0].abs() < 0.1, "DC {} dB", db[0]);
    assert!(db[1].abs() < 1.0, "1 Hz {} dB", db[1]);
    assert!(db[2] <= -40.0, "20 Hz {} dB", db[2]);
}

#[test]
fn filter_taps_are_symmetric() {
    let taps = lowpass_taps(5.0, 8.0, DEFAULT_TAPS).unwrap();
    for i in 0..taps.len() {
        assert_eq!(taps[i], taps[taps.len() - 1 - i]);
    }
}

#[test]
fn constant_volume_passes_unchanged() {
    let v = Volume::<f64>::new(vec![40, 3], vec![0.7; 120], 8.0).unwrap();
    let out = lowpass_filter(&v, 5.0, 8.0, DEFAULT_TAPS).unwrap();
    for &s in out.samples() {
        assert!((20.0 * (s / 0.7).log10()).abs() < 0.1);
    }
}

fn sinusoid(n: usize, hz: f64, dt_ms: f64) -> Volume<f64> {
    let s = (0..n).map(|i| (2.0 * std::f64::consts::PI * hz * i as f64 * dt_ms / 1000.0).sin()).collect();
    Volume::new(vec![n, 1], s, dt_ms as f32).unwrap()
}

#[test]
fn sinusoids_in_the_interior() {
    // interior samples of a long trace see the full filter without edges
    let n = 2000;
    let lo = lowpass_filter(&sinusoid(n, 1.0, 8.0), 5.0, 8.0, DEFAULT_TAPS).unwrap();
    let hi = lowpass_filter(&sinusoid(n, 20.0, 8.0), 5.0, 8.0, DEFAULT_TAPS).unwrap();
    let rms = |v: &Volume<f64>| {
        let s = &v.samples()[500..1500];
        (s.iter().map(|x| x * x).sum::<f64>() / s.len() as f64).sqrt()
    };
    let reference = rms(&sinusoid(n, 1.0, 8.0));
    assert!((20.0 * (rms(&lo) / reference).log10()).abs() < 1.0);
    assert!(20.0 * (rms(&hi) / reference).log10() <= -40.0);
}

#[test]
fn filter_is_zero_phase() {
    let n = 600;
    let v = sinusoid(n, 1.5, 8.0);
    let out = lowpass_filter(&v, 5.0, 8.0, DEFAULT_TAPS).unwrap();
    let (a, b) = (&v.samples()[150..450], &out.samples()[150..450]);
    let xcorr = |lag: i64| -> f64 {
        (0..a.len() as i64)
            .filter_map(|i| {
                let j = i + lag;
                (j >= 0 && j < b.len() as i64).then(|| a[i as usize] * b[j as usize])
            })
            .sum()
    };
    let best = (-20..=20).max_by(|&p, &q| xcorr(p).total_cmp(&xcorr(q))).unwrap();
    assert_eq!(best, 0);
}

#[test]
fn cutoff_at_nyquist_is_rejected() {
    assert!(matches!(lowpass_taps(62.5, 8.0, 257), Err(Error::Parameter(_))));
    assert!(matches!(lowpass_taps(5.0, 8.0, 256), Err(Error::Parameter(_))));
}

#[test]
fn zero_noise_is_identity() {
    let v = Volume::<f32>::new(vec![4, 4], (0..16).map(|i| i as f32 / 20.0 - 0.4).collect(), 8.0).unwrap();
    assert_eq!(add_uniform_noise(&v, 0.0, NoiseMode::Amplitude, 3).unwrap(), v);
}

#[test]
fn noise_is_uniform_by_kolmogorov_smirnov() {
    let n = 1_000_000;
    let mut s = vec![0.0f64; n + 1];
    s[n] = 1.0;
    let v = Volume::new(vec![n + 1, 1], s, 8.0).unwrap();
    let out = add_uniform_noise(&v, 0.5, NoiseMode::Amplitude, 42).unwrap();
    let mut noise: Vec<f64> = out.samples()[..n].to_vec();
    noise.sort_by(f64::total_cmp);
    let d = noise
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = ((x + 0.5) / 1.0).clamp(0.0, 1.0);
            (cdf - i as f64 / n as f64).abs().max((cdf - (i + 1) as f64 / n as f64).abs())
        })
        .fold(0.0, f64::max);
    assert!(d < 0.005, "KS statistic {d}");
    assert!(noise[0] >= -0.5 && noise[n - 1] <= 0.5);
}

#[test]
fn noise_is_seeded_and_clipped() {
    let v = Volume::<f32>::new(vec![64, 2], vec![0.9; 128], 8.0).unwrap();
    let a = add_uniform_noise(&v, 0.5, NoiseMode::Amplitude, 9).unwrap();
    let b = add_uniform_noise(&v, 0.5, NoiseMode::Amplitude, 9).unwrap();
    assert_eq!(a, b);
    assert!(a.samples().iter().all(|s| (-1.0..=1.0).contains(s)));
    assert!(a.samples().contains(&1.0));
}

#[test]
fn pixel_fraction_mode_touches_about_that_fraction() {
    let v = Volume::<f64>::new(vec![10_000, 1], vec![0.25; 10_000], 8.0).unwrap();
    let out = add_uniform_noise(&v, 0.3, NoiseMode::PixelFraction, 1).unwrap();
    let changed = out.samples().iter().filter(|&&s| s != 0.25).count() as f64 / 10_000.0;
    assert!((changed - 0.3).abs() < 0.02, "{changed}");
}

#[test]
fn degrade_is_filter_then_noise() {
    let s = generate_sample::<f64>(&SynthConfig::new(&[48, 16]), 4).unwrap();
    let cfg = DegradeConfig::default();
    let manual = add_uniform_noise(&lowpass_filter(&s.truth, 5.0, 8.0, 257).unwrap(), 0.5, NoiseMode::Amplitude, 4).unwrap();
    assert_eq!(degrade(&s.truth, &cfg, 4).unwrap(), manual);
    assert_eq!(s.degraded, manual);
}

#[test]
fn one_hot_encoding() {
    let mut m = two_layer(4, 4, 2);
    m.class_count = 31;
    m.salt_class = 30;
    let c: ConditionField<f32> = encode_condition(&m, ConditionMode::Deterministic, 0.0).unwrap();
    assert_eq!(c.channels(), 31);
    assert_eq!(c.channel(0)[0], 1.0);
    for ch in 1..31 {
        assert_eq!(c.channel(ch)[0], 0.0);
    }
    m.classes[5] = 31;
    assert!(matches!(encode_condition::<f32>(&m, ConditionMode::Deterministic, 0.0), Err(Error::Data(_))));
}

#[test]
fn no_salt_gives_zero_probability() {
    let m = two_layer(8, 8, 3);
    let c: ConditionField<f32> = encode_condition(&m, ConditionMode::Probabilistic, 0.0).unwrap();
    assert_eq!(c.channels(), 1);
    assert!(c.data().iter().all(|&v| v == 0.0));
}

#[test]
fn blurred_half_plane_follows_the_error_function() {
    let (h, w, b, sigma) = (16usize, 64usize, 32usize, 2.0);
    let mut m = two_layer(h, w, 0);
    for y in 0..h {
        for x in b..w {
            m.classes[y * w + x] = m.salt_class;
        }
    }
    let c: ConditionField<f64> = encode_condition(&m, ConditionMode::Probabilistic, sigma).unwrap();
    let row = &c.data()[8 * w..9 * w];
    let phi = |t: f64| 0.5 * (1.0 + libm::erf(t / std::f64::consts::SQRT_2));
    for (x, &v) in row.iter().enumerate().take(w - 12).skip(12) {
        // pixel x integrates the step over [x - 0.5, x + 0.5]
        let expect = phi((x as f64 - b as f64 + 0.5) / sigma);
        assert!((v - expect).abs() < 0.02, "x={x}: {v} vs {expect}");
    }
    let boundary = 0.5 * (row[b - 1] + row[b]);
    assert!((boundary - 0.5).abs() < 0.02, "{boundary}");
}

#[test]
fn whole_volume_patch() {
    let s = generate_sample::<f32>(&SynthConfig::new(&[24, 20]), 2).unwrap();
    let p = extract_patches(&s.truth, &s.degraded, Some(&s.condition), &[24, 20], 7, 0, 0, true).unwrap();
    assert_eq!(p.len(), 1);
    assert_eq!(p[0].truth, s.truth);
    assert_eq!(p[0].condition.as_ref(), Some(&s.condition));
}

#[test]
fn tiling_and_shuffle() {
    let s = generate_sample::<f32>(&SynthConfig::new(&[64, 64]), 3).unwrap();
    let p = extract_patches(&s.truth, &s.degraded, Some(&s.condition), &[32, 32], 32, 0, 0, false).unwrap();
    let offs: Vec<_> = p.iter().map(|q| q.offset.clone()).collect();
    assert_eq!(offs, vec![vec![0, 0], vec![0, 32], vec![32, 0], vec![32, 32]]);
    let q = &p[3];
    assert_eq!(q.truth.samples()[0], s.truth.samples()[32 * 64 + 32]);
    assert_eq!(q.degraded.samples()[0], s.degraded.samples()[32 * 64 + 32]);

    let a = extract_patches(&s.truth, &s.degraded, None, &[16, 16], 8, 0, 77, true).unwrap();
    let b = extract_patches(&s.truth, &s.degraded, None, &[16, 16], 8, 0, 77, true).unwrap();
    let order = |v: &[PatchPair<f32>]| v.iter().map(|q| q.offset.clone()).collect::<Vec<_>>();
    assert_eq!(order(&a), order(&b));
    let mut sorted = order(&a);
    sorted.sort();
    assert_eq!(sorted.len(), 49);
    assert_ne!(order(&a), sorted);
}

#[test]
fn misaligned_patch_inputs_are_shape_errors() {
    let x = Volume::<f32>::zeros(&[8, 8], 8.0).unwrap();
    let z = Volume::<f32>::zeros(&[8, 9], 8.0).unwrap();
    assert!(matches!(extract_patches(&x, &z, None, &[4, 4], 4, 0, 0, false), Err(Error::Shape(_))));
}

#[test]
fn three_dimensional_sample() {
    let mut cfg = SynthConfig::new(&[16, 12, 10]);
    cfg.condition_mode = ConditionMode::Probabilistic;
    cfg.blur_sigma = 1.0;
    let s = generate_sample::<f32>(&cfg, 8).unwrap();
    assert_eq!(s.truth.dims(), &[16, 12, 10]);
    assert!(s.degraded.samples().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert_eq!(s.condition.channels(), 1);
}
