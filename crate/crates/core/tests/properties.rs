use proptest::prelude::*;

use seisgan::gannet::{enhance, FusionSpec, Network, NetworkSpec};
use seisgan::io;
use seisgan::losses::{perceptual_loss, LossWeights};
use seisgan::metrics::{self, percent_gain};
use seisgan::synthdata::{
    add_uniform_noise, degrade, encode_condition, extract_patches, generate_earth_model, generate_sample,
    lowpass_filter, DegradeConfig, EarthConfig, NoiseMode, SynthConfig,
};
use seisgan::tensorcore::{Padding, Tape, Tensor};
use seisgan::{ConditionMode, Volume};

fn volume(dims: Vec<usize>) -> impl Strategy<Value = Volume<f64>> {
    let n: usize = dims.iter().product();
    prop::collection::vec(-1.0f64..1.0, n).prop_map(move |s| Volume::new(dims.clone(), s, 8.0).unwrap())
}

fn pair(dims: Vec<usize>) -> impl Strategy<Value = (Volume<f64>, Volume<f64>)> {
    (volume(dims.clone()), volume(dims))
}

fn dims_2d() -> impl Strategy<Value = Vec<usize>> {
    (11usize..20, 11usize..20).prop_map(|(a, b)| vec![a, b])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ssim_is_symmetric_and_bounded((a, b) in dims_2d().prop_flat_map(pair)) {
        let ab = metrics::ssim(&a, &b, 2.0).unwrap();
        let ba = metrics::ssim(&b, &a, 2.0).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-9);
        prop_assert!(ab.abs() <= 1.0 + 1e-9);
        prop_assert!((metrics::ssim(&a, &a, 2.0).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn ssim_is_bounded_in_3d((a, b) in pair(vec![7, 8, 9])) {
        let s = metrics::ssim(&a, &b, 2.0).unwrap();
        prop_assert!(s.abs() <= 1.0 + 1e-9);
        prop_assert!((s - metrics::ssim(&b, &a, 2.0).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn psnr_falls_as_error_grows(x in volume(vec![12, 12]), noise in prop::collection::vec(-1.0f64..1.0, 144)) {
        prop_assume!(noise.iter().any(|v| v.abs() > 1e-3));
        let psnrs: Vec<f64> = [0.05, 0.1, 0.2, 0.4, 0.8]
            .iter()
            .map(|k| {
                let g: Vec<f64> = x.samples().iter().zip(&noise).map(|(a, n)| a + k * n).collect();
                metrics::psnr(&x, &Volume::new(vec![12, 12], g, 8.0).unwrap(), 2.0).unwrap()
            })
            .collect();
        prop_assert!(psnrs.iter().all(|p| p.is_finite()));
        prop_assert!(psnrs.windows(2).all(|w| w[0] > w[1]), "{psnrs:?}");
        prop_assert_eq!(metrics::psnr(&x, &x, 2.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn equal_reports_have_zero_gain(b in 0.01f64..100.0) {
        prop_assert_eq!(percent_gain(b, b).unwrap(), 0.0);
    }

    #[test]
    fn deterministic_conditions_are_one_hot(seed in any::<u64>(), classes in 2usize..12, h in 8usize..24, w in 8usize..24) {
        let mut cfg = EarthConfig::new(&[h, w]);
        cfg.classes = classes;
        cfg.layers = (2, 5);
        let model = generate_earth_model(&cfg, seed).unwrap();
        let c = encode_condition::<f32>(&model, ConditionMode::Deterministic, 0.0).unwrap();
        prop_assert_eq!(c.channels(), classes);
        for p in 0..c.spatial_len() {
            let sum: f32 = (0..classes).map(|k| c.channel(k)[p]).sum();
            prop_assert_eq!(sum, 1.0);
        }
    }

    #[test]
    fn probabilistic_conditions_are_probabilities(seed in any::<u64>(), sigma in 0.0f64..3.0) {
        let mut cfg = EarthConfig::new(&[6, 10, 8]);
        cfg.layers = (2, 4);
        let model = generate_earth_model(&cfg, seed).unwrap();
        let c = encode_condition::<f64>(&model, ConditionMode::Probabilistic, sigma).unwrap();
        prop_assert_eq!(c.channels(), 1);
        prop_assert!(c.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn degraded_volumes_stay_in_range(
        x in volume(vec![40, 6]),
        gain in 0.1f64..3.0,
        noise in 0.0f64..=1.0,
        pixel in any::<bool>(),
        cutoff in 1.0f64..60.0,
        seed in any::<u64>(),
    ) {
        let scaled = Volume::new(vec![40, 6], x.samples().iter().map(|v| v * gain).collect(), 8.0).unwrap();
        let cfg = DegradeConfig {
            cutoff_hz: cutoff,
            noise_fraction: noise,
            noise_mode: if pixel { NoiseMode::PixelFraction } else { NoiseMode::Amplitude },
            taps: 31,
            ..DegradeConfig::default()
        };
        let z = degrade(&scaled, &cfg, seed).unwrap();
        prop_assert!(z.samples().iter().all(|v| (-1.0..=1.0).contains(v)));
        let composed = add_uniform_noise(&lowpass_filter(&scaled, cfg.cutoff_hz, cfg.dt_ms, cfg.taps).unwrap(), noise, cfg.noise_mode, seed).unwrap();
        prop_assert_eq!(z, composed);
    }

    #[test]
    fn synthesis_is_a_pure_function_of_seed(seed in any::<u64>()) {
        let mut cfg = SynthConfig::new(&[16, 12]);
        cfg.earth.classes = 4;
        let a = generate_sample::<f32>(&cfg, seed).unwrap();
        let b = generate_sample::<f32>(&cfg, seed).unwrap();
        prop_assert_eq!(&a.truth, &b.truth);
        prop_assert_eq!(&a.degraded, &b.degraded);
        prop_assert_eq!(&a.condition, &b.condition);
        prop_assert!(a.truth.samples().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn patches_tile_the_grid(h in 4usize..20, w in 4usize..20, ph in 1usize..5, pw in 1usize..5, stride in 1usize..5) {
        let x = Volume::new(vec![h, w], (0..h * w).map(|i| i as f32).collect(), 8.0).unwrap();
        let patches = extract_patches(&x, &x, None, &[ph, pw], stride, 0, 0, false).unwrap();
        let expect = ((h - ph) / stride + 1) * ((w - pw) / stride + 1);
        prop_assert_eq!(patches.len(), expect);
        for p in &patches {
            let (r, c) = (p.offset[0], p.offset[1]);
            prop_assert_eq!(p.truth.samples()[0], (r * w + c) as f32);
        }
    }

    #[test]
    fn volume_files_round_trip(dims in prop::sample::select(vec![vec![3usize, 4], vec![1, 9], vec![2, 3, 4]]), seed in any::<u32>()) {
        let n: usize = dims.iter().product();
        let s: Vec<f32> = (0..n).map(|i| ((i as u32 ^ seed) as f32).sin()).collect();
        let v = Volume::new(dims, s, 4.0).unwrap();
        let b = io::encode_volume(&v);
        prop_assert_eq!(b.len(), 4 + 4 + 1 + 4 * v.rank() + 4 + 4 * n);
        let back = io::decode_volume(&b).unwrap();
        prop_assert_eq!(&back, &v);
        prop_assert_eq!(io::encode_volume(&back), b);
    }

    #[test]
    fn condition_files_round_trip(seed in any::<u64>(), prob in any::<bool>()) {
        let mut cfg = EarthConfig::new(&[9, 7]);
        cfg.classes = 5;
        cfg.layers = (2, 4);
        let model = generate_earth_model(&cfg, seed).unwrap();
        let mode = if prob { ConditionMode::Probabilistic } else { ConditionMode::Deterministic };
        let c = encode_condition::<f32>(&model, mode, if prob { 1.0 } else { 0.0 }).unwrap();
        let b = io::encode_condition(&c);
        let back = io::decode_condition(&b).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(io::encode_condition(&back), b);
    }

    #[test]
    fn same_padding_preserves_extents(h in 1usize..9, w in 1usize..9, k in prop::sample::select(vec![1usize, 3, 5, 9]), cin in 1usize..3, cout in 1usize..3) {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::full(&[2, cin, h, w], 0.5));
        let kern = t.constant(Tensor::full(&[cout, cin, k, k], 0.1));
        let y = t.conv(x, kern, None, 1, Padding::Same).unwrap();
        prop_assert_eq!(t.shape(y), &[2, cout, h, w][..]);
    }

    #[test]
    fn perceptual_loss_is_linear_in_the_weight(
        x in prop::collection::vec(-1.0f64..1.0, 8),
        g in prop::collection::vec(-1.0f64..1.0, 8),
        d in prop::collection::vec(0.01f64..0.99, 2),
        w in 0.0f64..1.0,
    ) {
        let total = |weight: f64| {
            let mut t = Tape::<f64>::new();
            let xv = t.constant(Tensor::new(vec![2, 1, 2, 2], x.clone()).unwrap());
            let gv = t.constant(Tensor::new(vec![2, 1, 2, 2], g.clone()).unwrap());
            let dv = t.constant(Tensor::new(vec![2, 1], d.clone()).unwrap());
            let terms = perceptual_loss(&mut t, xv, gv, dv, LossWeights { adversarial_weight: weight }).unwrap();
            t.value(terms.total).data()[0]
        };
        let (l0, l1, lw) = (total(0.0), total(1.0), total(w));
        prop_assert!((lw - (l0 + w * (l1 - l0))).abs() <= 1e-12 * (1.0 + lw.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn enhance_preserves_dims(
        h in 3usize..12,
        w in 3usize..12,
        fusion in prop::option::of(prop::sample::select(FusionSpec::ALL.to_vec())),
        seed in any::<u64>(),
    ) {
        let mut spec = NetworkSpec::generator(2, 1, 3);
        if let Some(f) = fusion {
            spec = spec.with_fusion(f, 2);
        }
        let mut net = Network::<f32>::build(&spec, seed).unwrap();
        let z = Volume::new(vec![h, w], (0..h * w).map(|i| (i as f32 * 0.7).sin()).collect(), 8.0).unwrap();
        let c = fusion.map(|_| {
            let data: Vec<f32> = (0..2 * h * w).map(|i| if (i < h * w) == (i % (h * w) % 2 == 0) { 1.0 } else { 0.0 }).collect();
            seisgan::ConditionField::new(ConditionMode::Deterministic, 2, vec![h, w], data).unwrap()
        });
        net.update_running_stats(&z, c.as_ref()).unwrap();
        let g = enhance(&net, &z, c.as_ref()).unwrap();
        prop_assert_eq!(g.dims(), z.dims());
        prop_assert!(g.samples().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
