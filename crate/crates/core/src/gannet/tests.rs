use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::losses::{discriminator_loss, perceptual_loss, LossWeights};
use crate::tensorcore::gradcheck::{self, Tolerance};
use crate::volume::ConditionMode;

fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn one_hot(k: usize, dims: &[usize], seed: u64) -> ConditionField<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = dims.iter().product();
    let mut data = vec![0.0; k * n];
    for p in 0..n {
        data[rng.random_range(0..k) * n + p] = 1.0;
    }
    ConditionField::new(ConditionMode::Deterministic, k, dims.to_vec(), data).unwrap()
}

fn volume(dims: &[usize], seed: u64) -> Volume<f64> {
    let t = random_tensor(dims, seed);
    Volume::new(dims.to_vec(), t.into_data(), 8.0).unwrap()
}

/// Parameter count from the layer formulas.
fn expected_params(spec: &NetworkSpec) -> usize {
    let b = spec.base_channels;
    let k = spec.condition_channels;
    let vol = |w: usize| w.pow(spec.rank as u32);
    let (concat, dot) = match spec.fusion {
        Some(f) => (if f.kind == FusionType::Concat { Some(f.position) } else { None }, (f.kind == FusionType::Dot).then_some(f.position)),
        None => (None, None),
    };
    let extra = |p: FusionPosition| if concat == Some(p) { k } else { 0 };
    match spec.role {
        Role::Generator => {
            let mut n = vol(9) * (1 + extra(FusionPosition::Early)) * b + b + b;
            for i in 0..spec.residual_depth {
                let cin = b + if i == 0 { extra(FusionPosition::Mid) } else { 0 };
                n += vol(3) * cin * b + vol(3) * b * b + 2 * (b + b) + b;
            }
            n += vol(3) * (b + extra(FusionPosition::Late)) * b + 2 * b;
            n += vol(9) * b + 1;
            n += match dot {
                Some(FusionPosition::Early) => k + 1,
                Some(_) => k * b + b,
                None => 0,
            };
            n
        }
        Role::Discriminator => {
            let mut n = vol(3) * (1 + extra(FusionPosition::Early)) * b + b;
            let mut cin = b + extra(FusionPosition::Mid) + extra(FusionPosition::Late);
            for i in 0..spec.residual_depth {
                let cout = b * [2, 4, 8, 8, 8, 8, 8, 8, 8, 8][i];
                n += vol(3) * cin * cout + 2 * cout;
                cin = cout;
            }
            n += cin * 1024 + 1024 + 1024 + 1;
            n += match dot {
                Some(FusionPosition::Early) => k + 1,
                Some(_) => k * b + b,
                None => 0,
            };
            n
        }
    }
}

#[test]
fn parameter_counts_match_layer_formulas() {
    for rank in [2, 3] {
        for depth in [1, 2, 4] {
            let mut specs = vec![NetworkSpec::generator(rank, depth, 8), NetworkSpec::discriminator(rank, depth, 4)];
            for f in FusionSpec::ALL {
                specs.push(NetworkSpec::generator(rank, depth, 8).with_fusion(f, 5));
                specs.push(NetworkSpec::discriminator(rank, depth, 4).with_fusion(f, 5));
            }
            for spec in specs {
                let net = Network::<f32>::build(&spec, 1).unwrap();
                assert_eq!(net.param_count(), expected_params(&spec), "{spec:?}");
            }
        }
    }
}

#[test]
fn one_more_residual_block() {
    let one = Network::<f32>::build(&NetworkSpec::generator(2, 1, 64), 0).unwrap();
    let two = Network::<f32>::build(&NetworkSpec::generator(2, 2, 64), 0).unwrap();
    // two 3×3 convs, two batchnorms (scale and shift) and the PReLU slopes
    let block = 2 * (3 * 3 * 64 * 64) + 2 * (64 + 64) + 64;
    assert_eq!(two.param_count() - one.param_count(), block);
}

#[test]
fn baseline_has_no_fusion_parameters() {
    for spec in [NetworkSpec::generator(2, 2, 4), NetworkSpec::discriminator(2, 2, 4)] {
        let net = Network::<f32>::build(&spec, 0).unwrap();
        assert!(net.params.iter().all(|p| !p.name.contains("fuse")));
    }
    let net = Network::<f32>::build(&NetworkSpec::generator(2, 2, 4).with_fusion(FusionSpec::ALL[4], 3), 0).unwrap();
    assert!(net.param("g.fuse.proj.w").is_some());
}

#[test]
fn concat_early_widens_the_head() {
    let spec = NetworkSpec::generator(2, 1, 8).with_fusion(FusionSpec { kind: FusionType::Concat, position: FusionPosition::Early }, 31);
    let net = Network::<f32>::build(&spec, 0).unwrap();
    assert_eq!(net.param("g.head.conv.w").unwrap().tensor.shape(), &[8, 32, 9, 9]);
}

#[test]
fn spec_validation() {
    let mut s = NetworkSpec::generator(2, 1, 8);
    s.fusion = Some(FusionSpec::ALL[0]);
    assert!(matches!(Network::<f32>::build(&s, 0), Err(Error::Spec(_))));
    let mut s = NetworkSpec::generator(2, 1, 8);
    s.condition_channels = 3;
    assert!(matches!(Network::<f32>::build(&s, 0), Err(Error::Spec(_))));
    assert!(Network::<f32>::build(&NetworkSpec::generator(4, 1, 8), 0).is_err());
    assert!(Network::<f32>::build(&NetworkSpec::generator(2, 0, 8), 0).is_err());
}

#[test]
fn build_is_deterministic() {
    let spec = NetworkSpec::discriminator(2, 2, 4).with_fusion(FusionSpec::ALL[5], 2);
    let a = Network::<f32>::build(&spec, 9).unwrap();
    let b = Network::<f32>::build(&spec, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.checksum(), b.checksum());
    assert_ne!(a.checksum(), Network::<f32>::build(&spec, 10).unwrap().checksum());
}

fn run(net: &Network<f64>, x: &Tensor<f64>, c: Option<&Tensor<f64>>) -> Tensor<f64> {
    let mut t = Tape::new();
    let vars = net.bind(&mut t, false);
    let xi = t.constant(x.clone());
    let ci = c.map(|c| t.constant(c.clone()));
    let f = net.forward(&mut t, &vars, xi, ci, Norm::Train).unwrap();
    t.value(f.output).clone()
}

#[test]
fn generator_keeps_shape_and_bounds() {
    let x = random_tensor(&[2, 1, 32, 32], 1);
    let c = random_tensor(&[2, 3, 32, 32], 2);
    let net = Network::build(&NetworkSpec::generator(2, 1, 4), 0).unwrap();
    let y = run(&net, &x, None);
    assert_eq!(y.shape(), &[2, 1, 32, 32]);
    assert!(y.data().iter().all(|v| v.abs() < 1.0));
    for f in FusionSpec::ALL {
        let net = Network::build(&NetworkSpec::generator(2, 1, 4).with_fusion(f, 3), 0).unwrap();
        assert_eq!(run(&net, &x, Some(&c)).shape(), &[2, 1, 32, 32], "{f:?}");
    }
}

#[test]
fn discriminator_outputs_probabilities() {
    let x = random_tensor(&[3, 1, 16, 16], 4);
    for f in [None].into_iter().chain(FusionSpec::ALL.map(Some)) {
        let mut spec = NetworkSpec::discriminator(2, 2, 4);
        let c = f.map(|f| {
            spec = spec.clone().with_fusion(f, 2);
            random_tensor(&[3, 2, 16, 16], 5)
        });
        let net = Network::build(&spec, 0).unwrap();
        let y = run(&net, &x, c.as_ref());
        assert_eq!(y.shape(), &[3, 1]);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn strided_blocks_stop_at_four() {
    let trace = discriminator_strides(&[16, 16], 6);
    let strides: Vec<usize> = trace.iter().map(|t| t.0).collect();
    assert_eq!(strides, vec![2, 2, 1, 1, 1, 1]);
    assert_eq!(trace[5].1, vec![4, 4]);
    assert_eq!(discriminator_strides(&[6, 6, 6], 2).iter().map(|t| t.0).collect::<Vec<_>>(), vec![1, 1]);

    // the recorded conv outputs follow the same trace
    let net = Network::<f64>::build(&NetworkSpec::discriminator(2, 6, 2), 0).unwrap();
    let mut t = Tape::new();
    let vars = net.bind(&mut t, false);
    let x = t.constant(random_tensor(&[1, 1, 16, 16], 1));
    net.forward(&mut t, &vars, x, None, Norm::Train).unwrap();
    let mut conv_shapes = Vec::new();
    for i in x.index() + 1..t.len() {
        let s = t.shape(Var::from_index(i));
        if s.len() == 4 && s[1] >= 4 && s[2] <= 8 {
            conv_shapes.push(s.to_vec());
        }
    }
    assert!(conv_shapes.contains(&vec![1, 4, 8, 8]));
    assert!(conv_shapes.contains(&vec![1, 16, 4, 4]));
    assert!(!conv_shapes.iter().any(|s| s[2] < 4));
}

#[test]
fn untrained_discriminator_on_zeros_is_undecided() {
    let net = Network::build(&NetworkSpec::discriminator(2, 2, 4), 3).unwrap();
    let y = run(&net, &Tensor::zeros(&[2, 1, 16, 16]), None);
    assert!(y.data().iter().all(|&v| v == 0.5));
}

#[test]
fn all_ones_projection_leaves_features_unchanged() {
    let base = Network::<f64>::build(&NetworkSpec::generator(2, 2, 4), 7).unwrap();
    let x = random_tensor(&[1, 1, 12, 12], 8);
    let c = random_tensor(&[1, 3, 12, 12], 9);
    let expect = run(&base, &x, None);
    for position in [FusionPosition::Early, FusionPosition::Mid, FusionPosition::Late] {
        let spec = NetworkSpec::generator(2, 2, 4).with_fusion(FusionSpec { kind: FusionType::Dot, position }, 3);
        let mut net = Network::<f64>::build(&spec, 1).unwrap();
        for p in &base.params {
            net.param_mut(&p.name).unwrap().tensor = p.tensor.clone();
        }
        net.param_mut("g.fuse.proj.w").unwrap().tensor.data_mut().fill(0.0);
        net.param_mut("g.fuse.proj.b").unwrap().tensor.data_mut().fill(1.0);
        assert_eq!(run(&net, &x, Some(&c)).data(), expect.data(), "{position:?}");
    }
}

#[test]
fn flipping_one_class_changes_the_output() {
    let z = volume(&[16, 16], 3);
    let c = one_hot(4, &[16, 16], 4);
    let mut flipped = c.clone();
    let n = 256;
    let p = 5 * 16 + 7;
    let cls = (0..4).find(|&k| c.data()[k * n + p] == 1.0).unwrap();
    flipped.data_mut()[cls * n + p] = 0.0;
    flipped.data_mut()[((cls + 1) % 4) * n + p] = 1.0;
    flipped.validate().unwrap();
    for f in FusionSpec::ALL {
        let mut net = Network::<f64>::build(&NetworkSpec::generator(2, 1, 4).with_fusion(f, 4), 2).unwrap();
        net.update_running_stats(&z, Some(&c)).unwrap();
        let a = enhance(&net, &z, Some(&c)).unwrap();
        let b = enhance(&net, &z, Some(&flipped)).unwrap();
        let diff = a.samples().iter().zip(b.samples()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff > 0.0, "{f:?}");
    }
}

#[test]
fn enhance_contract() {
    let mut net = Network::<f32>::build(&NetworkSpec::generator(3, 1, 2), 0).unwrap();
    let z = volume(&[16, 16, 16], 1).cast::<f32>();
    assert!(matches!(enhance(&net, &z, None), Err(Error::UninitializedStats(_))));
    net.update_running_stats(&z, None).unwrap();
    let a = enhance(&net, &z, None).unwrap();
    let b = enhance(&net, &z, None).unwrap();
    assert_eq!(a.dims(), z.dims());
    assert_eq!(a, b);
    assert!(a.samples().iter().all(|v| (-1.0..=1.0).contains(v)));

    let flat = volume(&[16, 16], 1).cast::<f32>();
    assert!(matches!(enhance(&net, &flat, None), Err(Error::Contract(_))));
    let c = one_hot(2, &[16, 16, 16], 0).cast::<f32>();
    assert!(matches!(enhance(&net, &z, Some(&c)), Err(Error::Contract(_))));

    let cond = Network::<f32>::build(&NetworkSpec::generator(2, 1, 2).with_fusion(FusionSpec::ALL[0], 2), 0).unwrap();
    assert!(matches!(enhance(&cond, &flat, None), Err(Error::Contract(_))));
}

#[test]
fn check_against_spec_names_bad_tensor() {
    let mut net = Network::<f32>::build(&NetworkSpec::generator(2, 1, 4), 0).unwrap();
    net.check_against_spec().unwrap();
    let p = net.param_mut("g.res0.conv2.w").unwrap();
    p.tensor = Tensor::zeros(&[4, 4, 3, 2]);
    let err = net.check_against_spec().unwrap_err().to_string();
    assert!(err.contains("g.res0.conv2.w"), "{err}");
}

/// Composite loss over both networks: perceptual loss for the generator and
/// the discriminator loss, with every parameter a variable.
fn composite_gradcheck(rank: usize, fusion: Option<FusionSpec>, limit: usize) -> gradcheck::Report {
    let side = if rank == 2 { 8 } else { 6 };
    let k = 2;
    let mut gs = NetworkSpec::generator(rank, 1, 2);
    let mut ds = NetworkSpec::discriminator(rank, 1, 2);
    if let Some(f) = fusion {
        gs = gs.with_fusion(f, k);
        ds = ds.with_fusion(f, k);
    }
    let g = Network::<f64>::build(&gs, 11).unwrap();
    let d = Network::<f64>::build(&ds, 12).unwrap();
    let mut shape = vec![2, 1];
    shape.extend(std::iter::repeat_n(side, rank));
    let x = random_tensor(&shape, 13);
    let z = random_tensor(&shape, 14);
    shape[1] = k;
    let c = fusion.map(|_| random_tensor(&shape, 15));
    let ng = g.params.len();
    let inputs: Vec<Tensor<f64>> = g.params.iter().chain(&d.params).map(|p| p.tensor.clone()).collect();
    gradcheck::check(&inputs, Tolerance { step: 1e-6, ..Tolerance::default() }, Some(limit), |t, v| {
        let xi = t.constant(x.clone());
        let zi = t.constant(z.clone());
        let ci = c.as_ref().map(|c| t.constant(c.clone()));
        let fake = g.forward(t, &v[..ng], zi, ci, Norm::Train)?.output;
        let d_fake = d.forward(t, &v[ng..], fake, ci, Norm::Train)?.output;
        let d_real = d.forward(t, &v[ng..], xi, ci, Norm::Train)?.output;
        let p = perceptual_loss(t, xi, fake, d_fake, LossWeights { adversarial_weight: 0.1 })?;
        let dl = discriminator_loss(t, d_real, d_fake)?;
        t.add(p.total, dl)
    })
    .unwrap()
}

#[test]
fn composite_gradients_baseline() {
    let r = composite_gradcheck(2, None, 6);
    assert!(r.passed(), "{:?}", r.failures);
}

#[test]
fn composite_gradients_fusions() {
    for f in FusionSpec::ALL {
        let r = composite_gradcheck(2, Some(f), 4);
        assert!(r.passed(), "{f:?}: {:?}", r.failures);
    }
}
