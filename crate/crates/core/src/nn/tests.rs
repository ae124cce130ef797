use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn input(n: usize, c: usize, hw: usize, seed: u64) -> Var<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Var::constant(Tensor::from_fn(&[n, c, hw, hw], |_| rng.random_range(-1.0..1.0)))
}

#[test]
fn preset_parameter_counts() {
    let count = |s: &str| build::<f32>(&s.parse().unwrap(), 0).unwrap().num_params();
    let within = |n: usize, target: f64| ((n as f64 - target) / target).abs() <= 0.10;
    let thin = count("nin-thin");
    let wide = count("nin-wide");
    assert!(within(thin, 0.2e6), "nin-thin has {thin}");
    assert!(within(wide, 1.0e6), "nin-wide has {wide}");
    let w162 = count("wrn-16-2");
    assert!(within(w162, 0.7e6), "wrn-16-2 has {w162}");
    // WRN-16-1 is 175k parameters, which the published one-digit figure rounds to 0.2M.
    let w161 = count("wrn-16-1");
    assert_eq!(w161, 175_066);
    assert_eq!((w161 as f64 / 1e5).round(), 2.0);
}

#[test]
fn param_count_is_sum_of_tensors() {
    let m = build_wrn::<f32>(10, 1, 10, 0).unwrap();
    let manual: usize = m.params().iter().map(|p| p.value.dims().iter().product::<usize>()).sum();
    assert_eq!(m.num_params(), manual);
}

#[test]
fn nin_width_scales_quadratically() {
    let a = build_nin::<f32>(1.0, true, true, 0).unwrap().num_params() as f64;
    let b = build_nin::<f32>(2.0, true, true, 0).unwrap().num_params() as f64;
    assert!((b / a - 4.0).abs() < 0.2, "ratio {}", b / a);
}

#[test]
fn wrn_group_taps_halve_spatial_size() {
    let m = build_wrn::<f32>(10, 1, 10, 1).unwrap();
    assert_eq!(m.tap_names(), vec!["group1", "group2", "group3"]);
    let tape = Tape::new();
    let p = m.param_vars(&tape, true);
    let fwd = m.forward_with_taps(&p, &input(2, 3, 32, 0)).unwrap();
    let sizes: Vec<_> = fwd.taps.iter().map(|(_, v)| v.dims()[2]).collect();
    assert_eq!(sizes, vec![32, 16, 8]);
    assert_eq!(fwd.logits.dims(), &[2, 10]);
}

#[test]
fn wrn_block_taps_end_each_group_with_the_group_tap() {
    let m = build::<f32>(&"wrn-16-1/blocktaps=1".parse().unwrap(), 0).unwrap();
    assert_eq!(
        m.tap_names(),
        vec!["group1.block1", "group1", "group2.block1", "group2", "group3.block1", "group3"]
    );
    assert!(m.taps().windows(2).all(|w| w[0].layer < w[1].layer));
}

#[test]
fn wrn_rejects_bad_depth() {
    let err = build_wrn::<f32>(12, 1, 10, 0).unwrap_err().to_string();
    assert!(err.contains("multiple of 6"), "{err}");
    assert!(build_wrn::<f32>(4, 1, 10, 0).is_err());
}

#[test]
fn nin_structure_flags() {
    let m = build_nin::<f32>(0.5, false, false, 0).unwrap();
    let kinds = m.layer_kinds();
    assert!(!kinds.contains(&LayerKind::BatchNorm));
    assert!(!m.has_batchnorm());
    for w in kinds.windows(2) {
        if matches!(w[1], LayerKind::MaxPool | LayerKind::GlobalAvgPool) {
            assert_ne!(w[0], LayerKind::Relu);
        }
    }
    let with = build_nin::<f32>(0.5, true, true, 0).unwrap();
    assert!(with.has_batchnorm());
    assert_eq!(with.tap_names(), vec!["group1", "group2", "group3"]);
    let tape = Tape::new();
    let fwd = with
        .forward_with_taps(&with.param_vars(&tape, true), &input(2, 3, 32, 1))
        .unwrap();
    let sizes: Vec<_> = fwd.taps.iter().map(|(_, v)| v.dims()[2]).collect();
    assert_eq!(sizes, vec![32, 16, 8]);
}

#[test]
fn zero_taps_and_unknown_taps() {
    let mut m = build_wrn::<f32>(10, 1, 4, 0).unwrap();
    m.retain_taps(&[]).unwrap();
    let tape = Tape::new();
    let fwd = m.forward_with_taps(&m.param_vars(&tape, false), &input(3, 3, 16, 2)).unwrap();
    assert!(fwd.taps.is_empty());
    assert_eq!(fwd.logits.dims(), &[3, 4]);
    match fwd.tap("group1") {
        Err(Error::UnknownTap { name, .. }) => assert_eq!(name, "group1"),
        _ => panic!("expected unknown tap"),
    }
    assert!(m.retain_taps(&["nope"]).is_err());
}

#[test]
fn eval_forward_is_bitwise_deterministic() {
    let mut m = build_wrn::<f32>(10, 1, 10, 3).unwrap();
    m.set_mode(Mode::Eval);
    let x = input(2, 3, 16, 4);
    let a = m.predict(x.value()).unwrap();
    let b = m.predict(x.value()).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn incompatible_input_is_rejected() {
    let m = build_nin::<f32>(0.5, true, true, 0).unwrap();
    assert!(m.predict(input(1, 1, 32, 0).value()).is_err());
    assert!(m.predict(input(1, 3, 2, 0).value()).is_err());
}

#[test]
fn batchnorm_train_normalizes_and_eval_is_affine() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Tensor::<f64>::from_fn(&[4, 3, 5, 5], |_| rng.random_range(-3.0..7.0));
    let gamma = Var::constant(Tensor::ones(&[3]));
    let beta = Var::constant(Tensor::zeros(&[3]));
    let out = Var::constant(x.clone())
        .batch_norm_train(&gamma, &beta, 1e-5)
        .unwrap();
    let y = out.output.value();
    for ch in 0..3 {
        let vals: Vec<f64> = (0..4)
            .flat_map(|s| y.data()[(s * 3 + ch) * 25..(s * 3 + ch + 1) * 25].to_vec())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-4 && (var - 1.0).abs() < 1e-4, "{mean} {var}");
    }
    // default running stats (0, 1) with gamma 1, beta 0: eval is the identity
    let e = Var::constant(x.clone())
        .batch_norm_eval(&gamma, &beta, &[0.0; 3], &[1.0; 3], 0.0)
        .unwrap();
    assert_eq!(e.value(), &x);
    // eval mode is a fixed affine map: f(a + b) - f(b) = f(a) - f(0)
    let g2 = Var::constant(Tensor::new(vec![3], vec![2.0, -1.0, 0.5]).unwrap());
    let b2 = Var::constant(Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap());
    let f = |t: &Tensor<f64>| {
        Var::constant(t.clone())
            .batch_norm_eval(&g2, &b2, &[1.0, 2.0, 3.0], &[4.0, 0.5, 2.0], 1e-5)
            .unwrap()
            .value()
            .clone()
    };
    let z = Tensor::zeros(x.dims());
    let twice = crate::tensor::add(&x, &x).unwrap();
    let lhs = crate::tensor::sub(&f(&twice), &f(&x)).unwrap();
    let rhs = crate::tensor::sub(&f(&x), &f(&z)).unwrap();
    for (a, b) in lhs.data().iter().zip(rhs.data()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn running_stats_follow_momentum() {
    let mut m = build_nin::<f64>(0.25, true, true, 0).unwrap();
    let tape = Tape::new();
    let fwd = m
        .forward_with_taps(&m.param_vars(&tape, true), &Var::constant(input(4, 3, 8, 5).value().cast()))
        .unwrap();
    let first = fwd.bn_updates[0].mean.clone();
    m.apply_bn_updates(&fwd.bn_updates);
    let rm = m.buffers()[0].value.data();
    for (r, b) in rm.iter().zip(&first) {
        assert!((r - 0.1 * b).abs() < 1e-12);
    }
}

#[test]
fn arch_tag_round_trips() {
    for s in ["nin-thin", "nin-wide", "nin-w0.75", "wrn-16-2", "wrn-10-1/bn=0/blocktaps=1/classes=4/in=1"] {
        let spec: ArchSpec = s.parse().unwrap();
        let again: ArchSpec = spec.to_string().parse().unwrap();
        assert_eq!(spec, again);
    }
    assert!("resnet-18".parse::<ArchSpec>().is_err());
    assert!("wrn-16".parse::<ArchSpec>().is_err());
}

