//! Self-check suites run in double precision: gradients against finite
//! differences, double backpropagation, attention-map oracles, loss
//! identities, the β rule and checkpoint round trips.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{normalize_map, pair_maps, MapNorm, MapPair, MappingFn, MappingKind};
use crate::autograd::{compare_gradients, finite_difference, grad, GradCheckReport, Tape, Var};
use crate::error::Result;
use crate::nn::{build, softmax_cross_entropy, ArchFamily, ArchSpec, Mode, Model};
use crate::tensor::{conv2d, ConvGeom, Tensor};
use crate::train::Checkpoint;
use crate::transfer::{
    at_term, auto_beta, grad_at_terms, input_gradient, kd_terms, min_l2_terms, symmetry_terms, Beta, KdParams,
    TransferSpec,
};

pub const GRADIENT_TOL: f64 = 1e-4;
pub const DOUBLE_BACKPROP_TOL: f64 = 1e-3;
pub const FD_EPS: f64 = 1e-6;

/// A deliberately broken component, for negative controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Scales the reverse-mode gradient of every convolution weight by 1.1.
    ConvBackward,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    pub fault: Option<Fault>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub checks: usize,
    /// Worst relative error, for suites comparing against a reference.
    pub worst_rel_error: Option<f64>,
    /// First failed property.
    pub failure: Option<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

struct Suite {
    report: SuiteReport,
}

impl Suite {
    fn new(name: &'static str) -> Self {
        Suite {
            report: SuiteReport {
                name,
                checks: 0,
                worst_rel_error: None,
                failure: None,
            },
        }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.report.checks += 1;
        if !ok && self.report.failure.is_none() {
            self.report.failure = Some(what());
        }
    }

    fn error(&mut self, rel: f64, tol: f64, what: impl FnOnce() -> String) {
        let worst = self.report.worst_rel_error.get_or_insert(0.0);
        *worst = worst.max(rel);
        self.check(rel < tol, what);
    }

    fn finish(self) -> SuiteReport {
        self.report
    }
}

fn rand_tensor(rng: &mut impl Rng, dims: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| rng.random_range(-1.0..1.0))
}

/// Reverse-mode vs central differences for `f` over `point`, optionally with a
/// corrupted gradient for each rank-4 (convolution weight) entry of `point`
/// listed in `conv_weights`.
fn gradient_report(
    f: impl Fn(&[Var<f64>]) -> Result<Var<f64>>,
    point: &[Tensor<f64>],
    conv_weights: &[usize],
    fault: Option<Fault>,
) -> Result<GradCheckReport> {
    let tape = Tape::new();
    let vars: Vec<_> = point.iter().cloned().map(|t| tape.leaf(t)).collect();
    let out = f(&vars)?;
    let refs: Vec<&Var<f64>> = vars.iter().collect();
    let mut analytic: Vec<Tensor<f64>> = grad(&out, &refs, false)?.iter().map(|g| g.value().clone()).collect();
    if fault == Some(Fault::ConvBackward) {
        for &i in conv_weights {
            analytic[i].data_mut().iter_mut().for_each(|v| *v *= 1.1);
        }
    }
    let numeric = finite_difference(&f, point, FD_EPS)?;
    Ok(compare_gradients(&analytic, &numeric))
}

/// Parameters of `model` followed by the input, as a gradient-check point.
fn model_point(model: &Model<f64>, x: &Tensor<f64>) -> (Vec<Tensor<f64>>, Vec<usize>) {
    let mut point: Vec<Tensor<f64>> = model.params().iter().map(|p| p.value.clone()).collect();
    let conv_weights = (0..point.len()).filter(|&i| point[i].rank() == 4).collect();
    point.push(x.clone());
    (point, conv_weights)
}

/// A random network of at most three convolutions.
pub fn random_toy_spec(rng: &mut impl Rng) -> ArchSpec {
    let family = ArchFamily::Toy {
        depth: rng.random_range(1..=3),
        width: rng.random_range(2..=4),
        kernel: if rng.random_bool(0.5) { 3 } else { 1 },
        pool: rng.random_bool(0.5),
    };
    ArchSpec::new(family)
        .with_classes(rng.random_range(2..=4))
        .with_in_channels(rng.random_range(1..=3))
        .with_bn(rng.random_bool(0.5))
}

/// Cross-entropy gradients of `count` random toy networks.
pub fn gradient_suite(count: usize, opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut s = Suite::new("gradients");
    for _ in 0..count {
        let spec = random_toy_spec(&mut rng);
        let mut model: Model<f64> = build(&spec, rng.random())?;
        // Zero biases put pre-activations of dead units exactly on the ReLU kink.
        for p in model.params_mut().iter_mut().filter(|p| p.value.rank() == 1) {
            p.value = rand_tensor(&mut rng, p.value.dims());
        }
        let x = rand_tensor(&mut rng, &[2, spec.in_channels, 6, 6]);
        let labels: Vec<usize> = (0..2).map(|_| rng.random_range(0..spec.classes)).collect();
        let (point, convs) = model_point(&model, &x);
        let np = point.len() - 1;
        let f = |v: &[Var<f64>]| {
            let fwd = model.forward_with_taps(&v[..np], &v[np])?;
            softmax_cross_entropy(&fwd.logits, &labels)
        };
        let rep = gradient_report(f, &point, &convs, opts.fault)?;
        s.error(rep.max_rel_error, GRADIENT_TOL, || format!("{spec}: relative error {:.3e}", rep.max_rel_error));
    }
    Ok(s.finish())
}

/// Weight gradients through the input gradient: the `CE + (β/2)‖∂CE/∂x‖²`
/// objective and input-gradient matching against a teacher, on BN-free
/// two-convolution networks.
pub fn double_backprop_suite(opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 1);
    let mut s = Suite::new("double-backprop");
    for pool in [false, true] {
        let spec = ArchSpec::new(ArchFamily::Toy { depth: 2, width: 3, kernel: 3, pool }).with_bn(false);
        let student: Model<f64> = build(&spec, rng.random())?;
        let teacher: Model<f64> = build(&spec.clone().with_in_channels(3), rng.random())?;
        let x = rand_tensor(&mut rng, &[2, 3, 6, 6]);
        let labels = vec![rng.random_range(0..10), rng.random_range(0..10)];
        let jt = input_gradient(&teacher, &x, &labels)?;
        let (point, convs) = model_point(&student, &x);
        let point = &point[..point.len() - 1];
        let objectives: [(&str, &dyn Fn(&[Var<f64>], &Tape<f64>) -> Result<Var<f64>>); 2] = [
            ("input-gradient penalty", &|v, t| Ok(min_l2_terms(&student, v, t, &x, &labels, 20.0)?.total)),
            ("gradient matching", &|v, t| Ok(grad_at_terms(&student, v, t, &jt, &x, &labels, 20.0)?.total)),
        ];
        for (name, obj) in objectives {
            let f = |v: &[Var<f64>]| obj(v, &v[0].tape().expect("leaf"));
            let rep = gradient_report(f, point, &convs, opts.fault)?;
            s.error(rep.max_rel_error, DOUBLE_BACKPROP_TOL, || {
                format!("{name} (pool={pool}): relative error {:.3e}", rep.max_rel_error)
            });
        }
    }
    Ok(s.finish())
}

fn brute_force_map(a: &Tensor<f64>, kind: MappingKind, p: f64) -> Vec<f64> {
    let [n, c, h, w] = [a.dims()[0], a.dims()[1], a.dims()[2], a.dims()[3]];
    let mut out = Vec::with_capacity(n * h * w);
    for i in 0..n {
        for y in 0..h {
            for x in 0..w {
                let vals = (0..c).map(|ch| a.data()[((i * c + ch) * h + y) * w + x].abs().powf(p));
                out.push(match kind {
                    MappingKind::SumAbsPow => vals.sum(),
                    MappingKind::MaxAbsPow => vals.fold(f64::NEG_INFINITY, f64::max),
                });
            }
        }
    }
    out
}

fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Mapping functions against brute-force reductions, homogeneity and
/// channel-permutation invariance on `count` random tensors.
pub fn attention_suite(count: usize, opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 2);
    let mut s = Suite::new("attention-maps");
    let maps = [
        (MappingKind::SumAbsPow, 1.0),
        (MappingKind::SumAbsPow, 2.0),
        (MappingKind::SumAbsPow, 4.0),
        (MappingKind::MaxAbsPow, 1.0),
    ];
    for _ in 0..count {
        let dims = [rng.random_range(1..3), rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..6)];
        let a = rand_tensor(&mut rng, &dims);
        let c: f64 = rng.random_range(-3.0..3.0);
        let scaled = Tensor::from_fn(&dims, |i| c * a.data()[i]);
        let shift = rng.random_range(0..dims[1]);
        let plane = dims[2] * dims[3];
        let rolled = Tensor::from_fn(&dims, |i| {
            let (s, ch, rest) = (i / (dims[1] * plane), (i / plane) % dims[1], i % plane);
            a.data()[(s * dims[1] + (ch + shift) % dims[1]) * plane + rest]
        });
        for (kind, p) in maps {
            let f = MappingFn::new(kind, p)?;
            let got = f.apply(&Var::constant(a.clone()))?.value().data().to_vec();
            let oracle = max_rel_diff(&got, &brute_force_map(&a, kind, p));
            s.error(oracle, 1e-6, || format!("{f} differs from brute force by {oracle:.3e}"));
            let want: Vec<f64> = got.iter().map(|v| c.abs().powf(p) * v).collect();
            let homog = max_rel_diff(f.apply(&Var::constant(scaled.clone()))?.value().data(), &want);
            s.check(homog < 1e-5, || format!("{f} not homogeneous ({homog:.3e})"));
            let perm = max_rel_diff(f.apply(&Var::constant(rolled.clone()))?.value().data(), &got);
            s.check(perm < 1e-5, || format!("{f} not channel-permutation invariant ({perm:.3e})"));
        }
    }
    Ok(s.finish())
}

/// Zero transfer for equal maps and logits, flip symmetry of a spatially
/// pointwise network, non-negativity of every term.
pub fn loss_identity_suite(opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 3);
    let mut s = Suite::new("loss-identities");
    let spec = TransferSpec {
        beta: Beta::Fixed(1.0),
        ..TransferSpec::new(vec![("t".into(), "s".into())])
    };
    for _ in 0..20 {
        let q = Tensor::from_fn(&[3, 16], |_| rng.random_range(0.0..2.0));
        let same = MapPair {
            student_tap: "s".into(),
            teacher_tap: "t".into(),
            student: Var::constant(q.clone()),
            teacher: Var::constant(q.clone()),
        };
        let at = at_term(&[same.clone()], &spec, 1.0)?.value().item();
        s.check(at == 0.0, || format!("attention term {at:e} for equal maps"));
        let other = MapPair {
            teacher: Var::constant(Tensor::from_fn(&[3, 16], |_| rng.random_range(0.0..2.0))),
            ..same
        };
        let at = at_term(&[other], &spec, 1.0)?.value().item();
        s.check(at >= 0.0, || format!("negative attention term {at:e}"));

        let logits = rand_tensor(&mut rng, &[4, 5]);
        let labels = [0, 1, 2, 3];
        let kd = kd_terms(&Var::constant(logits.clone()), &logits, &labels, &KdParams::default())?;
        let kl = kd.kd.value().item();
        s.check(kl.abs() < 1e-12, || format!("distillation term {kl:e} for equal logits"));
        let kd = kd_terms(&Var::constant(logits), &rand_tensor(&mut rng, &[4, 5]), &labels, &KdParams::default())?;
        let kl = kd.kd.value().item();
        s.check(kl >= 0.0, || format!("negative distillation term {kl:e}"));
    }
    for seed in 0..5u64 {
        let labels = [0, 1];
        let x = rand_tensor(&mut rng, &[2, 3, 6, 6]);
        let pointwise: Model<f64> = build(&"toy-2-4-1/bn=0".parse()?, seed)?;
        let tape = Tape::new();
        let params = pointwise.param_vars(&tape, true);
        let sym = symmetry_terms(&pointwise, &params, &tape, &x, &labels, 1.0)?.transfer.value().item();
        s.check(sym < 1e-10, || format!("symmetry term {sym:e} for a pointwise network"));
        let conv: Model<f64> = build(&"toy-2-4-3p/bn=0".parse()?, seed)?;
        let params = conv.param_vars(&tape, true);
        let sym = symmetry_terms(&conv, &params, &tape, &x, &labels, 1.0)?.transfer.value().item();
        s.check(sym >= 0.0, || format!("negative symmetry term {sym:e}"));
        let l2 = min_l2_terms(&conv, &params, &tape, &x, &labels, 1.0)?.transfer.value().item();
        s.check(l2 >= 0.0, || format!("negative gradient penalty {l2:e}"));
        let mut teacher: Model<f64> = build(&"toy-2-5-3p/bn=0".parse()?, seed + 100)?;
        teacher.set_mode(Mode::Eval);
        let jt = input_gradient(&teacher, &x, &labels)?;
        let ga = grad_at_terms(&conv, &params, &tape, &jt, &x, &labels, 1.0)?.transfer.value().item();
        s.check(ga >= 0.0, || format!("negative gradient matching term {ga:e}"));
        let tf = teacher.forward_with_taps(&teacher.param_vars(&tape, false), &Var::constant(x.clone()))?;
        let sf = conv.forward_with_taps(&params, &Var::constant(x.clone()))?;
        let pairs = pair_maps(&tf.taps, &sf.taps, &TransferSpec::same_names(&["conv1", "conv2"]))?;
        let at = at_term(&pairs, &TransferSpec::same_names(&["conv1", "conv2"]), 1.0)?.value().item();
        s.check(at >= 0.0, || format!("negative attention term {at:e}"));
    }
    let zero = normalize_map(&Var::constant(Tensor::<f64>::zeros(&[1, 4])), MapNorm::L2, 1e-6)?;
    s.check(zero.value().data().iter().all(|&v| v == 0.0), || "zero map does not normalize to zero".into());
    Ok(s.finish())
}

pub fn beta_suite() -> SuiteReport {
    let mut s = Suite::new("beta-rule");
    let b = auto_beta(64, 128);
    s.check(b == 1000.0 / 8192.0, || format!("auto_beta(64, 128) = {b}"));
    s.check((b - 0.1221).abs() < 5e-5, || format!("auto_beta(64, 128) = {b}, not ≈ 0.1221"));
    s.check(auto_beta(1, 1000) == 1.0, || "auto_beta(1, 1000) != 1".into());
    s.finish()
}

/// Save→load→save byte identity on `count` random models.
pub fn checkpoint_suite(count: usize, opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 4);
    let mut s = Suite::new("checkpoint");
    for _ in 0..count {
        let spec = random_toy_spec(&mut rng);
        let mut model: Model<f32> = build(&spec, rng.random())?;
        for b in model.buffers_mut() {
            b.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.0..2.0));
        }
        let first = Checkpoint::from_model(&model, Vec::new()).to_bytes()?;
        let second = Checkpoint::from_bytes(&first)?.to_bytes()?;
        s.check(first == second, || format!("{spec}: re-saved archive differs"));
        let back: Model<f32> = Checkpoint::from_bytes(&first)?.to_model()?;
        let same = back
            .params()
            .iter()
            .chain(back.buffers())
            .zip(model.params().iter().chain(model.buffers()))
            .all(|(a, b)| a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        s.check(same, || format!("{spec}: tensors changed in the round trip"));
    }
    Ok(s.finish())
}

/// The convolution kernel against a direct six-loop evaluation.
pub fn conv_oracle_suite(count: usize, opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 5);
    let mut s = Suite::new("conv-oracle");
    for _ in 0..count {
        let (n, c, o, k) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4), [1, 3][rng.random_range(0..2)]);
        let (h, w) = (rng.random_range(k..8), rng.random_range(k..8));
        let geom = ConvGeom { stride: rng.random_range(1..3), pad: rng.random_range(0..=k / 2) };
        let x = rand_tensor(&mut rng, &[n, c, h, w]);
        let wt = rand_tensor(&mut rng, &[o, c, k, k]);
        let got = conv2d(&x, &wt, None, geom)?;
        let [_, _, oh, ow] = [got.dims()[0], got.dims()[1], got.dims()[2], got.dims()[3]];
        let mut want = vec![0.0; got.numel()];
        for i in 0..n {
            for oc in 0..o {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = 0.0;
                        for ic in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (y * geom.stride + ky) as isize - geom.pad as isize;
                                    let ix = (xx * geom.stride + kx) as isize - geom.pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        acc += x.data()[((i * c + ic) * h + iy as usize) * w + ix as usize]
                                            * wt.data()[((oc * c + ic) * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                        want[((i * o + oc) * oh + y) * ow + xx] = acc;
                    }
                }
            }
        }
        let err = max_rel_diff(got.data(), &want);
        s.error(err, 1e-9, || format!("conv {:?} * {:?}: error {err:.3e}", x.dims(), wt.dims()));
    }
    Ok(s.finish())
}

/// Every suite, in a fixed order.
pub fn run_all(opts: &VerifyOptions) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        conv_oracle_suite(50, opts)?,
        gradient_suite(20, opts)?,
        double_backprop_suite(opts)?,
        attention_suite(1000, opts)?,
        loss_identity_suite(opts)?,
        beta_suite(),
        checkpoint_suite(10, opts)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        for r in run_all(&VerifyOptions::default()).unwrap() {
            assert!(r.passed(), "{}: {:?}", r.name, r.failure);
            assert!(r.checks > 0);
        }
    }

    #[test]
    fn corrupted_conv_backward_is_caught() {
        let opts = VerifyOptions {
            fault: Some(Fault::ConvBackward),
            ..Default::default()
        };
        let r = gradient_suite(3, &opts).unwrap();
        assert!(!r.passed());
        assert!(r.worst_rel_error.unwrap() > GRADIENT_TOL);
    }
}
