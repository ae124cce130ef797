//! One forward+backward training step per loss family, on a batch of 32
//! synthetic images.

use atk_bench::shape_batch;
use atk_core::attention::pair_maps;
use atk_core::nn::{build, softmax_cross_entropy, ArchSpec, Model};
use atk_core::transfer::{at_loss, min_l2_grad_reg, symmetry_loss, grad_at_loss, TransferSpec};
use atk_core::{grad, Tape, Var};
use criterion::{criterion_group, criterion_main, Criterion};

fn model(tag: &str, seed: u64) -> Model<f32> {
    build(&tag.parse::<ArchSpec>().unwrap().with_classes(4), seed).unwrap()
}

fn backward(loss: &Var<f32>, params: &[Var<f32>]) {
    let refs: Vec<&Var<f32>> = params.iter().collect();
    grad(loss, &refs, false).unwrap();
}

fn steps(c: &mut Criterion) {
    let (x, y) = shape_batch(32);
    let mut g = c.benchmark_group("train_step_32");
    g.sample_size(10);

    let wrn = model("wrn-10-1", 1);
    let teacher = model("wrn-10-2", 2);
    g.bench_function("wrn-10-1_ce", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let p = wrn.param_vars(&tape, true);
            let f = wrn.forward_with_taps(&p, &Var::constant(x.clone())).unwrap();
            backward(&softmax_cross_entropy(&f.logits, &y).unwrap(), &p);
        })
    });
    let spec = TransferSpec::same_names(&["group1", "group2", "group3"]);
    g.bench_function("wrn-10-1_at", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let tp = teacher.param_vars(&tape, false);
            let tf = teacher.forward_with_taps(&tp, &Var::constant(x.clone())).unwrap();
            let p = wrn.param_vars(&tape, true);
            let f = wrn.forward_with_taps(&p, &Var::constant(x.clone())).unwrap();
            let ce = softmax_cross_entropy(&f.logits, &y).unwrap();
            let pairs = pair_maps(&tf.taps, &f.taps, &spec).unwrap();
            backward(&at_loss(&ce, &pairs, &spec).unwrap(), &p);
        })
    });

    let nin = model("nin-thin/bn=0/relupool=0", 3);
    let nin_teacher = model("nin-wide/bn=0/relupool=0", 4);
    g.bench_function("nin-thin_min_l2", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let p = nin.param_vars(&tape, true);
            backward(&min_l2_grad_reg(&nin, &p, &tape, &x, &y, 1.0).unwrap(), &p);
        })
    });
    g.bench_function("nin-thin_symmetry", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let p = nin.param_vars(&tape, true);
            backward(&symmetry_loss(&nin, &p, &tape, &x, &y, 1.0).unwrap(), &p);
        })
    });
    g.bench_function("nin-thin_grad_at", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let p = nin.param_vars(&tape, true);
            backward(&grad_at_loss(&nin, &p, &tape, &nin_teacher, &x, &y, 1.0).unwrap(), &p);
        })
    });
    g.finish();
}

criterion_group!(benches, steps);
criterion_main!(benches);
