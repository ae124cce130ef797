//! End-to-end acceptance checks. Each criterion prints one line:
//! `[acceptance] <n> PASS|FAIL|BLOCKED <detail>`.
//!
//! Criteria 6 and 8 need the CIFAR-10 binary batches; point
//! `ATK_CIFAR10_DIR` at the directory holding `data_batch_1.bin` ... to run
//! them. Without it they report BLOCKED.

use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use atk_core::attention::MappingFn;
use atk_core::data::{load_cifar10, synth_shapes};
use atk_core::export::{attention_maps, box_mass};
use atk_core::nn::{build, ArchSpec, Model};
use atk_core::train::{
    median, train_with, AugmentFlags, EpochMetrics, LrSchedule, TrainConfig, TrainData, TrainMode,
};
use atk_core::transfer::{auto_beta, TransferSpec};
use atk_core::verify::{
    attention_suite, beta_suite, checkpoint_suite, double_backprop_suite, gradient_suite, loss_identity_suite,
    SuiteReport, VerifyOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Verdict {
    Pass,
    Fail,
    Blocked,
}

struct Line {
    id: u8,
    verdict: Verdict,
    detail: String,
}

/// Written straight to stderr so the lines show up without `--nocapture`.
fn report(line: &Line) {
    let v = match line.verdict {
        Verdict::Pass => "PASS",
        Verdict::Fail => "FAIL",
        Verdict::Blocked => "BLOCKED",
    };
    let mut err = std::io::stderr().lock();
    writeln!(err, "[acceptance] {:>2} {v:<7} {}", line.id, line.detail).unwrap();
}

fn check(id: u8, ok: bool, detail: String) -> Line {
    Line {
        id,
        verdict: if ok { Verdict::Pass } else { Verdict::Fail },
        detail,
    }
}

fn suite_line(id: u8, r: &SuiteReport, took: Duration, limit: Duration) -> Line {
    let worst = r.worst_rel_error.map(|e| format!(", worst rel err {e:.2e}")).unwrap_or_default();
    let failure = r.failure.as_deref().map(|f| format!(", first failure: {f}")).unwrap_or_default();
    check(
        id,
        r.passed() && took <= limit,
        format!(
            "{}: {} checks{worst}, {:.1}s (limit {}s){failure}",
            r.name,
            r.checks,
            took.as_secs_f64(),
            limit.as_secs()
        ),
    )
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t0 = Instant::now();
    let out = f();
    (out, t0.elapsed())
}

fn criterion_1() -> Line {
    let (r, took) = timed(|| gradient_suite(20, &VerifyOptions::default()).unwrap());
    suite_line(1, &r, took, Duration::from_secs(60))
}

fn criterion_2() -> Line {
    let (r, took) = timed(|| double_backprop_suite(&VerifyOptions::default()).unwrap());
    suite_line(2, &r, took, Duration::from_secs(120))
}

fn criterion_3() -> Line {
    let (r, took) = timed(|| attention_suite(1000, &VerifyOptions::default()).unwrap());
    suite_line(3, &r, took, Duration::from_secs(60))
}

fn criterion_4() -> Line {
    let (r, took) = timed(|| loss_identity_suite(&VerifyOptions::default()).unwrap());
    suite_line(4, &r, took, Duration::from_secs(30))
}

fn criterion_5() -> Line {
    let r = beta_suite();
    let b = auto_beta(64, 128);
    let exact = b == 1000.0 / 8192.0;
    check(
        5,
        r.passed() && exact && (b - 0.1221).abs() < 5e-5,
        format!("auto_beta(64, 128) = {b} (1000/8192 exactly: {exact}); {} checks", r.checks),
    )
}

fn criterion_9() -> Line {
    let (r, took) = timed(|| checkpoint_suite(10, &VerifyOptions::default()).unwrap());
    suite_line(9, &r, took, Duration::from_secs(60))
}

// ---- synthetic-shapes experiments (criteria 7 and 10) ----

/// Protocol fixed on a separate validation draw before these runs.
mod synth_protocol {
    pub const TRAIN_N: usize = 300;
    pub const TRAIN_SEED: u64 = 100;
    pub const TEST_N: usize = 1000;
    /// Held out: differs from the draw used to pick the settings below.
    pub const TEST_SEED: u64 = 4242;
    pub const EPOCHS: usize = 20;
    pub const TEACHER_EPOCHS: usize = 30;
    pub const BATCH: usize = 32;
    pub const LR: f64 = 0.02;
    pub const SEEDS: [u64; 3] = [0, 1, 2];
    pub const STUDENT: &str = "nin-thin/bn=0/relupool=0/classes=4";
    pub const TEACHER: &str = "nin-wide/bn=0/relupool=0/classes=4";
    pub const TEACHER_SEED: u64 = 1;
    pub const BETA_MIN_L2: f64 = 0.1;
    pub const BETA_SYMMETRY: f64 = 0.01;
    pub const BETA_GRAD_AT: f64 = 0.03;
    /// Transfer point whose maps criterion 10 inspects.
    pub const MAP_TAP: &str = "group2";
    pub const MAP_IMAGES: usize = 200;
}

fn synth_config(mode: TrainMode, seed: u64, epochs: usize) -> TrainConfig {
    use synth_protocol::*;
    let mut c = TrainConfig::new(mode, epochs);
    c.batch = BATCH;
    c.lr = LrSchedule::standard(LR, epochs);
    c.weight_decay = 0.0;
    c.augment = AugmentFlags::flips_only();
    c.seed = seed;
    c.grad_beta = match mode {
        TrainMode::MinL2 => BETA_MIN_L2,
        TrainMode::Symmetry => BETA_SYMMETRY,
        TrainMode::GradAt => BETA_GRAD_AT,
        _ => c.grad_beta,
    };
    c
}

fn synth_data() -> TrainData {
    use synth_protocol::*;
    TrainData::new(
        synth_shapes(TRAIN_N, TRAIN_SEED).unwrap(),
        synth_shapes(TEST_N, TEST_SEED).unwrap(),
    )
}

fn synth_teacher(data: &TrainData) -> Model<f32> {
    use synth_protocol::*;
    let mut t: Model<f32> = build(&TEACHER.parse::<ArchSpec>().unwrap(), TEACHER_SEED).unwrap();
    train_with(None, &mut t, data, &synth_config(TrainMode::Plain, TEACHER_SEED, TEACHER_EPOCHS), |_| {}).unwrap();
    t
}

fn synth_student_error(data: &TrainData, teacher: &Model<f32>, mode: TrainMode, seed: u64) -> f64 {
    use synth_protocol::*;
    let mut s: Model<f32> = build(&STUDENT.parse::<ArchSpec>().unwrap(), seed + 10).unwrap();
    let h = train_with(Some(teacher), &mut s, data, &synth_config(mode, seed, EPOCHS), |_| {}).unwrap();
    h.final_test_error().unwrap()
}

fn criterion_7(data: &TrainData, teacher: &Model<f32>, teacher_time: Duration) -> Line {
    use synth_protocol::*;
    let t0 = Instant::now();
    let modes = [TrainMode::Plain, TrainMode::MinL2, TrainMode::Symmetry, TrainMode::GradAt];
    let medians: Vec<(TrainMode, f64, Vec<f64>)> = modes
        .iter()
        .map(|&m| {
            let errs: Vec<f64> = SEEDS.iter().map(|&s| synth_student_error(data, teacher, m, s)).collect();
            (m, median(&errs), errs)
        })
        .collect();
    let took = t0.elapsed() + teacher_time;
    let base = medians[0].1;
    let all_ok = medians[1..].iter().all(|(_, m, _)| *m <= base);
    let detail: Vec<String> = medians
        .iter()
        .map(|(m, med, errs)| format!("{m} {med:.1}% {errs:?}"))
        .collect();
    check(
        7,
        all_ok && took <= Duration::from_secs(3600),
        format!(
            "median test error over seeds {SEEDS:?}: {}; {:.0}s incl. teacher (limit 3600s)",
            detail.join(", "),
            took.as_secs_f64()
        ),
    )
}

fn criterion_10(data: &TrainData, teacher: &Model<f32>) -> Line {
    use synth_protocol::*;
    let test = &data.test;
    let idx: Vec<usize> = (0..MAP_IMAGES.min(test.len())).collect();
    let (images, _) = test.batch(&idx).unwrap();
    let [_, h, w] = test.image_dims();
    let maps = attention_maps(
        teacher,
        &data.norm.apply(&images).unwrap(),
        &[MAP_TAP.to_string()],
        MappingFn::default(),
    )
    .unwrap();
    let map = &maps[0].1;
    let boxes = test.boxes.as_ref().unwrap();
    let (mut mass, mut area) = (0.0, 0.0);
    for (k, &i) in idx.iter().enumerate() {
        let dims = map.dims();
        let single = map.select_batch(&[k]).unwrap().reshape(&[dims[1], dims[2]]).unwrap();
        let (m, a) = box_mass(&single, &boxes[i], h, w).unwrap();
        mass += m;
        area += a;
    }
    let n = idx.len() as f64;
    let (mass, area) = (mass / n, area / n);
    let ratio = mass / area;
    check(
        10,
        ratio >= 1.5,
        format!(
            "teacher {MAP_TAP} F2_sum maps on {} test images: mean in-box mass {mass:.3} vs box area {area:.3} ({ratio:.2}x, need >= 1.5x)",
            idx.len()
        ),
    )
}

// ---- CIFAR-10 experiments (criteria 6 and 8) ----

mod cifar_protocol {
    pub const TRAIN_N: usize = 5000;
    pub const TEST_N: usize = 1000;
    pub const TEACHER: &str = "wrn-10-2";
    pub const TEACHER_EPOCHS: usize = 40;
    pub const STUDENT: &str = "wrn-10-1";
    pub const EPOCHS: usize = 20;
    pub const SEEDS: [u64; 3] = [0, 1, 2];
    pub const TAPS: [&str; 3] = ["group1", "group2", "group3"];
}

struct AtOutcome {
    plain: Vec<Vec<EpochMetrics>>,
    at: Vec<Vec<EpochMetrics>>,
    factt: Vec<Vec<EpochMetrics>>,
    took: Duration,
}

fn final_errors(runs: &[Vec<EpochMetrics>]) -> Vec<f64> {
    runs.iter().map(|r| r.last().unwrap().test_error).collect()
}

/// Per-epoch median test error across seeds.
fn median_curve(runs: &[Vec<EpochMetrics>]) -> Vec<f64> {
    (0..runs[0].len())
        .map(|e| median(&runs.iter().map(|r| r[e].test_error).collect::<Vec<_>>()))
        .collect()
}

/// Teacher, then plain / AT / F-ActT students per seed under one budget.
fn at_experiment(data: &TrainData, teacher_epochs: usize, epochs: usize, seeds: &[u64], batch: usize) -> AtOutcome {
    use cifar_protocol::*;
    let t0 = Instant::now();
    let [c, _, _] = data.train.image_dims();
    let spec = |tag: &str| {
        tag.parse::<ArchSpec>()
            .unwrap()
            .with_in_channels(c)
            .with_classes(data.train.classes)
    };
    let mut teacher: Model<f32> = build(&spec(TEACHER), 1).unwrap();
    let mut tc = TrainConfig::new(TrainMode::Plain, teacher_epochs);
    tc.batch = batch;
    tc.seed = 1;
    train_with(None, &mut teacher, data, &tc, |_| {}).unwrap();
    let run = |mode: TrainMode, seed: u64| {
        let mut s: Model<f32> = build(&spec(STUDENT), seed + 10).unwrap();
        let mut cfg = TrainConfig::new(mode, epochs);
        cfg.batch = batch;
        cfg.seed = seed;
        if mode.uses_pairs() {
            cfg.transfer = Some(TransferSpec::same_names(&TAPS));
        }
        train_with(Some(&teacher), &mut s, data, &cfg, |_| {}).unwrap().epochs
    };
    let collect = |mode| seeds.iter().map(|&s| run(mode, s)).collect::<Vec<_>>();
    AtOutcome {
        plain: collect(TrainMode::Plain),
        at: collect(TrainMode::At),
        factt: collect(TrainMode::FActT),
        took: t0.elapsed(),
    }
}

fn cifar_dir() -> Option<PathBuf> {
    std::env::var_os("ATK_CIFAR10_DIR").map(PathBuf::from)
}

fn criteria_6_and_8() -> [Line; 2] {
    use cifar_protocol::*;
    let Some(dir) = cifar_dir() else {
        let why = "CIFAR-10 not available (set ATK_CIFAR10_DIR to the binary batches directory)".to_string();
        return [
            Line {
                id: 6,
                verdict: Verdict::Blocked,
                detail: why.clone(),
            },
            Line {
                id: 8,
                verdict: Verdict::Blocked,
                detail: why,
            },
        ];
    };
    let (train, test) = load_cifar10(&dir).unwrap();
    let data = TrainData::new(
        train.stratified_subset(TRAIN_N).unwrap(),
        test.stratified_subset(TEST_N).unwrap(),
    );
    let out = at_experiment(&data, TEACHER_EPOCHS, EPOCHS, &SEEDS, 128);
    judge_at(&out, Duration::from_secs(2 * 3600))
}

fn judge_at(out: &AtOutcome, limit: Duration) -> [Line; 2] {
    let (plain, at, factt) = (final_errors(&out.plain), final_errors(&out.at), final_errors(&out.factt));
    let (mp, ma, mf) = (median(&plain), median(&at), median(&factt));
    let (cp, ca) = (median_curve(&out.plain), median_curve(&out.at));
    let lower = cp.iter().zip(&ca).filter(|(p, a)| a < p).count();
    let share = lower as f64 / cp.len() as f64;
    let c6 = check(
        6,
        ma < mp && share >= 0.7 && out.took <= limit,
        format!(
            "median student error plain {mp:.2}% {plain:?} vs AT {ma:.2}% {at:?}; AT lower at {lower}/{} epochs; {:.0}s",
            cp.len(),
            out.took.as_secs_f64()
        ),
    );
    let c8 = check(
        8,
        mp - ma >= mp - mf,
        format!(
            "improvement over plain: AT {:.2} points, F-ActT {:.2} points ({factt:?})",
            mp - ma,
            mp - mf
        ),
    );
    [c6, c8]
}

/// Training comparisons whose verdict depends on noisy seed medians.
const EXPERIMENTS: [u8; 3] = [6, 7, 8];

#[test]
fn acceptance() {
    let mut lines = vec![criterion_1(), criterion_2(), criterion_3(), criterion_4(), criterion_5()];
    lines.iter().for_each(report);
    let [c6, c8] = criteria_6_and_8();
    report(&c6);
    let data = synth_data();
    let (teacher, teacher_time) = timed(|| synth_teacher(&data));
    let c7 = criterion_7(&data, &teacher, teacher_time);
    report(&c7);
    report(&c8);
    let c9 = criterion_9();
    report(&c9);
    let c10 = criterion_10(&data, &teacher);
    report(&c10);
    lines.extend([c6, c7, c8, c9, c10]);
    lines.sort_by_key(|l| l.id);
    let failed: Vec<u8> = lines.iter().filter(|l| l.verdict == Verdict::Fail).map(|l| l.id).collect();
    let blocked: Vec<u8> = lines.iter().filter(|l| l.verdict == Verdict::Blocked).map(|l| l.id).collect();
    let mut err = std::io::stderr().lock();
    writeln!(err, "[acceptance] failed: {failed:?}, blocked: {blocked:?}").unwrap();
    // Seed-median comparisons are outcomes to report, not bugs; a FAIL there
    // stays on its line. Everything else is a correctness check and must hold.
    let broken: Vec<u8> = failed.iter().copied().filter(|id| !EXPERIMENTS.contains(id)).collect();
    assert!(broken.is_empty(), "acceptance criteria failed: {broken:?}");
}

/// The CIFAR protocol end to end on a tiny synthetic stand-in, so its code
/// path stays exercised when the real data is absent. Says nothing about
/// the criteria themselves.
#[test]
fn at_protocol_runs_on_a_small_stand_in() {
    let data = TrainData::new(synth_shapes(64, 5).unwrap(), synth_shapes(32, 6).unwrap());
    let out = at_experiment(&data, 1, 2, &[0, 1], 32);
    assert_eq!(out.at.len(), 2);
    assert!(out.factt.iter().all(|r| r.len() == 2));
    let lines = judge_at(&out, Duration::from_secs(3600));
    assert_eq!(lines.map(|l| l.id), [6, 8]);
}
