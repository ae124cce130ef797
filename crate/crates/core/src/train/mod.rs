//! SGD training for teachers and students, evaluation, seeds and checkpoints.

mod checkpoint;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attention::pair_maps;
use crate::autograd::{grad, Tape, Var};
use crate::data::{augment_traced, AugmentPolicy, Dataset, MeanStd};
use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy, BnUpdate, Mode, Model, Named};
use crate::tensor::Tensor;
use crate::transfer::{
    at_term, fact_term, grad_at_terms, input_gradient, kd_terms, min_l2_terms, require_bn_free,
    symmetry_terms, KdParams, LossParts, TransferSpec,
};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

/// Teacher input gradients are cached per (sample, mirrored) up to this many
/// training samples.
const GRAD_CACHE_LIMIT: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrainMode {
    #[serde(rename = "plain")]
    Plain,
    #[serde(rename = "at")]
    At,
    #[serde(rename = "kd")]
    Kd,
    #[serde(rename = "at+kd")]
    AtKd,
    #[serde(rename = "grad-at")]
    GradAt,
    #[serde(rename = "symmetry")]
    Symmetry,
    #[serde(rename = "min-l2")]
    MinL2,
    #[serde(rename = "factt")]
    FActT,
}

impl TrainMode {
    pub const ALL: [TrainMode; 8] = [
        TrainMode::Plain,
        TrainMode::At,
        TrainMode::Kd,
        TrainMode::AtKd,
        TrainMode::GradAt,
        TrainMode::Symmetry,
        TrainMode::MinL2,
        TrainMode::FActT,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Plain => "plain",
            TrainMode::At => "at",
            TrainMode::Kd => "kd",
            TrainMode::AtKd => "at+kd",
            TrainMode::GradAt => "grad-at",
            TrainMode::Symmetry => "symmetry",
            TrainMode::MinL2 => "min-l2",
            TrainMode::FActT => "factt",
        }
    }

    pub fn needs_teacher(self) -> bool {
        !matches!(self, TrainMode::Plain | TrainMode::Symmetry | TrainMode::MinL2)
    }

    pub fn uses_pairs(self) -> bool {
        matches!(self, TrainMode::At | TrainMode::AtKd | TrainMode::FActT)
    }

    pub fn uses_kd(self) -> bool {
        matches!(self, TrainMode::Kd | TrainMode::AtKd)
    }

    /// Modes that differentiate the input gradient again.
    pub fn is_gradient_based(self) -> bool {
        matches!(self, TrainMode::GradAt | TrainMode::Symmetry | TrainMode::MinL2)
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrainMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = TrainMode::ALL.iter().map(|m| m.as_str()).collect();
                Error::Config(format!("unknown mode `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// Step schedule: `initial · factor^k` after the k-th decay epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay_epochs: Vec<usize>,
    pub factor: f64,
}

impl LrSchedule {
    /// ×0.2 at 60% and 80% of the run.
    pub fn standard(initial: f64, epochs: usize) -> Self {
        LrSchedule {
            initial,
            decay_epochs: vec![
                (epochs as f64 * 0.6).round() as usize,
                (epochs as f64 * 0.8).round() as usize,
            ],
            factor: 0.2,
        }
    }

    pub fn at(&self, epoch: usize) -> f64 {
        let k = self.decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.initial * self.factor.powi(k as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentFlags {
    pub flip: bool,
    pub crop_pad: Option<usize>,
}

impl AugmentFlags {
    pub fn flips_and_crops() -> Self {
        AugmentFlags {
            flip: true,
            crop_pad: Some(4),
        }
    }

    pub fn flips_only() -> Self {
        AugmentFlags {
            flip: true,
            crop_pad: None,
        }
    }

    pub fn policy(&self, norm: MeanStd) -> AugmentPolicy {
        AugmentPolicy {
            flip: self.flip,
            crop_pad: self.crop_pad,
            normalize: norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub mode: TrainMode,
    pub transfer: Option<TransferSpec>,
    pub kd: Option<KdParams>,
    /// β of the gradient-based modes.
    pub grad_beta: f64,
    pub augment: AugmentFlags,
}

impl TrainConfig {
    /// Momentum 0.9, lr 0.1 with the standard decay, weight decay 5e-4.
    /// Gradient-based modes drop weight decay and random crops.
    pub fn new(mode: TrainMode, epochs: usize) -> Self {
        let grad = mode.is_gradient_based();
        TrainConfig {
            epochs,
            batch: 128,
            lr: LrSchedule::standard(0.1, epochs),
            momentum: 0.9,
            weight_decay: if grad { 0.0 } else { 5e-4 },
            seed: 0,
            mode,
            transfer: None,
            kd: mode.uses_kd().then(KdParams::default),
            grad_beta: 1.0,
            augment: if grad {
                AugmentFlags::flips_only()
            } else {
                AugmentFlags::flips_and_crops()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::Config("epochs and batch size must be >= 1".into()));
        }
        if !(self.lr.initial > 0.0 && self.lr.initial.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr.initial)));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("momentum must be in [0, 1) and weight decay >= 0".into()));
        }
        if self.mode.uses_pairs() {
            let spec = self
                .transfer
                .as_ref()
                .ok_or_else(|| Error::Config(format!("mode {} needs a transfer spec", self.mode)))?;
            if spec.pairs.is_empty() {
                return Err(Error::Config(format!("mode {} needs at least one tap pair", self.mode)));
            }
            spec.validate()?;
        }
        if self.mode.uses_kd() {
            self.kd
                .as_ref()
                .ok_or_else(|| Error::Config(format!("mode {} needs distillation parameters", self.mode)))?
                .validate()?;
        }
        if self.mode.is_gradient_based() && !(self.grad_beta >= 0.0 && self.grad_beta.is_finite()) {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.grad_beta)));
        }
        Ok(())
    }
}

/// Training and test splits with the training split's channel statistics.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Dataset,
    pub test: Dataset,
    pub norm: MeanStd,
}

impl TrainData {
    pub fn new(train: Dataset, test: Dataset) -> Self {
        let norm = MeanStd::compute(&train);
        TrainData { train, test, norm }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub beta_scale: f64,
    pub loss: f64,
    pub ce: f64,
    pub transfer: f64,
    pub kd: f64,
    pub train_error: f64,
    pub test_error: f64,
}

/// Per-step loss components; `loss = ce + transfer + kd`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub ce: f64,
    pub transfer: f64,
    pub kd: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochMetrics>,
    pub steps: Vec<StepRecord>,
}

impl History {
    pub fn final_test_error(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.test_error)
    }
}

/// Momentum SGD: `v ← μ·v + (g + λ·p)`, `p ← p − lr·v`. Nothing is updated if
/// any gradient is non-finite.
pub fn sgd_step(
    params: &mut [Named<f32>],
    grads: &[Tensor<f32>],
    velocity: &mut [Tensor<f32>],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::invalid(
            "sgd_step",
            format!("{} params, {} grads, {} velocities", params.len(), grads.len(), velocity.len()),
        ));
    }
    for ((p, g), v) in params.iter().zip(grads).zip(velocity.iter()) {
        if p.value.dims() != g.dims() || v.dims() != g.dims() {
            return Err(Error::shape("sgd_step", p.value.dims(), g.dims()));
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient { param: p.name.clone() });
        }
    }
    let (lr, mu, wd) = (lr as f32, momentum as f32, weight_decay as f32);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        for ((pi, &gi), vi) in p.value.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = mu * *vi + gi + wd * *pi;
            *pi -= lr * *vi;
        }
    }
    Ok(())
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn count_wrong(logits: &Tensor<f32>, labels: &[usize]) -> usize {
    let k = logits.dims()[1];
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) != l)
        .count()
}

/// Predicted classes (first maximum on ties) for normalized images.
pub fn predict_labels(model: &Model<f32>, images: &Tensor<f32>) -> Result<Vec<usize>> {
    let logits = model.predict(images)?;
    let k = logits.dims()[1];
    Ok(logits.data().chunks(k).map(argmax).collect())
}

pub const EVAL_BATCH: usize = 256;

/// Classification error in percent, `100·(1 − accuracy)`, with the model's
/// batch norms in inference mode.
pub fn evaluate(model: &Model<f32>, data: &Dataset, norm: &MeanStd) -> Result<f64> {
    let eval_model;
    let model = if model.mode() == Mode::Eval {
        model
    } else {
        let mut m = model.clone();
        m.set_mode(Mode::Eval);
        eval_model = m;
        &eval_model
    };
    let mut wrong = 0;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let (x, y) = data.batch(chunk)?;
        let logits = model.predict(&norm.apply(&x)?)?;
        wrong += count_wrong(&logits, &y);
    }
    Ok(100.0 * wrong as f64 / data.len() as f64)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Runs `run` once per seed and returns the median with the individual values.
pub fn median_over_seeds(seeds: &[u64], mut run: impl FnMut(u64) -> Result<f64>) -> Result<(f64, Vec<f64>)> {
    let values = seeds.iter().map(|&s| run(s)).collect::<Result<Vec<_>>>()?;
    Ok((median(&values), values))
}

fn check_taps(spec: &TransferSpec, teacher: &Model<f32>, student: &Model<f32>) -> Result<()> {
    let (t_names, s_names) = (teacher.tap_names(), student.tap_names());
    for (t, s) in &spec.pairs {
        for (name, available) in [(t, &t_names), (s, &s_names)] {
            if !available.contains(name) {
                return Err(Error::UnknownTap {
                    name: name.clone(),
                    available: available.clone(),
                });
            }
        }
    }
    Ok(())
}

/// 1×1 adapters for F-ActT pairs whose channel counts differ, He-initialized.
fn make_adapters(
    spec: &TransferSpec,
    teacher: &Model<f32>,
    student: &Model<f32>,
    sample: &Tensor<f32>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Option<Named<f32>>>> {
    let t = teacher.forward_with_taps(&teacher.param_vars(&Tape::new(), false), &Var::constant(sample.clone()))?;
    let s = student.forward_with_taps(&student.param_vars(&Tape::new(), false), &Var::constant(sample.clone()))?;
    spec.pairs
        .iter()
        .map(|(tn, sn)| {
            let (td, sd) = (t.tap(tn)?.dims().to_vec(), s.tap(sn)?.dims().to_vec());
            if td[2..] != sd[2..] {
                return Err(Error::Config(format!(
                    "activation transfer between {tn} {td:?} and {sn} {sd:?} needs equal spatial sizes"
                )));
            }
            if td[1] == sd[1] {
                return Ok(None);
            }
            let normal = Normal::new(0.0, (2.0 / sd[1] as f64).sqrt()).expect("valid std");
            Ok(Some(Named {
                name: format!("adapter.{sn}"),
                value: Tensor::from_fn(&[td[1], sd[1], 1, 1], |_| normal.sample(rng) as f32),
            }))
        })
        .collect()
}

struct Step {
    parts: LossParts<f32>,
    bn_updates: Vec<BnUpdate<f32>>,
}

/// Everything a training step needs besides the student and the batch.
struct Context<'a> {
    config: &'a TrainConfig,
    teacher: Option<Model<f32>>,
    grad_cache: Option<HashMap<(usize, bool), Vec<f32>>>,
    spec: Option<&'a TransferSpec>,
}

impl Context<'_> {
    fn teacher(&self) -> Result<&Model<f32>> {
        self.teacher
            .as_ref()
            .ok_or_else(|| Error::Config(format!("mode {} needs a teacher", self.config.mode)))
    }

    fn spec(&self) -> Result<&TransferSpec> {
        self.spec
            .ok_or_else(|| Error::Config(format!("mode {} needs a transfer spec", self.config.mode)))
    }

    /// Teacher input gradients for the batch, reusing cached rows.
    fn teacher_grad(&mut self, x: &Tensor<f32>, labels: &[usize], ids: &[usize], flips: &[bool]) -> Result<Tensor<f32>> {
        let teacher = self.teacher.as_ref().expect("checked before training");
        let Some(cache) = self.grad_cache.as_mut() else {
            return input_gradient(teacher, x, labels);
        };
        let missing: Vec<usize> = (0..ids.len()).filter(|&i| !cache.contains_key(&(ids[i], flips[i]))).collect();
        if !missing.is_empty() {
            let xm = x.select_batch(&missing)?;
            let ym: Vec<usize> = missing.iter().map(|&i| labels[i]).collect();
            let jm = input_gradient(teacher, &xm, &ym)?;
            let row = jm.numel() / missing.len();
            for (k, &i) in missing.iter().enumerate() {
                cache.insert((ids[i], flips[i]), jm.data()[k * row..(k + 1) * row].to_vec());
            }
        }
        let mut data = Vec::with_capacity(x.numel());
        for (&id, &f) in ids.iter().zip(flips) {
            data.extend_from_slice(&cache[&(id, f)]);
        }
        Tensor::new(x.dims().to_vec(), data)
    }

    fn step(
        &mut self,
        student: &Model<f32>,
        params: &[Var<f32>],
        adapters: &[Option<Var<f32>>],
        tape: &Tape<f32>,
        batch: (&Tensor<f32>, &[usize], &[usize], &[bool]),
        beta_scale: f64,
    ) -> Result<Step> {
        let (x, labels, ids, flips) = batch;
        let mode = self.config.mode;
        let beta = self.config.grad_beta;
        let gradient_step = |parts| Ok(Step { parts, bn_updates: Vec::new() });
        match mode {
            TrainMode::GradAt => {
                let jt = self.teacher_grad(x, labels, ids, flips)?;
                return gradient_step(grad_at_terms(student, params, tape, &jt, x, labels, beta)?);
            }
            TrainMode::Symmetry => return gradient_step(symmetry_terms(student, params, tape, x, labels, beta)?),
            TrainMode::MinL2 => return gradient_step(min_l2_terms(student, params, tape, x, labels, beta)?),
            _ => {}
        }
        let sf = student.forward_with_taps(params, &Var::constant(x.clone()))?;
        let tf = if mode.needs_teacher() {
            let teacher = self.teacher()?;
            Some(teacher.forward_with_taps(&teacher.param_vars(tape, false), &Var::constant(x.clone()))?)
        } else {
            None
        };
        let mut parts = match (mode, &tf) {
            (TrainMode::Kd | TrainMode::AtKd, Some(tf)) => {
                let kd = self.config.kd.as_ref().expect("validated");
                kd_terms(&sf.logits, tf.logits.value(), labels, kd)?
            }
            _ => {
                let ce = softmax_cross_entropy(&sf.logits, labels)?;
                LossParts {
                    total: ce.clone(),
                    ce,
                    transfer: Var::constant(Tensor::scalar(0.0)),
                    kd: Var::constant(Tensor::scalar(0.0)),
                    logits: sf.logits.clone(),
                }
            }
        };
        if let Some(tf) = &tf {
            let transfer = match mode {
                TrainMode::At | TrainMode::AtKd => {
                    let spec = self.spec()?;
                    at_term(&pair_maps(&tf.taps, &sf.taps, spec)?, spec, beta_scale)?
                }
                TrainMode::FActT => fact_term(&tf.taps, &sf.taps, self.spec()?, adapters, beta_scale)?,
                _ => parts.transfer.clone(),
            };
            parts.total = parts.total.add(&transfer)?;
            parts.transfer = transfer;
        }
        Ok(Step {
            parts,
            bn_updates: sf.bn_updates,
        })
    }
}

/// [`train_with`] without a per-epoch callback.
pub fn train(teacher: Option<&Model<f32>>, student: &mut Model<f32>, data: &TrainData, config: &TrainConfig) -> Result<History> {
    train_with(teacher, student, data, config, |_| {})
}

/// Trains `student` in place and returns its metrics. The teacher (when the
/// mode uses one) is frozen and run in inference mode. Shuffling,
/// augmentation and adapter initialization are seeded from `config.seed`.
pub fn train_with(
    teacher: Option<&Model<f32>>,
    student: &mut Model<f32>,
    data: &TrainData,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<History> {
    config.validate()?;
    let mode = config.mode;
    let teacher = match (mode.needs_teacher(), teacher) {
        (true, None) => return Err(Error::Config(format!("mode {mode} needs a teacher"))),
        (true, Some(t)) => {
            let mut t = t.clone();
            t.set_mode(Mode::Eval);
            Some(t)
        }
        (false, _) => None,
    };
    if let Some(t) = &teacher {
        if t.num_classes() != student.num_classes() {
            return Err(Error::Config(format!(
                "teacher has {} classes, student {}",
                t.num_classes(),
                student.num_classes()
            )));
        }
    }
    if mode.is_gradient_based() {
        require_bn_free(student)?;
        if let Some(t) = &teacher {
            require_bn_free(t)?;
        }
    }
    let spec = if mode.uses_pairs() { config.transfer.as_ref() } else { None };

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_a06_u64);
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xada9_7e55_u64);

    let mut adapters: Vec<Option<Named<f32>>> = Vec::new();
    if let (Some(spec), Some(t)) = (spec, &teacher) {
        check_taps(spec, t, student)?;
        if mode == TrainMode::FActT {
            let (probe, _) = data.train.batch(&[0])?;
            adapters = make_adapters(spec, t, student, &data.norm.apply(&probe)?, &mut init_rng)?;
        }
    }

    let cache_teacher_grads = mode == TrainMode::GradAt
        && config.augment.crop_pad.is_none()
        && data.train.len() <= GRAD_CACHE_LIMIT;
    let mut ctx = Context {
        config,
        teacher,
        grad_cache: cache_teacher_grads.then(HashMap::new),
        spec,
    };

    let policy = config.augment.policy(data.norm.clone());
    let n_params = student.params().len();
    let mut velocity: Vec<Tensor<f32>> = student
        .params()
        .iter()
        .chain(adapters.iter().flatten())
        .map(|p| Tensor::zeros(p.value.dims()))
        .collect();
    let mut history = History::default();
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 0..config.epochs {
        let lr = config.lr.at(epoch);
        let beta_scale = spec.map_or(1.0, |s| s.beta_decay.factor(epoch, config.epochs));
        student.set_mode(Mode::Train);
        order.shuffle(&mut shuffle_rng);
        let (mut sums, mut wrong, mut seen) = ([0f64; 4], 0usize, 0usize);
        let mut steps = 0usize;
        for ids in order.chunks(config.batch) {
            let (raw, labels) = data.train.batch(ids)?;
            let (x, flips) = augment_traced(&raw, &policy, &mut aug_rng)?;
            let tape = Tape::new();
            let params = student.param_vars(&tape, true);
            let adapter_vars: Vec<Option<Var<f32>>> = adapters
                .iter()
                .map(|a| a.as_ref().map(|a| tape.leaf(a.value.clone())))
                .collect();
            let step = ctx.step(student, &params, &adapter_vars, &tape, (&x, &labels, ids, &flips), beta_scale)?;
            let wrt: Vec<&Var<f32>> = params.iter().chain(adapter_vars.iter().flatten()).collect();
            let grads: Vec<Tensor<f32>> = grad(&step.parts.total, &wrt, false)?
                .into_iter()
                .map(|g| g.value().clone())
                .collect();
            let (model_grads, adapter_grads) = grads.split_at(n_params);
            let (model_vel, adapter_vel) = velocity.split_at_mut(n_params);
            sgd_step(student.params_mut(), model_grads, model_vel, lr, config.momentum, config.weight_decay)?;
            let mut adapter_params: Vec<Named<f32>> = adapters.iter().flatten().cloned().collect();
            sgd_step(&mut adapter_params, adapter_grads, adapter_vel, lr, config.momentum, config.weight_decay)?;
            let mut fresh = adapter_params.into_iter();
            for a in adapters.iter_mut().flatten() {
                *a = fresh.next().expect("one per adapter");
            }
            student.apply_bn_updates(&step.bn_updates);

            let p = &step.parts;
            let rec = StepRecord {
                epoch,
                step: steps,
                loss: p.total.value().item() as f64,
                ce: p.ce.value().item() as f64,
                transfer: p.transfer.value().item() as f64,
                kd: p.kd.value().item() as f64,
            };
            for (s, v) in sums.iter_mut().zip([rec.loss, rec.ce, rec.transfer, rec.kd]) {
                *s += v * ids.len() as f64;
            }
            wrong += count_wrong(p.logits.value(), &labels);
            seen += ids.len();
            steps += 1;
            history.steps.push(rec);
        }
        let m = EpochMetrics {
            epoch,
            lr,
            beta_scale,
            loss: sums[0] / seen as f64,
            ce: sums[1] / seen as f64,
            transfer: sums[2] / seen as f64,
            kd: sums[3] / seen as f64,
            train_error: 100.0 * wrong as f64 / seen as f64,
            test_error: evaluate(student, &data.test, &data.norm)?,
        };
        on_epoch(&m);
        history.epochs.push(m);
    }
    student.set_mode(Mode::Eval);
    Ok(history)
}
