//! Transfer and regularization losses: activation attention transfer,
//! distillation, input-gradient matching, flip symmetry, the input-gradient
//! penalty, and full-activation regression.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{normalize_map, MapNorm, MapPair, MappingFn, NORMALIZE_EPS};
use crate::autograd::{grad, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy, Model};
use crate::tensor::{flip_h, ConvGeom, Scalar, Tensor};

pub const KD_TEMPERATURE: f64 = 4.0;
pub const KD_ALPHA: f64 = 0.9;

/// Distance between normalized maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    /// `‖d‖_p`.
    PNorm(f64),
    /// `‖d‖₂²`.
    SquaredL2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Beta {
    /// `1000 / (map elements · batch)` per pair.
    Auto,
    Fixed(f64),
    PerPair(Vec<f64>),
}

impl FromStr for Beta {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Beta::Auto);
        }
        let bad = || Error::Config(format!("invalid beta `{s}` (expected auto, a number or a comma list)"));
        let values = s
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        if values.iter().any(|&b| !(b >= 0.0 && b.is_finite())) {
            return Err(Error::Config(format!("beta must be finite and >= 0, got `{s}`")));
        }
        Ok(match values.as_slice() {
            [b] => Beta::Fixed(*b),
            _ => Beta::PerPair(values),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaDecay {
    #[default]
    None,
    /// From the initial value towards 0 over the run.
    Linear,
}

impl BetaDecay {
    /// Multiplier for 0-based `epoch` of `epochs`.
    pub fn factor(self, epoch: usize, epochs: usize) -> f64 {
        match self {
            BetaDecay::None => 1.0,
            BetaDecay::Linear => 1.0 - epoch as f64 / epochs.max(1) as f64,
        }
    }
}

impl FromStr for BetaDecay {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(BetaDecay::None),
            "linear" => Ok(BetaDecay::Linear),
            _ => Err(Error::Config(format!("unknown beta decay `{s}` (expected none or linear)"))),
        }
    }
}

impl fmt::Display for BetaDecay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BetaDecay::None => "none",
            BetaDecay::Linear => "linear",
        })
    }
}

/// Which taps are paired and how their maps are compared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSpec {
    /// `(teacher tap, student tap)`.
    pub pairs: Vec<(String, String)>,
    #[serde(with = "mapping_serde")]
    pub mapping: MappingFn,
    pub map_norm: MapNorm,
    pub distance: Distance,
    pub beta: Beta,
    pub beta_decay: BetaDecay,
}

mod mapping_serde {
    use super::MappingFn;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &MappingFn, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(m)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<MappingFn, D::Error> {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

impl TransferSpec {
    /// Squared-sum mapping, l2-normalized maps, 2-norm distance, automatic β.
    pub fn new(pairs: Vec<(String, String)>) -> Self {
        TransferSpec {
            pairs,
            mapping: MappingFn::default(),
            map_norm: MapNorm::L2,
            distance: Distance::PNorm(2.0),
            beta: Beta::Auto,
            beta_decay: BetaDecay::None,
        }
    }

    /// Pairs every tap name with the same name on the other model.
    pub fn same_names<S: AsRef<str>>(taps: &[S]) -> Self {
        Self::new(
            taps.iter()
                .map(|t| (t.as_ref().to_string(), t.as_ref().to_string()))
                .collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if let Distance::PNorm(p) = self.distance {
            if !(p >= 1.0 && p.is_finite()) {
                return Err(Error::Config(format!("distance norm p must be >= 1, got {p}")));
            }
        }
        match &self.beta {
            Beta::Fixed(b) if !(*b >= 0.0 && b.is_finite()) => {
                Err(Error::Config(format!("beta must be finite and >= 0, got {b}")))
            }
            Beta::PerPair(v) if v.len() != self.pairs.len() => Err(Error::Config(format!(
                "{} betas given for {} pairs",
                v.len(),
                self.pairs.len()
            ))),
            _ => Ok(()),
        }
    }

    /// β for pair `j` before decay.
    pub fn beta_for(&self, j: usize, map_elems: usize, batch: usize) -> f64 {
        match &self.beta {
            Beta::Auto => auto_beta(map_elems, batch),
            Beta::Fixed(b) => *b,
            Beta::PerPair(v) => v[j],
        }
    }
}

pub fn auto_beta(map_elems: usize, batch: usize) -> f64 {
    1000.0 / (map_elems as f64 * batch as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdParams {
    pub temperature: f64,
    pub alpha: f64,
}

impl Default for KdParams {
    fn default() -> Self {
        KdParams {
            temperature: KD_TEMPERATURE,
            alpha: KD_ALPHA,
        }
    }
}

impl KdParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

/// The distance term between per-sample rows of two `[N, M]` maps, summed
/// over the batch.
fn row_distance<T: Scalar>(diff: &Var<T>, distance: Distance) -> Result<Var<T>> {
    match distance {
        Distance::SquaredL2 => diff.square()?.sum_all(),
        Distance::PNorm(p) if p == 2.0 => diff.square()?.sum_last()?.sqrt()?.sum_all(),
        Distance::PNorm(p) if p == 1.0 => diff.abs()?.sum_all(),
        Distance::PNorm(p) => diff
            .abs()?
            .pow(T::of(p))?
            .sum_last()?
            .pow(T::of(1.0 / p))?
            .sum_all(),
    }
}

/// `Σ_j (β_j/2) Σ_n ‖Q̂_S − Q̂_T‖` with `Q̂` the normalized maps; `beta_scale`
/// multiplies every β (decay).
pub fn at_term<T: Scalar>(pairs: &[MapPair<T>], spec: &TransferSpec, beta_scale: f64) -> Result<Var<T>> {
    let mut total: Option<Var<T>> = None;
    for (j, pair) in pairs.iter().enumerate() {
        if pair.student.dims() != pair.teacher.dims() {
            return Err(Error::shape("at_loss", pair.student.dims(), pair.teacher.dims()));
        }
        let (n, m) = (pair.student.dims()[0], pair.student.dims()[1]);
        let beta = spec.beta_for(j, m, n) * beta_scale;
        let qs = normalize_map(&pair.student, spec.map_norm, NORMALIZE_EPS)?;
        let qt = normalize_map(&pair.teacher.detach(), spec.map_norm, NORMALIZE_EPS)?;
        let term = row_distance(&qs.sub(&qt)?, spec.distance)?.scale(T::of(beta / 2.0))?;
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    Ok(total.unwrap_or_else(|| Var::constant(Tensor::scalar(T::zero()))))
}

/// Cross entropy plus the attention transfer term.
pub fn at_loss<T: Scalar>(ce: &Var<T>, pairs: &[MapPair<T>], spec: &TransferSpec) -> Result<Var<T>> {
    if pairs.is_empty() {
        return Err(Error::Config("attention transfer needs at least one tap pair".into()));
    }
    ce.add(&at_term(pairs, spec, 1.0)?)
}

/// A loss split into its logged components: `total = ce + transfer + kd`.
#[derive(Debug, Clone)]
pub struct LossParts<T: Scalar> {
    pub total: Var<T>,
    pub ce: Var<T>,
    pub transfer: Var<T>,
    pub kd: Var<T>,
    /// Student logits on the (unflipped) batch.
    pub logits: Var<T>,
}

fn zero<T: Scalar>() -> Var<T> {
    Var::constant(Tensor::scalar(T::zero()))
}

/// `(1−α)·CE + α·T²·KL(softmax(t/T) ‖ softmax(s/T))`, batch mean.
/// `ce` is the `(1−α)`-weighted part and `kd` the `α·T²·KL` part.
pub fn kd_terms<T: Scalar>(
    student_logits: &Var<T>,
    teacher_logits: &Tensor<T>,
    labels: &[usize],
    params: &KdParams,
) -> Result<LossParts<T>> {
    params.validate()?;
    if student_logits.dims() != teacher_logits.dims() {
        return Err(Error::shape("kd_loss", student_logits.dims(), teacher_logits.dims()));
    }
    let n = student_logits.dims()[0];
    let inv_t = T::of(1.0 / params.temperature);
    let lt = Var::constant(teacher_logits.clone()).scale(inv_t)?.log_softmax()?.detach();
    let pt = lt.exp()?;
    let ls = student_logits.scale(inv_t)?.log_softmax()?;
    let kl = pt.mul(&lt.sub(&ls)?)?.sum_all()?.scale(T::of(1.0 / n as f64))?;
    let ce = softmax_cross_entropy(student_logits, labels)?.scale(T::of(1.0 - params.alpha))?;
    let kd = kl.scale(T::of(params.alpha * params.temperature * params.temperature))?;
    Ok(LossParts {
        total: ce.add(&kd)?,
        ce,
        transfer: zero(),
        kd,
        logits: student_logits.clone(),
    })
}

pub fn kd_loss<T: Scalar>(
    student_logits: &Var<T>,
    teacher_logits: &Tensor<T>,
    labels: &[usize],
    params: &KdParams,
) -> Result<Var<T>> {
    Ok(kd_terms(student_logits, teacher_logits, labels, params)?.total)
}

/// Refuses networks with batch norm for the gradient-based losses.
pub fn require_bn_free<T: Scalar>(model: &Model<T>) -> Result<()> {
    if model.has_batchnorm() {
        return Err(Error::Unsupported(format!(
            "{} uses batch normalization; gradient-based losses differentiate the input \
             gradient again, which batch norm's fused backward does not support. Use a BN-free \
             architecture (bn=0) for gradient-based attention, symmetry and min-l2 modes",
            model.spec()
        )));
    }
    Ok(())
}

/// Mean cross entropy, the per-sample input gradient `∂L(x_n)/∂x_n` as a
/// differentiable function of the parameters, and the logits.
fn ce_and_input_grad<T: Scalar>(
    model: &Model<T>,
    params: &[Var<T>],
    tape: &Tape<T>,
    x: &Tensor<T>,
    labels: &[usize],
) -> Result<(Var<T>, Var<T>, Var<T>)> {
    let xv = tape.leaf(x.clone());
    let logits = model.forward_with_taps(params, &xv)?.logits;
    let ce = softmax_cross_entropy(&logits, labels)?;
    let per_sample = ce.scale(T::of(labels.len() as f64))?;
    let j = grad(&per_sample, &[&xv], true)?.remove(0);
    Ok((ce, j, logits))
}

/// Input gradient of the per-sample loss, as a plain tensor (no graph).
pub fn input_gradient<T: Scalar>(model: &Model<T>, x: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let params = model.param_vars(&tape, false);
    let xv = tape.leaf(x.clone());
    let logits = model.forward_with_taps(&params, &xv)?.logits;
    let per_sample = softmax_cross_entropy(&logits, labels)?.scale(T::of(labels.len() as f64))?;
    Ok(grad(&per_sample, &[&xv], false)?.remove(0).value().clone())
}

/// `(1/N) Σ_n ‖a_n − b_n‖²`.
fn mean_sq_distance<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    let n = a.dims()[0];
    a.sub(b)?.square()?.sum_all()?.scale(T::of(1.0 / n as f64))
}

fn with_penalty<T: Scalar>(ce: Var<T>, d: Var<T>, beta: f64, logits: Var<T>) -> Result<LossParts<T>> {
    let transfer = d.scale(T::of(beta / 2.0))?;
    Ok(LossParts {
        total: ce.add(&transfer)?,
        ce,
        transfer,
        kd: zero(),
        logits,
    })
}

/// `L(W_S, x) + (β/2)·D(J_S, J_T)` against a precomputed teacher input
/// gradient `j_teacher` (see [`input_gradient`]).
pub fn grad_at_terms<T: Scalar>(
    student: &Model<T>,
    params: &[Var<T>],
    tape: &Tape<T>,
    j_teacher: &Tensor<T>,
    x: &Tensor<T>,
    labels: &[usize],
    beta: f64,
) -> Result<LossParts<T>> {
    require_bn_free(student)?;
    if j_teacher.dims() != x.dims() {
        return Err(Error::shape("grad_at_loss", j_teacher.dims(), x.dims()));
    }
    let (ce, js, logits) = ce_and_input_grad(student, params, tape, x, labels)?;
    let d = mean_sq_distance(&js, &Var::constant(j_teacher.clone()))?;
    with_penalty(ce, d, beta, logits)
}

/// Gradient-based attention transfer with a frozen teacher.
pub fn grad_at_loss<T: Scalar>(
    student: &Model<T>,
    params: &[Var<T>],
    tape: &Tape<T>,
    teacher: &Model<T>,
    x: &Tensor<T>,
    labels: &[usize],
    beta: f64,
) -> Result<Var<T>> {
    require_bn_free(teacher)?;
    require_bn_free(student)?;
    let jt = input_gradient(teacher, x, labels)?;
    Ok(grad_at_terms(student, params, tape, &jt, x, labels, beta)?.total)
}

/// `L(W, x) + (β/2)·D(∂L/∂x(x), flip(∂L/∂x(flip x)))`.
pub fn symmetry_terms<T: Scalar>(
    model: &Model<T>,
    params: &[Var<T>],
    tape: &Tape<T>,
    x: &Tensor<T>,
    labels: &[usize],
    beta: f64,
) -> Result<LossParts<T>> {
    require_bn_free(model)?;
    let (ce, j, logits) = ce_and_input_grad(model, params, tape, x, labels)?;
    let (_, j_flipped, _) = ce_and_input_grad(model, params, tape, &flip_h(x)?, labels)?;
    let d = mean_sq_distance(&j, &j_flipped.flip_h()?)?;
    with_penalty(ce, d, beta, logits)
}

pub fn symmetry_loss<T: Scalar>(
    model: &Model<T>,
    params: &[Var<T>],
    tape: &Tape<T>,
    x: &Tensor<T>,
    labels: &[usize],
    beta: f64,
) -> Result<Var<T>> {
    Ok(symmetry_terms(model, params, tape, x, labels, beta)?.total)
}

/// `L(W, x) + (β/2)·(1/N) Σ_n ‖∂L/∂x_n‖²`.
pub fn min_l2_terms<T: Scalar>(
    model: &Model<T>,
    params: &[Var<T>],
    tape: &Tape<T>,
    x: &Tensor<T>,
    labels: &[usize],
    beta: f64,
) -> Result<LossParts<T>> {
    require_bn_free(model)?;
    let (ce, j, logits) = ce_and_input_grad(model, params, tape, x, labels)?;
    let n = x.dims()[0];
    let d = j.square()?.sum_all()?.scale(T::of(1.0 / n as f64))?;
    with_penalty(ce, d, beta, logits)
}

pub fn min_l2_grad_reg<T: Scalar>(
    model: &Model<T>,
    params: &[Var<T>],
    tape: &Tape<T>,
    x: &Tensor<T>,
    labels: &[usize],
    beta: f64,
) -> Result<Var<T>> {
    Ok(min_l2_terms(model, params, tape, x, labels, beta)?.total)
}

/// `(1/N) Σ_n ‖ŝ_n − t̂_n‖²` where `ŝ`, `t̂` are the per-sample l2-normalized
/// activations; the optional `[C_t, C_s, 1, 1]` adapter maps student channels
/// to teacher channels first.
pub fn fact_loss<T: Scalar>(student_act: &Var<T>, teacher_act: &Var<T>, adapter: Option<&Var<T>>) -> Result<Var<T>> {
    let s = match adapter {
        Some(w) => student_act.conv2d(w, None, ConvGeom::default())?,
        None => student_act.clone(),
    };
    if s.dims() != teacher_act.dims() {
        let hint = if adapter.is_none() { " (channel mismatch needs an adapter)" } else { "" };
        return Err(Error::invalid(
            "fact_loss",
            format!("student {:?} vs teacher {:?}{hint}", s.dims(), teacher_act.dims()),
        ));
    }
    let s = normalize_map(&s.flatten_samples()?, MapNorm::L2, NORMALIZE_EPS)?;
    let t = normalize_map(&teacher_act.detach().flatten_samples()?, MapNorm::L2, NORMALIZE_EPS)?;
    mean_sq_distance(&s, &t)
}

/// Full-activation transfer over `spec.pairs`:
/// `Σ_j (β_j/2) Σ_n ‖ŝ_n − t̂_n‖²`, with `β_j` chosen from the pair's spatial
/// size as for attention maps. `adapters[j]` maps student channels to teacher
/// channels where they differ.
pub fn fact_term<T: Scalar>(
    teacher_taps: &[(String, Var<T>)],
    student_taps: &[(String, Var<T>)],
    spec: &TransferSpec,
    adapters: &[Option<Var<T>>],
    beta_scale: f64,
) -> Result<Var<T>> {
    let find = |taps: &[(String, Var<T>)], name: &str| -> Result<Var<T>> {
        taps.iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| Error::UnknownTap {
                name: name.to_string(),
                available: taps.iter().map(|(n, _)| n.clone()).collect(),
            })
    };
    let mut total = zero();
    for (j, (t_name, s_name)) in spec.pairs.iter().enumerate() {
        let t = find(teacher_taps, t_name)?;
        let s = find(student_taps, s_name)?;
        let [n, _, h, w] = t.value().nchw("fact_loss")?;
        let beta = spec.beta_for(j, h * w, n) * beta_scale;
        let term = fact_loss(&s, &t, adapters.get(j).and_then(Option::as_ref))?
            .scale(T::of(beta / 2.0 * n as f64))?;
        total = total.add(&term)?;
    }
    Ok(total)
}
