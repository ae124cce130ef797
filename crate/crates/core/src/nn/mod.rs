//! Layers, the tapped model graph, and architecture builders.

mod arch;
mod loss;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{ConvGeom, Scalar, Tensor};

pub use arch::{build, build_nin, build_wrn, ArchFamily, ArchSpec, NIN_BASE_CHANNELS, NIN_THIN, NIN_WIDE};
pub use loss::softmax_cross_entropy;

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Named tensor owned by a model (trainable parameter or buffer).
#[derive(Debug, Clone, PartialEq)]
pub struct Named<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Relu,
    BatchNorm,
    MaxPool,
    GlobalAvgPool,
    Linear,
    ResidualBlock,
}

#[derive(Debug, Clone)]
pub(crate) struct ConvRef {
    weight: usize,
    bias: Option<usize>,
    geom: ConvGeom,
}

#[derive(Debug, Clone)]
pub(crate) struct BnRef {
    gamma: usize,
    beta: usize,
    /// Index of the running mean buffer; the running variance follows it.
    stats: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct ResidualBlock {
    bn1: Option<BnRef>,
    conv1: ConvRef,
    bn2: Option<BnRef>,
    conv2: ConvRef,
    shortcut: Option<ConvRef>,
}

#[derive(Debug, Clone)]
pub(crate) enum Layer {
    Conv(ConvRef),
    Relu,
    BatchNorm(BnRef),
    MaxPool { k: usize, stride: usize },
    GlobalAvgPool,
    Linear { weight: usize, bias: usize },
    Residual(Box<ResidualBlock>),
}

impl Layer {
    fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv(_) => LayerKind::Conv,
            Layer::Relu => LayerKind::Relu,
            Layer::BatchNorm(_) => LayerKind::BatchNorm,
            Layer::MaxPool { .. } => LayerKind::MaxPool,
            Layer::GlobalAvgPool => LayerKind::GlobalAvgPool,
            Layer::Linear { .. } => LayerKind::Linear,
            Layer::Residual(_) => LayerKind::ResidualBlock,
        }
    }

    fn has_batchnorm(&self) -> bool {
        match self {
            Layer::BatchNorm(_) => true,
            Layer::Residual(b) => b.bn1.is_some() || b.bn2.is_some(),
            _ => false,
        }
    }
}

/// A transfer point: the activation right after layer `layer`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tap {
    pub name: String,
    pub layer: usize,
}

/// Running-statistics update produced by a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct BnUpdate<T> {
    stats: usize,
    mean: Vec<T>,
    var: Vec<T>,
}

pub struct Forward<T: Scalar> {
    pub logits: Var<T>,
    pub taps: Vec<(String, Var<T>)>,
    pub bn_updates: Vec<BnUpdate<T>>,
}

impl<T: Scalar> Forward<T> {
    pub fn tap(&self, name: &str) -> Result<&Var<T>> {
        self.taps
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::UnknownTap {
                name: name.to_string(),
                available: self.taps.iter().map(|(n, _)| n.clone()).collect(),
            })
    }
}

/// Ordered layer graph with named parameters, batch-norm buffers and taps.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar = f32> {
    spec: ArchSpec,
    layers: Vec<Layer>,
    params: Vec<Named<T>>,
    buffers: Vec<Named<T>>,
    taps: Vec<Tap>,
    mode: Mode,
    in_channels: usize,
    min_input: usize,
}

impl<T: Scalar> Model<T> {
    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn arch_tag(&self) -> String {
        self.spec.to_string()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn params(&self) -> &[Named<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Named<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Named<T>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Named<T>] {
        &mut self.buffers
    }

    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }

    pub fn tap_names(&self) -> Vec<String> {
        self.taps.iter().map(|t| t.name.clone()).collect()
    }

    /// Keeps only the named taps (in their original order).
    pub fn retain_taps(&mut self, names: &[&str]) -> Result<()> {
        for n in names {
            if !self.taps.iter().any(|t| t.name == *n) {
                return Err(Error::UnknownTap {
                    name: n.to_string(),
                    available: self.tap_names(),
                });
            }
        }
        self.taps.retain(|t| names.contains(&t.name.as_str()));
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn layer_kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(Layer::kind).collect()
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers.iter().any(Layer::has_batchnorm)
    }

    pub fn num_classes(&self) -> usize {
        self.spec.classes
    }

    /// Parameters as tape leaves (`trainable`) or as constants.
    pub fn param_vars(&self, tape: &Tape<T>, trainable: bool) -> Vec<Var<T>> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.leaf(p.value.clone())
                } else {
                    Var::constant(p.value.clone())
                }
            })
            .collect()
    }

    /// Converts every parameter and buffer to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let conv = |v: &[Named<T>]| {
            v.iter()
                .map(|n| Named {
                    name: n.name.clone(),
                    value: n.value.cast(),
                })
                .collect()
        };
        Model {
            spec: self.spec.clone(),
            layers: self.layers.clone(),
            params: conv(&self.params),
            buffers: conv(&self.buffers),
            taps: self.taps.clone(),
            mode: self.mode,
            in_channels: self.in_channels,
            min_input: self.min_input,
        }
    }

    /// Runs the model and returns logits plus every tap's activation, all on
    /// the tape of `params`/`x`. Train mode normalizes with batch statistics
    /// and reports running-stat updates; apply them with [`Model::apply_bn_updates`].
    pub fn forward_with_taps(&self, params: &[Var<T>], x: &Var<T>) -> Result<Forward<T>> {
        if params.len() != self.params.len() {
            return Err(Error::invalid(
                "forward",
                format!("expected {} parameters, got {}", self.params.len(), params.len()),
            ));
        }
        let [_, c, h, w] = x.value().nchw("forward")?;
        if c != self.in_channels || h < self.min_input || w < self.min_input {
            return Err(Error::invalid(
                "forward",
                format!(
                    "input {:?} incompatible with {} (needs {} channels and spatial size >= {})",
                    x.dims(),
                    self.spec,
                    self.in_channels,
                    self.min_input
                ),
            ));
        }
        let mut run = Runner {
            model: self,
            params,
            updates: Vec::new(),
        };
        let mut taps = Vec::with_capacity(self.taps.len());
        let mut next_tap = self.taps.iter().peekable();
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = run.layer(layer, &h)?;
            while let Some(t) = next_tap.next_if(|t| t.layer == i) {
                taps.push((t.name.clone(), h.clone()));
            }
        }
        if h.value().rank() != 2 {
            return Err(Error::invalid("forward", format!("model produced {:?}, not [N,K]", h.dims())));
        }
        Ok(Forward {
            logits: h,
            taps,
            bn_updates: run.updates,
        })
    }

    /// Forward pass with constant parameters.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let params = self.param_vars(&tape, false);
        let fwd = self.forward_with_taps(&params, &Var::constant(x.clone()))?;
        Ok(fwd.logits.value().clone())
    }

    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<T>]) {
        let m = T::of(BN_MOMENTUM);
        let one_minus = T::one() - m;
        for u in updates {
            for (slot, fresh) in [(u.stats, &u.mean), (u.stats + 1, &u.var)] {
                let buf = self.buffers[slot].value.data_mut();
                for (r, &b) in buf.iter_mut().zip(fresh.iter()) {
                    *r = m * *r + one_minus * b;
                }
            }
        }
    }
}

struct Runner<'a, T: Scalar> {
    model: &'a Model<T>,
    params: &'a [Var<T>],
    updates: Vec<BnUpdate<T>>,
}

impl<T: Scalar> Runner<'_, T> {
    fn conv(&self, c: &ConvRef, x: &Var<T>) -> Result<Var<T>> {
        x.conv2d(&self.params[c.weight], c.bias.map(|b| &self.params[b]), c.geom)
    }

    fn bn(&mut self, b: &BnRef, x: &Var<T>) -> Result<Var<T>> {
        let (gamma, beta) = (&self.params[b.gamma], &self.params[b.beta]);
        let eps = T::of(BN_EPS);
        match self.model.mode {
            Mode::Train => {
                let out = x.batch_norm_train(gamma, beta, eps)?;
                self.updates.push(BnUpdate {
                    stats: b.stats,
                    mean: out.mean,
                    var: out.var,
                });
                Ok(out.output)
            }
            Mode::Eval => {
                let bufs = &self.model.buffers;
                x.batch_norm_eval(
                    gamma,
                    beta,
                    bufs[b.stats].value.data(),
                    bufs[b.stats + 1].value.data(),
                    eps,
                )
            }
        }
    }

    fn layer(&mut self, layer: &Layer, x: &Var<T>) -> Result<Var<T>> {
        match layer {
            Layer::Conv(c) => self.conv(c, x),
            Layer::Relu => x.relu(),
            Layer::BatchNorm(b) => self.bn(b, x),
            Layer::MaxPool { k, stride } => x.maxpool2d(*k, *stride),
            Layer::GlobalAvgPool => x.global_avgpool(),
            Layer::Linear { weight, bias } => x
                .matmul(&self.params[*weight], false, true)?
                .add_bias(&self.params[*bias]),
            Layer::Residual(block) => {
                let pre = match &block.bn1 {
                    Some(b) => self.bn(b, x)?.relu()?,
                    None => x.relu()?,
                };
                let y = self.conv(&block.conv1, &pre)?;
                let y = match &block.bn2 {
                    Some(b) => self.bn(b, &y)?.relu()?,
                    None => y.relu()?,
                };
                let y = self.conv(&block.conv2, &y)?;
                let skip = match &block.shortcut {
                    Some(s) => self.conv(s, &pre)?,
                    None => x.clone(),
                };
                y.add(&skip)
            }
        }
    }
}

/// Incrementally assembles a [`Model`]: allocates parameters with He
/// initialization and records layers and taps.
pub(crate) struct ModelBuilder<'r, T: Scalar, R: Rng> {
    rng: &'r mut R,
    layers: Vec<Layer>,
    params: Vec<Named<T>>,
    buffers: Vec<Named<T>>,
    taps: Vec<Tap>,
}

impl<'r, T: Scalar, R: Rng> ModelBuilder<'r, T, R> {
    pub(crate) fn new(rng: &'r mut R) -> Self {
        ModelBuilder {
            rng,
            layers: Vec::new(),
            params: Vec::new(),
            buffers: Vec::new(),
            taps: Vec::new(),
        }
    }

    fn param(&mut self, name: String, value: Tensor<T>) -> usize {
        self.params.push(Named { name, value });
        self.params.len() - 1
    }

    fn he(&mut self, dims: &[usize], fan_in: usize) -> Tensor<T> {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
        Tensor::from_fn(dims, |_| T::of(normal.sample(self.rng)))
    }

    pub(crate) fn conv_ref(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        geom: ConvGeom,
        bias: bool,
    ) -> ConvRef {
        let w = self.he(&[cout, cin, k, k], cin * k * k);
        let weight = self.param(format!("{name}.weight"), w);
        let bias = bias.then(|| self.param(format!("{name}.bias"), Tensor::zeros(&[cout])));
        ConvRef { weight, bias, geom }
    }

    pub(crate) fn bn_ref(&mut self, name: &str, ch: usize) -> BnRef {
        let gamma = self.param(format!("{name}.gamma"), Tensor::ones(&[ch]));
        let beta = self.param(format!("{name}.beta"), Tensor::zeros(&[ch]));
        self.buffers.push(Named {
            name: format!("{name}.running_mean"),
            value: Tensor::zeros(&[ch]),
        });
        self.buffers.push(Named {
            name: format!("{name}.running_var"),
            value: Tensor::ones(&[ch]),
        });
        BnRef {
            gamma,
            beta,
            stats: self.buffers.len() - 2,
        }
    }

    pub(crate) fn push(&mut self, layer: Layer) {
        self.layers.push(layer);
    }

    pub(crate) fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, geom: ConvGeom, bias: bool) {
        let c = self.conv_ref(name, cin, cout, k, geom, bias);
        self.push(Layer::Conv(c));
    }

    /// Scales the weight of the most recently added conv. A small classifier
    /// init keeps BN-free nets from saturating in the first steps.
    pub(crate) fn scale_last_conv(&mut self, factor: f64) {
        if let Some(Layer::Conv(c)) = self.layers.last() {
            for v in self.params[c.weight].value.data_mut() {
                *v = *v * T::of(factor);
            }
        }
    }

    pub(crate) fn batchnorm(&mut self, name: &str, ch: usize) {
        let b = self.bn_ref(name, ch);
        self.push(Layer::BatchNorm(b));
    }

    pub(crate) fn linear(&mut self, name: &str, fin: usize, fout: usize) {
        let w = self.he(&[fout, fin], fin);
        let weight = self.param(format!("{name}.weight"), w);
        let bias = self.param(format!("{name}.bias"), Tensor::zeros(&[fout]));
        self.push(Layer::Linear { weight, bias });
    }

    /// Taps the output of the most recently pushed layer.
    pub(crate) fn tap(&mut self, name: impl Into<String>) {
        let layer = self.layers.len() - 1;
        self.taps.push(Tap {
            name: name.into(),
            layer,
        });
    }

    pub(crate) fn finish(self, spec: ArchSpec, in_channels: usize, min_input: usize) -> Model<T> {
        debug_assert!(self.taps.windows(2).all(|w| w[0].layer < w[1].layer));
        Model {
            spec,
            layers: self.layers,
            params: self.params,
            buffers: self.buffers,
            taps: self.taps,
            mode: Mode::Train,
            in_channels,
            min_input,
        }
    }
}

#[cfg(test)]
mod tests;
