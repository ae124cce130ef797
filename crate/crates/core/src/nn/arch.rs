//! Architecture descriptions and the NIN / WRN builders.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Layer, Model, ModelBuilder, ResidualBlock};
use crate::error::{Error, Result};
use crate::tensor::{ConvGeom, Scalar};

/// Per-group channel counts of a width-1 NIN.
pub const NIN_BASE_CHANNELS: [usize; 3] = [32, 64, 128];
/// Classifier weights start at this fraction of the He scale.
const NIN_CLASSIFIER_INIT_SCALE: f64 = 0.1;
/// Width multiplier of the ~0.2M-parameter NIN.
pub const NIN_THIN: f64 = 1.2;
/// Width multiplier of the ~1M-parameter NIN.
pub const NIN_WIDE: f64 = 2.7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArchFamily {
    Nin { width: f64 },
    Wrn { depth: usize, k: usize },
    /// `depth` conv+ReLU layers of `width` channels and `kernel`×`kernel`
    /// support (same padding), optional 2×2 max pooling after the first, then
    /// a 1×1 classifier and global average pooling. Used for checks.
    Toy { depth: usize, width: usize, kernel: usize, pool: bool },
}

/// Everything needed to rebuild a model's structure. Its `Display` form is
/// the architecture tag stored in checkpoints and parsed back by `FromStr`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchSpec {
    pub family: ArchFamily,
    pub classes: usize,
    pub in_channels: usize,
    pub with_bn: bool,
    /// NIN only: keep the ReLU that directly precedes each pooling layer.
    pub relu_before_pool: bool,
    /// WRN only: expose a tap after every residual block, not just per group.
    pub block_taps: bool,
}

impl ArchSpec {
    pub fn new(family: ArchFamily) -> Self {
        ArchSpec {
            family,
            classes: 10,
            in_channels: 3,
            with_bn: true,
            relu_before_pool: true,
            block_taps: false,
        }
    }

    pub fn nin(width: f64) -> Self {
        Self::new(ArchFamily::Nin { width })
    }

    pub fn wrn(depth: usize, k: usize) -> Self {
        Self::new(ArchFamily::Wrn { depth, k })
    }

    pub fn with_classes(mut self, classes: usize) -> Self {
        self.classes = classes;
        self
    }

    pub fn with_in_channels(mut self, c: usize) -> Self {
        self.in_channels = c;
        self
    }

    pub fn with_bn(mut self, on: bool) -> Self {
        self.with_bn = on;
        self
    }

    pub fn with_relu_before_pool(mut self, on: bool) -> Self {
        self.relu_before_pool = on;
        self
    }

    pub fn with_block_taps(mut self, on: bool) -> Self {
        self.block_taps = on;
        self
    }

    pub fn base_name(&self) -> String {
        match self.family {
            ArchFamily::Nin { width } if width == NIN_THIN => "nin-thin".into(),
            ArchFamily::Nin { width } if width == NIN_WIDE => "nin-wide".into(),
            ArchFamily::Nin { width } => format!("nin-w{width}"),
            ArchFamily::Wrn { depth, k } => format!("wrn-{depth}-{k}"),
            ArchFamily::Toy { depth, width, kernel, pool } => {
                format!("toy-{depth}-{width}-{kernel}{}", if pool { "p" } else { "" })
            }
        }
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/classes={}/in={}/bn={}/relupool={}/blocktaps={}",
            self.base_name(),
            self.classes,
            self.in_channels,
            self.with_bn as u8,
            self.relu_before_pool as u8,
            self.block_taps as u8
        )
    }
}

impl FromStr for ArchSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split('/');
        let base = parts.next().unwrap_or_default();
        let bad = || Error::Config(format!("unknown architecture `{s}` (expected nin-thin, nin-wide, nin-w<width>, wrn-<depth>-<k> or toy-<depth>-<width>-<kernel>[p])"));
        let family = if base == "nin-thin" {
            ArchFamily::Nin { width: NIN_THIN }
        } else if base == "nin-wide" {
            ArchFamily::Nin { width: NIN_WIDE }
        } else if let Some(w) = base.strip_prefix("nin-w") {
            ArchFamily::Nin {
                width: w.parse().map_err(|_| bad())?,
            }
        } else if let Some(rest) = base.strip_prefix("wrn-") {
            let (d, k) = rest.split_once('-').ok_or_else(bad)?;
            ArchFamily::Wrn {
                depth: d.parse().map_err(|_| bad())?,
                k: k.parse().map_err(|_| bad())?,
            }
        } else if let Some(rest) = base.strip_prefix("toy-") {
            let (rest, pool) = match rest.strip_suffix('p') {
                Some(r) => (r, true),
                None => (rest, false),
            };
            let nums = rest
                .split('-')
                .map(|v| v.parse::<usize>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            let &[depth, width, kernel] = nums.as_slice() else {
                return Err(bad());
            };
            ArchFamily::Toy {
                depth,
                width,
                kernel,
                pool,
            }
        } else {
            return Err(bad());
        };
        let mut spec = ArchSpec::new(family);
        for opt in parts {
            let (key, val) = opt
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad architecture option `{opt}`")))?;
            let num: usize = val
                .parse()
                .map_err(|_| Error::Config(format!("bad value in architecture option `{opt}`")))?;
            match key {
                "classes" => spec.classes = num,
                "in" => spec.in_channels = num,
                "bn" => spec.with_bn = num != 0,
                "relupool" => spec.relu_before_pool = num != 0,
                "blocktaps" => spec.block_taps = num != 0,
                _ => return Err(Error::Config(format!("unknown architecture option `{key}`"))),
            }
        }
        Ok(spec)
    }
}

/// Builds the model described by `spec`, initialized from `seed`.
pub fn build<T: Scalar>(spec: &ArchSpec, seed: u64) -> Result<Model<T>> {
    if spec.classes < 2 || spec.in_channels == 0 {
        return Err(Error::Config(format!(
            "{spec}: need >= 2 classes and >= 1 input channel"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match spec.family {
        ArchFamily::Nin { width } => build_nin_with(spec, width, &mut rng),
        ArchFamily::Wrn { depth, k } => build_wrn_with(spec, depth, k, &mut rng),
        ArchFamily::Toy {
            depth,
            width,
            kernel,
            pool,
        } => build_toy_with(spec, depth, width, kernel, pool, &mut rng),
    }
}

/// NIN with three groups of (3×3, 1×1, 1×1) convolutions, 2×2 max pooling
/// between groups, and a 1×1 classifier conv followed by global average pooling.
pub fn build_nin<T: Scalar>(width: f64, with_bn: bool, relu_before_pool: bool, seed: u64) -> Result<Model<T>> {
    let spec = ArchSpec::nin(width)
        .with_bn(with_bn)
        .with_relu_before_pool(relu_before_pool);
    build(&spec, seed)
}

pub fn build_wrn<T: Scalar>(depth: usize, k: usize, num_classes: usize, seed: u64) -> Result<Model<T>> {
    build(&ArchSpec::wrn(depth, k).with_classes(num_classes), seed)
}

fn build_nin_with<T: Scalar>(spec: &ArchSpec, width: f64, rng: &mut ChaCha8Rng) -> Result<Model<T>> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::Config(format!("NIN width must be > 0, got {width}")));
    }
    let channels = NIN_BASE_CHANNELS.map(|c| ((c as f64 * width).round() as usize).max(1));
    let bn = spec.with_bn;
    let same = ConvGeom { stride: 1, pad: 0 };
    let mut b = ModelBuilder::new(rng);
    let mut cin = spec.in_channels;
    for (g, &c) in channels.iter().enumerate() {
        let group = format!("group{}", g + 1);
        let pooled = g + 1 < channels.len();
        let convs = [(3, 1, cin), (1, 0, c), (1, 0, c)];
        for (i, &(k, pad, ci)) in convs.iter().enumerate() {
            let name = format!("{group}.conv{}", i + 1);
            b.conv(&name, ci, c, k, ConvGeom { stride: 1, pad }, !bn);
            if bn {
                b.batchnorm(&format!("{group}.bn{}", i + 1), c);
            }
            let last = i + 1 == convs.len();
            if !(last && pooled && !spec.relu_before_pool) {
                b.push(Layer::Relu);
            }
        }
        b.tap(group);
        if pooled {
            b.push(Layer::MaxPool { k: 2, stride: 2 });
        }
        cin = c;
    }
    b.conv("classifier", cin, spec.classes, 1, same, true);
    b.scale_last_conv(NIN_CLASSIFIER_INIT_SCALE);
    b.push(Layer::GlobalAvgPool);
    Ok(b.finish(spec.clone(), spec.in_channels, 4))
}

fn build_wrn_with<T: Scalar>(spec: &ArchSpec, depth: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Model<T>> {
    if depth < 10 || (depth - 4) % 6 != 0 || k == 0 {
        return Err(Error::Config(format!(
            "WRN depth {depth} invalid: (depth - 4) must be a positive multiple of 6, and k >= 1"
        )));
    }
    let per_group = (depth - 4) / 6;
    let widths = [16, 16 * k, 32 * k, 64 * k];
    let bn = spec.with_bn;
    let mut b = ModelBuilder::new(rng);
    b.conv("conv0", spec.in_channels, widths[0], 3, ConvGeom { stride: 1, pad: 1 }, !bn);
    for g in 0..3 {
        for i in 0..per_group {
            let name = format!("group{}.block{}", g + 1, i + 1);
            let cin = if i == 0 { widths[g] } else { widths[g + 1] };
            let cout = widths[g + 1];
            let stride = if i == 0 && g > 0 { 2 } else { 1 };
            let bn1 = bn.then(|| b.bn_ref(&format!("{name}.bn1"), cin));
            let conv1 = b.conv_ref(&format!("{name}.conv1"), cin, cout, 3, ConvGeom { stride, pad: 1 }, !bn);
            let bn2 = bn.then(|| b.bn_ref(&format!("{name}.bn2"), cout));
            let conv2 = b.conv_ref(&format!("{name}.conv2"), cout, cout, 3, ConvGeom { stride: 1, pad: 1 }, !bn);
            let shortcut = (cin != cout || stride != 1).then(|| {
                b.conv_ref(&format!("{name}.shortcut"), cin, cout, 1, ConvGeom { stride, pad: 0 }, false)
            });
            b.push(Layer::Residual(Box::new(ResidualBlock {
                bn1,
                conv1,
                bn2,
                conv2,
                shortcut,
            })));
            if i + 1 == per_group {
                b.tap(format!("group{}", g + 1));
            } else if spec.block_taps {
                b.tap(name);
            }
        }
    }
    if bn {
        b.batchnorm("bn_final", widths[3]);
    }
    b.push(Layer::Relu);
    b.push(Layer::GlobalAvgPool);
    b.linear("fc", widths[3], spec.classes);
    Ok(b.finish(spec.clone(), spec.in_channels, 1))
}

fn build_toy_with<T: Scalar>(
    spec: &ArchSpec,
    depth: usize,
    width: usize,
    kernel: usize,
    pool: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Model<T>> {
    if depth == 0 || width == 0 || kernel % 2 == 0 {
        return Err(Error::Config(format!(
            "toy net needs depth >= 1, width >= 1 and an odd kernel, got {depth}/{width}/{kernel}"
        )));
    }
    let bn = spec.with_bn;
    let mut b = ModelBuilder::new(rng);
    let mut cin = spec.in_channels;
    for i in 0..depth {
        let name = format!("conv{}", i + 1);
        b.conv(&name, cin, width, kernel, ConvGeom { stride: 1, pad: kernel / 2 }, !bn);
        if bn {
            b.batchnorm(&format!("bn{}", i + 1), width);
        }
        b.push(Layer::Relu);
        b.tap(name);
        if pool && i == 0 {
            b.push(Layer::MaxPool { k: 2, stride: 2 });
        }
        cin = width;
    }
    b.conv("classifier", cin, spec.classes, 1, ConvGeom::default(), true);
    b.push(Layer::GlobalAvgPool);
    Ok(b.finish(spec.clone(), spec.in_channels, if pool { 2 } else { 1 }))
}
