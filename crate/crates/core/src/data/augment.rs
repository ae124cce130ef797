use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel statistics of a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl MeanStd {
    pub fn compute(data: &Dataset) -> MeanStd {
        let [c, h, w] = data.image_dims();
        let plane = h * w;
        let mut sum = vec![0f64; c];
        let mut sq = vec![0f64; c];
        for img in data.images.data().chunks(c * plane) {
            for ch in 0..c {
                for &v in &img[ch * plane..(ch + 1) * plane] {
                    sum[ch] += v as f64;
                    sq[ch] += (v as f64) * (v as f64);
                }
            }
        }
        let count = (data.len() * plane) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| ((s / count - m * m).max(0.0).sqrt().max(1e-6)) as f32)
            .collect();
        MeanStd {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        }
    }

    /// Identity statistics.
    pub fn identity(channels: usize) -> MeanStd {
        MeanStd {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// `(x − mean) / std` per channel of `[N,C,H,W]`.
    pub fn apply(&self, batch: &Tensor<f32>) -> Result<Tensor<f32>> {
        let [_, c, h, w] = batch.nchw("normalize")?;
        if c != self.mean.len() {
            return Err(Error::invalid(
                "normalize",
                format!("{} channel statistics for {c} channels", self.mean.len()),
            ));
        }
        let plane = h * w;
        Ok(Tensor::from_fn(batch.dims(), |i| {
            let ch = (i / plane) % c;
            (batch.data()[i] - self.mean[ch]) / self.std[ch]
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    /// Mirror left/right with probability 0.5.
    pub flip: bool,
    /// Reflect-pad by this many pixels, then crop back to the input size at a
    /// random offset.
    pub crop_pad: Option<usize>,
    pub normalize: MeanStd,
}

impl AugmentPolicy {
    /// Flips, pad-4 crops and the given statistics.
    pub fn standard(normalize: MeanStd) -> Self {
        AugmentPolicy {
            flip: true,
            crop_pad: Some(4),
            normalize,
        }
    }

    /// Normalization only.
    pub fn none(normalize: MeanStd) -> Self {
        AugmentPolicy {
            flip: false,
            crop_pad: None,
            normalize,
        }
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Applies `policy` to each sample of `batch` independently, drawing from
/// `rng` in sample order (flip decision first, then crop offsets).
pub fn augment<R: Rng>(batch: &Tensor<f32>, policy: &AugmentPolicy, rng: &mut R) -> Result<Tensor<f32>> {
    Ok(augment_traced(batch, policy, rng)?.0)
}

/// [`augment`], also returning which samples were mirrored.
pub fn augment_traced<R: Rng>(
    batch: &Tensor<f32>,
    policy: &AugmentPolicy,
    rng: &mut R,
) -> Result<(Tensor<f32>, Vec<bool>)> {
    let [n, c, h, w] = batch.nchw("augment")?;
    if let Some(pad) = policy.crop_pad {
        if pad >= h || pad >= w {
            return Err(Error::invalid(
                "augment",
                format!("reflect padding {pad} does not fit {h}×{w} images"),
            ));
        }
    }
    let plane = h * w;
    let mut out = vec![0f32; batch.numel()];
    let mut flips = Vec::with_capacity(n);
    for s in 0..n {
        let flip = policy.flip && rng.random_bool(0.5);
        flips.push(flip);
        let (dy, dx) = match policy.crop_pad {
            Some(p) => (
                rng.random_range(0..=2 * p) as isize - p as isize,
                rng.random_range(0..=2 * p) as isize - p as isize,
            ),
            None => (0, 0),
        };
        let src = &batch.data()[s * c * plane..(s + 1) * c * plane];
        let dst = &mut out[s * c * plane..(s + 1) * c * plane];
        for ch in 0..c {
            for y in 0..h {
                let sy = reflect(y as isize + dy, h);
                for x in 0..w {
                    let fx = if flip { w - 1 - x } else { x };
                    let sx = reflect(fx as isize + dx, w);
                    dst[ch * plane + y * w + x] = src[ch * plane + sy * w + sx];
                }
            }
        }
    }
    Ok((policy.normalize.apply(&Tensor::new(batch.dims().to_vec(), out)?)?, flips))
}
