//! Datasets: CIFAR-10 binary batches, MNIST IDX files, procedural shapes,
//! plus augmentation and normalization.

mod augment;
mod cifar;
mod mnist;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use augment::{augment, augment_traced, AugmentPolicy, MeanStd};
pub use cifar::{load_cifar10, parse_cifar_records, CIFAR_RECORD_BYTES};
pub use mnist::{load_mnist_idx, parse_idx_images, parse_idx_labels};
pub use synth::{synth_shapes, SHAPE_CLASSES, SYNTH_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Half-open pixel box `[y0, y1) × [x0, x1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub y0: usize,
    pub x0: usize,
    pub y1: usize,
    pub x1: usize,
}

impl BBox {
    pub fn area(&self) -> usize {
        (self.y1 - self.y0) * (self.x1 - self.x0)
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..self.y1).contains(&y) && (self.x0..self.x1).contains(&x)
    }
}

/// Images `[N,C,H,W]` with values in `[0,1]` and labels in `[0, classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
    /// Object boxes, for generated data.
    pub boxes: Option<Vec<BBox>>,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        let n = images.dims().first().copied().unwrap_or(0);
        if images.rank() != 4 || n == 0 || n != labels.len() {
            return Err(Error::invalid(
                "dataset",
                format!("{} labels for images {:?}", labels.len(), images.dims()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid("dataset", format!("label {bad} outside [0, {classes})")));
        }
        Ok(Dataset {
            images,
            labels,
            classes,
            split,
            boxes: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]`.
    pub fn image_dims(&self) -> [usize; 3] {
        let d = self.images.dims();
        [d[1], d[2], d[3]]
    }

    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        Ok((
            self.images.select_batch(indices)?,
            indices.iter().map(|&i| self.labels[i]).collect(),
        ))
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let (images, labels) = self.batch(indices)?;
        let mut d = Dataset::new(images, labels, self.classes, self.split)?;
        d.boxes = self.boxes.as_ref().map(|b| indices.iter().map(|&i| b[i]).collect());
        Ok(d)
    }

    /// The first `n` samples in file order, taking `n / K` per class (the
    /// remainder going to the lowest class ids while they have samples left).
    pub fn stratified_subset(&self, n: usize) -> Result<Dataset> {
        if n == 0 || n > self.len() {
            return Err(Error::Config(format!("subset size {n} not in [1, {}]", self.len())));
        }
        let k = self.classes;
        let mut quota: Vec<usize> = (0..k).map(|c| n / k + usize::from(c < n % k)).collect();
        let available = self.class_counts();
        // Unfillable quota moves to other classes in id order.
        let mut spare: usize = quota
            .iter_mut()
            .zip(&available)
            .map(|(q, &a)| {
                let over = q.saturating_sub(a);
                *q -= over;
                over
            })
            .sum();
        for (q, &a) in quota.iter_mut().zip(&available) {
            let extra = spare.min(a - *q);
            *q += extra;
            spare -= extra;
        }
        let mut picked = Vec::with_capacity(n);
        for (i, &l) in self.labels.iter().enumerate() {
            if quota[l] > 0 {
                quota[l] -= 1;
                picked.push(i);
            }
        }
        self.subset(&picked)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

#[cfg(test)]
mod tests;
