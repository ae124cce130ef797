use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BBox, Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SYNTH_SIZE: usize = 32;
/// Square, disc, upward triangle, plus sign (all mirror-symmetric left/right).
pub const SHAPE_CLASSES: usize = 4;

const MIN_SIDE: usize = 8;
const MAX_SIDE: usize = 14;
const TEXTURE_AMP: f32 = 0.12;
const PIXEL_NOISE: f32 = 0.08;

/// Whether pixel `(y, x)` of an `s×s` box belongs to shape `class`.
fn inside(class: usize, s: usize, y: usize, x: usize) -> bool {
    let (fy, fx) = (y as f32 + 0.5, x as f32 + 0.5);
    let half = s as f32 / 2.0;
    match class {
        0 => true,
        1 => (fy - half).powi(2) + (fx - half).powi(2) <= half * half,
        2 => (fx - half).abs() <= fy / 2.0,
        _ => {
            let arm = (s as f32 / 6.0).max(1.0);
            (fx - half).abs() <= arm || (fy - half).abs() <= arm
        }
    }
}

/// `n` balanced 3×32×32 images, each with one shape at a random position and
/// scale on a textured noise background. Labels are shape ids; the shape's
/// bounding box is recorded per sample. Pure function of `seed`.
pub fn synth_shapes(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config("synthetic dataset needs n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % SHAPE_CLASSES).collect();
    labels.shuffle(&mut rng);
    let plane = SYNTH_SIZE * SYNTH_SIZE;
    let mut pixels = vec![0f32; n * 3 * plane];
    let mut boxes = Vec::with_capacity(n);
    for (i, &class) in labels.iter().enumerate() {
        let img = &mut pixels[i * 3 * plane..(i + 1) * 3 * plane];
        // Dark background, bright shape: every channel separates them.
        let base: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.05..0.45));
        let color: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.55..1.0));
        let waves: Vec<[f32; 3]> = (0..3)
            .map(|_| {
                [
                    rng.random_range(-0.9..0.9),
                    rng.random_range(-0.9..0.9),
                    rng.random_range(0.0..std::f32::consts::TAU),
                ]
            })
            .collect();
        let s = rng.random_range(MIN_SIDE..=MAX_SIDE);
        let y0 = rng.random_range(0..=SYNTH_SIZE - s);
        let x0 = rng.random_range(0..=SYNTH_SIZE - s);
        let bbox = BBox {
            y0,
            x0,
            y1: y0 + s,
            x1: x0 + s,
        };
        for y in 0..SYNTH_SIZE {
            for x in 0..SYNTH_SIZE {
                let texture: f32 = waves
                    .iter()
                    .map(|[fy, fx, ph]| (fy * y as f32 + fx * x as f32 + ph).sin())
                    .sum::<f32>()
                    * TEXTURE_AMP
                    / 3.0;
                let on = bbox.contains(y, x) && inside(class, s, y - y0, x - x0);
                for c in 0..3 {
                    let v = if on { color[c] } else { base[c] + texture };
                    let noise = rng.random_range(-PIXEL_NOISE..PIXEL_NOISE);
                    img[c * plane + y * SYNTH_SIZE + x] = (v + noise).clamp(0.0, 1.0);
                }
            }
        }
        boxes.push(bbox);
    }
    let images = Tensor::new(vec![n, 3, SYNTH_SIZE, SYNTH_SIZE], pixels)?;
    let mut d = Dataset::new(images, labels, SHAPE_CLASSES, Split::Train)?;
    d.boxes = Some(boxes);
    Ok(d)
}
