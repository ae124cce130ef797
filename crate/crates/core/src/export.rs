//! Attention map extraction and image export.
//!
//! Grayscale images are binary PGM (`P5`, maxval 255) with min-max scaling.
//! Raw maps are `"ATMP"`, `u32` LE height, `u32` LE width, then row-major
//! little-endian `f32` values.

use std::fs;
use std::path::Path;

use crate::attention::MappingFn;
use crate::autograd::{Tape, Var};
use crate::data::BBox;
use crate::error::{Error, Result};
use crate::nn::{Mode, Model};
use crate::tensor::{resize_bilinear, Tensor};

pub const ATMP_MAGIC: &[u8; 4] = b"ATMP";

/// Min-max scales `values` to `0..=255`; a constant map becomes all zeros.
pub fn scale_to_u8(values: &[f32]) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = hi - lo;
    values
        .iter()
        .map(|&v| {
            if range > 0.0 {
                ((v - lo) / range * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect()
}

pub fn pgm_bytes(values: &[f32], h: usize, w: usize) -> Result<Vec<u8>> {
    if values.len() != h * w {
        return Err(Error::invalid("pgm", format!("{} values for {h}×{w}", values.len())));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(scale_to_u8(values));
    Ok(out)
}

pub fn atmp_bytes(values: &[f32], h: usize, w: usize) -> Result<Vec<u8>> {
    if values.len() != h * w {
        return Err(Error::invalid("atmp", format!("{} values for {h}×{w}", values.len())));
    }
    let mut out = ATMP_MAGIC.to_vec();
    for d in [h, w] {
        out.extend(u32::try_from(d).map_err(|_| Error::invalid("atmp", "dimension too large"))?.to_le_bytes());
    }
    for v in values {
        out.extend(v.to_le_bytes());
    }
    Ok(out)
}

/// Returns `(h, w, values)`.
pub fn parse_atmp(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < 12 || &bytes[..4] != ATMP_MAGIC {
        return Err(Error::Format("not an ATMP map".into()));
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = &bytes[12..];
    if body.len() != h * w * 4 {
        return Err(Error::Truncated);
    }
    let values = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    Ok((h, w, values))
}

pub fn write_pgm(path: &Path, values: &[f32], h: usize, w: usize) -> Result<()> {
    Ok(fs::write(path, pgm_bytes(values, h, w)?)?)
}

pub fn write_atmp(path: &Path, values: &[f32], h: usize, w: usize) -> Result<()> {
    Ok(fs::write(path, atmp_bytes(values, h, w)?)?)
}

/// Attention maps `[N,H,W]` of `model` (inference mode) at each named tap for
/// already-normalized `images`.
pub fn attention_maps(
    model: &Model<f32>,
    images: &Tensor<f32>,
    taps: &[String],
    mapping: MappingFn,
) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut m = model.clone();
    m.set_mode(Mode::Eval);
    let tape = Tape::new();
    let fwd = m.forward_with_taps(&m.param_vars(&tape, false), &Var::constant(images.clone()))?;
    taps.iter()
        .map(|name| Ok((name.clone(), mapping.apply(fwd.tap(name)?)?.value().clone())))
        .collect()
}

/// Share of a map's mass inside `bbox` after bilinear resizing of the `[H,W]`
/// map to the `out_h × out_w` image, and the box's share of the image area.
pub fn box_mass(map: &Tensor<f32>, bbox: &BBox, out_h: usize, out_w: usize) -> Result<(f64, f64)> {
    let up = resize_bilinear(map, out_h, out_w)?;
    let total: f64 = up.data().iter().map(|&v| v as f64).sum();
    let inside: f64 = (bbox.y0..bbox.y1)
        .flat_map(|y| (bbox.x0..bbox.x1).map(move |x| (y, x)))
        .map(|(y, x)| up.data()[y * out_w + x] as f64)
        .sum();
    let frac = bbox.area() as f64 / (out_h * out_w) as f64;
    let mass = if total > 0.0 { inside / total } else { frac };
    Ok((mass, frac))
}
