use std::fs;
use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn corrupt(path: &Path, msg: impl Into<String>) -> Error {
    Error::CorruptDataset {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| corrupt(path, "truncated header"))
}

/// Returns `(count, rows, cols, pixels in [0,1])`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(corrupt(path, format!("image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let body = &bytes[16..];
    if body.len() != n * rows * cols {
        return Err(corrupt(
            path,
            format!("{} pixel bytes for {n}×{rows}×{cols}", body.len()),
        ));
    }
    Ok((n, rows, cols, body.iter().map(|&b| b as f32 / 255.0).collect()))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(corrupt(path, format!("label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(corrupt(path, format!("{} label bytes for count {n}", body.len())));
    }
    Ok(body.iter().map(|&b| b as usize).collect())
}

fn read_split(dir: &Path, prefix: &str, split: Split) -> Result<Dataset> {
    let read = |name: String| -> Result<(std::path::PathBuf, Vec<u8>)> {
        let path = dir.join(name);
        if !path.is_file() {
            return Err(Error::DatasetNotFound(path));
        }
        let bytes = fs::read(&path)?;
        Ok((path, bytes))
    };
    let (ipath, ibytes) = read(format!("{prefix}-images-idx3-ubyte"))?;
    let (lpath, lbytes) = read(format!("{prefix}-labels-idx1-ubyte"))?;
    let (n, rows, cols, pixels) = parse_idx_images(&ibytes, &ipath)?;
    let labels = parse_idx_labels(&lbytes, &lpath)?;
    if labels.len() != n {
        return Err(corrupt(&lpath, format!("{} labels for {n} images", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(corrupt(&lpath, format!("label {bad} outside 0..=9")));
    }
    Dataset::new(Tensor::new(vec![n, 1, rows, cols], pixels)?, labels, 10, split)
}

/// Reads the `train-*` and `t10k-*` IDX files from `dir`.
pub fn load_mnist_idx(dir: &Path) -> Result<(Dataset, Dataset)> {
    if !dir.is_dir() {
        return Err(Error::DatasetNotFound(dir.to_path_buf()));
    }
    Ok((read_split(dir, "train", Split::Train)?, read_split(dir, "t10k", Split::Test)?))
}
