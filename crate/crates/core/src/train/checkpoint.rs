//! Binary checkpoint archive.
//!
//! ```text
//! "ATKC" | version u32 | tag_len u16 | tag | count u32
//! count × ( name_len u16 | name | rank u8 | dims u32… | dtype u8 | payload )
//! metrics_len u64 | JSON lines
//! ```
//! All integers and floats are little-endian; dtype 1 is f32.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::EpochMetrics;
use crate::error::{Error, Result};
use crate::nn::{build, ArchSpec, Model};
use crate::tensor::{DType, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ATKC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Architecture tag, parsed by [`ArchSpec`].
    pub arch: String,
    /// Parameters followed by buffers, by name.
    pub tensors: Vec<(String, Tensor<f32>)>,
    /// One entry per completed epoch.
    pub metrics: Vec<EpochMetrics>,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &Model<T>, metrics: Vec<EpochMetrics>) -> Self {
        let tensors = model
            .params()
            .iter()
            .chain(model.buffers())
            .map(|n| (n.name.clone(), n.value.cast()))
            .collect();
        Checkpoint {
            arch: model.arch_tag(),
            tensors,
            metrics,
        }
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> usize {
        self.metrics.len()
    }

    /// Rebuilds the architecture and loads every tensor into it.
    pub fn to_model<T: Scalar>(&self) -> Result<Model<T>> {
        let spec: ArchSpec = self.arch.parse()?;
        let mut model: Model<T> = build(&spec, 0)?;
        let expected = model.params().len() + model.buffers().len();
        if expected != self.tensors.len() {
            return Err(Error::Format(format!(
                "{} tensors stored, {} expects {expected}",
                self.tensors.len(),
                self.arch
            )));
        }
        let mut stored = self.tensors.iter();
        let slots = model.params_mut().iter_mut().map(|n| (n.name.clone(), &mut n.value));
        let mut assign = |name: String, slot: &mut Tensor<T>| -> Result<()> {
            let (sname, t) = stored.next().expect("counts checked");
            if *sname != name || t.dims() != slot.dims() {
                return Err(Error::Format(format!(
                    "tensor `{sname}` {:?} does not match `{name}` {:?}",
                    t.dims(),
                    slot.dims()
                )));
            }
            *slot = t.cast();
            Ok(())
        };
        for (name, slot) in slots {
            assign(name, slot)?;
        }
        for n in model.buffers_mut() {
            assign(n.name.clone(), &mut n.value)?;
        }
        model.set_mode(crate::nn::Mode::Eval);
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend(CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut out, &self.arch)?;
        out.extend(u32::try_from(self.tensors.len()).map_err(|_| too_big("tensor count"))?.to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name)?;
            out.push(u8::try_from(t.rank()).map_err(|_| too_big("rank"))?);
            for &d in t.dims() {
                out.extend(u32::try_from(d).map_err(|_| too_big("dimension"))?.to_le_bytes());
            }
            out.push(DType::F32.tag());
            for v in t.data() {
                out.extend(v.to_le_bytes());
            }
        }
        let mut lines = Vec::new();
        for m in &self.metrics {
            serde_json::to_writer(&mut lines, m)?;
            lines.push(b'\n');
        }
        out.extend((lines.len() as u64).to_le_bytes());
        out.extend(lines);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).map_err(|_| Error::BadMagic)? != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic);
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let arch = r.string()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.take(1)?[0] as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let dtype = r.take(1)?[0];
            if dtype != DType::F32.tag() {
                return Err(Error::Format(format!("tensor `{name}` has unsupported dtype tag {dtype}")));
            }
            let numel = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("tensor `{name}` is too large")))?;
            let payload = r.take(numel.checked_mul(4).ok_or(Error::Truncated)?)?;
            let data = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            tensors.push((name, Tensor::new(dims, data)?));
        }
        let len = usize::try_from(r.u64()?).map_err(|_| Error::Truncated)?;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("metrics block is not UTF-8".into()))?;
        let metrics = text
            .lines()
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<EpochMetrics>, _>>()?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            arch,
            tensors,
            metrics,
        })
    }
}

fn too_big(what: &str) -> Error {
    Error::Format(format!("{what} exceeds the archive's field width"))
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    out.extend(u16::try_from(s.len()).map_err(|_| too_big("string length"))?.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(Error::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("name is not UTF-8".into()))
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
