//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "MTABCKPT"
//! version  u32
//! config   u32 length + UTF-8 JSON of ModelConfig
//! count    u32 number of tensors
//! tensor*  u32 name length + UTF-8 name, u32 rank, rank x u64 dims,
//!          numel x f64
//! trailer  8 bytes  "MTABEND\0"
//! ```

use std::path::Path;

use super::{MambaTabModel, ModelConfig, ModelError, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"MTABCKPT";
const TRAILER: &[u8; 8] = b"MTABEND\0";
pub const FORMAT_VERSION: u32 = 1;

pub fn to_bytes(model: &MambaTabModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(model.config()).expect("config serializes");
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for (_, name, t) in model.params().iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(TRAILER);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| ModelError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<MambaTabModel> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(ModelError::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(ModelError::Format(format!(
            "format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let len = r.u32()? as usize;
    let config: ModelConfig =
        serde_json::from_slice(r.take(len)?).map_err(|e| ModelError::Format(format!("config block: {e}")))?;

    // skeleton with the right layout; every tensor is overwritten below
    let mut model = MambaTabModel::new(config, 0)?;
    let count = r.u32()? as usize;
    if count != model.params().len() {
        return Err(ModelError::Format(format!(
            "{count} tensors, config implies {}",
            model.params().len()
        )));
    }
    for i in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| ModelError::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let id = model
            .params()
            .find(&name)
            .filter(|id| id.index() == i)
            .ok_or_else(|| ModelError::Format(format!("unexpected tensor `{name}` at position {i}")))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if shape != model.params().get(id).shape() {
            return Err(ModelError::Format(format!(
                "tensor `{name}` has shape {shape:?}, expected {:?}",
                model.params().get(id).shape()
            )));
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        model.params_mut().set(id, Tensor::new(shape, data)?);
    }
    if r.take(8)? != TRAILER {
        return Err(ModelError::Format("bad trailer".into()));
    }
    if r.pos != buf.len() {
        return Err(ModelError::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(model)
}

pub fn save(model: &MambaTabModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<MambaTabModel> {
    from_bytes(&std::fs::read(path)?)
}
