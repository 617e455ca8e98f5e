//! Checkpoint layout, all integers little-endian `u32`:
//!
//! ```text
//! "NKEM" | version | tag length | tag (UTF-8) | tensor count
//!        | per tensor: rank | dims… | f32 values
//! ```

use std::path::Path;

use super::{Architecture, Model};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NKEM";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(model: &Model) -> Vec<u8> {
    let tag = model.architecture.tag();
    let params = model.params();
    let mut out = Vec::with_capacity(16 + tag.len() + 4 * model.param_count() + 32 * params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tag.len() as u32).to_le_bytes());
    out.extend_from_slice(tag.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.shape().len() as u32).to_le_bytes());
        for &d in p.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::Length {
                what: "checkpoint",
                expected: self.pos.saturating_add(n),
                actual: self.bytes.len(),
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint: missing NKEM magic".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let tag_len = cur.u32()? as usize;
    let tag =
        std::str::from_utf8(cur.take(tag_len)?).map_err(|_| Error::Format("architecture tag is not UTF-8".into()))?;
    let mut model: Model = Architecture::from_tag(tag)?.build(0);
    let count = cur.u32()? as usize;
    if count != model.params().len() {
        return Err(Error::Format(format!(
            "{tag} has {} parameter tensors, checkpoint holds {count}",
            model.params().len()
        )));
    }
    for (i, param) in model.params_mut().into_iter().enumerate() {
        let rank = cur.u32()? as usize;
        let shape = (0..rank)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if shape != param.shape() {
            return Err(Error::Format(format!(
                "tensor {i}: shape {shape:?}, expected {:?}",
                param.shape()
            )));
        }
        let raw = cur.take(4 * param.len())?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        *param = Tensor::new(shape, values)?;
    }
    if cur.pos != bytes.len() {
        return Err(Error::Length {
            what: "checkpoint",
            expected: cur.pos,
            actual: bytes.len(),
        });
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, write_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    read_checkpoint(&bytes)
}

/// 64-bit FNV-1a of the serialized model, as 16 hex digits.
pub fn checkpoint_id(model: &Model) -> String {
    let hash = write_checkpoint(model).iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    });
    format!("{hash:016x}")
}
