//! Binary checkpoint format (little-endian):
//!
//! ```text
//! magic  b"CTUNETCK"
//! u32    format version
//! u32    config length, then the config as JSON
//! u32    tensor count, then per tensor:
//!        u8 kind (0 parameter, 1 buffer), u32 name length, name,
//!        u32 rank, u32 dims..., f32 values
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use super::{CtuNet, ModelConfig, ModelError, ParamStore};
use crate::nn::Tensor;

const MAGIC: &[u8; 8] = b"CTUNETCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn to_bytes(model: &CtuNet<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(model.config()).expect("config serializes");
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    let store = model.store();
    let count = store.params().len() + store.buffers().len();
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for (kind, map) in [(0u8, store.params()), (1u8, store.buffers())] {
        for (name, t) in map {
            out.push(kind);
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ModelError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<CtuNet<f32>, ModelError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(ModelError::Checkpoint("not a CTU-Net checkpoint".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(len)?)
        .map_err(|e| ModelError::Checkpoint(format!("config: {e}")))?;
    let count = r.u32()?;
    let mut params = BTreeMap::new();
    let mut buffers = BTreeMap::new();
    for _ in 0..count {
        let kind = r.take(1)?[0];
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| ModelError::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| ModelError::Checkpoint("tensor too large".into()))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::from_vec(&shape, data);
        let map = match kind {
            0 => &mut params,
            1 => &mut buffers,
            k => return Err(ModelError::Checkpoint(format!("unknown tensor kind {k}"))),
        };
        if map.insert(name.clone(), t).is_some() {
            return Err(ModelError::Checkpoint(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(ModelError::Checkpoint("trailing bytes after last tensor".into()));
    }
    CtuNet::from_parts(config, ParamStore::from_maps(params, buffers))
}

pub fn save(model: &CtuNet<f32>, path: &Path) -> Result<(), ModelError> {
    let bytes = to_bytes(model);
    let tmp = path.with_extension("tmp");
    let io = |e| ModelError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn load(path: &Path) -> Result<CtuNet<f32>, ModelError> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    from_bytes(&bytes)
}
