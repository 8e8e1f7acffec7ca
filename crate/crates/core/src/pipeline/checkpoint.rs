//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "XPCC"  u32 version  u8 stage (0 = CSR, 1 = VSR)  u64 epoch
//! u64 config length, RunConfig JSON
//! u64 parameter count, then per parameter in name order:
//!   u32 name length, UTF-8 name, u32 rank, u64 dims[rank], f64 values
//! ```

use std::fs;
use std::path::Path;

use super::RunConfig;
use crate::autodiff::{ParameterStore, Stage, Tensor};
use crate::error::{Error, Result};
use crate::network::Model;

pub const MAGIC: &[u8; 4] = b"XPCC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    /// Completed epochs of `stage`.
    pub epoch: usize,
    pub config: RunConfig,
    pub params: ParameterStore,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.push(match self.stage {
            Stage::Csr => 0,
            Stage::Vsr => 1,
        });
        out.extend((self.epoch as u64).to_le_bytes());
        let json = serde_json::to_vec(&self.config).expect("config serializes");
        out.extend((json.len() as u64).to_le_bytes());
        out.extend(json);
        out.extend((self.params.len() as u64).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend((name.len() as u32).to_le_bytes());
            out.extend(name.as_bytes());
            out.extend((t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend((d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let stage = match r.take(1)?[0] {
            0 => Stage::Csr,
            1 => Stage::Vsr,
            t => return Err(Error::format("checkpoint", format!("unknown stage tag {t}"))),
        };
        let epoch = r.len()?;
        let json_len = r.len()?;
        let config: RunConfig = serde_json::from_slice(r.take(json_len)?)
            .map_err(|e| Error::format("checkpoint", format!("config: {e}")))?;
        let count = r.len()?;
        let mut params = ParameterStore::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::format("checkpoint", "parameter name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.filter(|&n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()));
            let n = n.ok_or_else(|| Error::format("checkpoint", format!("{name}: dims {dims:?} exceed file")))?;
            let data = r.take(8 * n)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let tensor = Tensor::new(dims, data).map_err(|e| Error::format("checkpoint", e.to_string()))?;
            if params.get(&name).is_some() {
                return Err(Error::format("checkpoint", format!("duplicate parameter {name}")));
            }
            params.insert(name, tensor)?;
        }
        if r.remaining() != 0 {
            return Err(Error::format("checkpoint", format!("{} trailing bytes", r.remaining())));
        }
        Ok(Checkpoint { stage, epoch, config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }

    /// The model, after checking names and shapes against the echoed config.
    pub fn model(&self) -> Result<Model> {
        Model::from_parts(self.config.model.clone(), self.params.clone())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::format("checkpoint", "truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::format("checkpoint", "length overflows"))
    }
}
