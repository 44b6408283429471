//! Named-tensor checkpoints.
//!
//! Layout, all little-endian: `PVNM`, u32 version, stage tag and config
//! hash as u32-length-prefixed UTF-8, u32 tensor count, then per tensor:
//! name, u8 dtype (0 = f32), u8 frozen flag, u32 rank, u64 dims, u64
//! payload byte length, row-major payload.

use std::collections::HashSet;
use std::path::Path;

use numkit::{ParamStore, Tensor};

use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 4] = b"PVNM";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub frozen: bool,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn to_tensor(&self) -> Result<Tensor> {
        Ok(Tensor::new(self.shape.clone(), self.data.iter().map(|&x| x as f64).collect())?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: String,
    pub config_hash: String,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, stage: &str, config_hash: &str) -> Self {
        let tensors = store
            .iter()
            .map(|(name, t, frozen)| NamedTensor {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                frozen,
                data: t.data().iter().map(|&x| x as f32).collect(),
            })
            .collect();
        Self {
            stage: stage.into(),
            config_hash: config_hash.into(),
            tensors,
        }
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn expect_stage(&self, stage: &str) -> Result<()> {
        if self.stage != stage {
            return Err(Error::StageMismatch {
                found: self.stage.clone(),
                expected: stage.into(),
            });
        }
        Ok(())
    }

    /// Copies every tensor into the same-named parameter of `store`.
    /// Frozen parameters are not overwritten; they must already match
    /// the checkpoint bit for bit.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.tensors.len() != store.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, model has {}",
                self.tensors.len(),
                store.len()
            )));
        }
        for t in &self.tensors {
            let id = store
                .id(&t.name)
                .ok_or_else(|| Error::Format(format!("model has no parameter {:?}", t.name)))?;
            if store.value(id).shape() != t.shape.as_slice() {
                return Err(Error::Format(format!("shape mismatch for {:?}", t.name)));
            }
            if store.is_frozen(id) != t.frozen {
                return Err(Error::Format(format!("frozen flag mismatch for {:?}", t.name)));
            }
            if t.frozen {
                let same = store.value(id).data().iter().zip(&t.data).all(|(&a, &b)| a == b as f64);
                if !same {
                    return Err(Error::Contract(format!("frozen parameter {:?} differs from its source", t.name)));
                }
            } else {
                let dst = store.value_mut(id)?;
                for (d, &s) in dst.data_mut().iter_mut().zip(&t.data) {
                    *d = s as f64;
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.stage);
        put_str(&mut out, &self.config_hash);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            if !seen.insert(t.name.as_str()) {
                return Err(Error::Contract(format!("duplicate tensor name {:?}", t.name)));
            }
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::Contract(format!("tensor {:?} shape disagrees with data", t.name)));
            }
            put_str(&mut out, &t.name);
            out.push(DTYPE_F32);
            out.push(t.frozen as u8);
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&((t.data.len() * 4) as u64).to_le_bytes());
            for &x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::BadMagic { path: path.into() });
        }
        r.pos = 4;
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                path: path.into(),
                found: version,
                expected: VERSION,
            });
        }
        let stage = r.string("stage tag")?;
        let config_hash = r.string("config hash")?;
        let n = r.u32("tensor count")? as usize;
        let mut tensors = Vec::new();
        let mut seen = HashSet::new();
        for _ in 0..n {
            let name = r.string("tensor name")?;
            if !seen.insert(name.clone()) {
                return Err(Error::Format(format!("duplicate tensor name {name:?}")));
            }
            let dtype = r.take(1, "dtype")?[0];
            if dtype != DTYPE_F32 {
                return Err(Error::Format(format!("tensor {name:?}: unknown dtype {dtype}")));
            }
            let frozen = match r.take(1, "frozen flag")?[0] {
                0 => false,
                1 => true,
                f => return Err(Error::Format(format!("tensor {name:?}: bad frozen flag {f}"))),
            };
            let rank = r.u32("rank")? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u64("dimension")? as usize);
            }
            let len = r.u64("payload length")?;
            let expect = shape.iter().try_fold(4u64, |acc, &d| acc.checked_mul(d as u64));
            if expect != Some(len) {
                return Err(Error::Truncated {
                    path: path.into(),
                    detail: format!("tensor {name:?} payload length {len} disagrees with its shape"),
                });
            }
            let payload = r.take(len as usize, "payload")?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(NamedTensor {
                name,
                shape,
                frozen,
                data,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            stage,
            config_hash,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).ctx(format!("write {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).ctx(format!("read {}", path.display()))?;
        Self::from_bytes(&bytes, path)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(e) => {
                let s = &self.bytes[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(Error::Truncated {
                path: self.path.into(),
                detail: format!("{what} at byte {} needs {n} bytes, {} left", self.pos, self.bytes.len() - self.pos),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }
}
