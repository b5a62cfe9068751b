//! Binary checkpoint container.
//!
//! Layout (little endian):
//!
//! ```text
//! magic    b"CSTKCKPT"
//! version  u32
//! prec     u8            4 = f32, 8 = f64
//! hash     u32 len + utf8 config hash
//! count    u32
//! count × { name: u32 len + utf8, rank: u32, dims: rank × u64 }   header
//! count × data (numel × prec bytes)
//! adam     u8 flag; if 1: step u64, lr/beta1/beta2/eps f64,
//!          then first and second moments per parameter as f64
//! ```

use std::fs;
use std::path::Path;

use crate::adam::{Adam, AdamConfig};
use crate::error::{Result, TensorError};
use crate::param::ParamStore;
use crate::scalar::{Precision, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CSTKCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint<F> {
    pub config_hash: String,
    pub params: Vec<(String, Tensor<F>)>,
    pub adam: Option<Adam>,
}

impl<F: Scalar> Checkpoint<F> {
    pub fn from_store(config_hash: &str, store: &ParamStore<F>, adam: Option<&Adam>) -> Self {
        Self {
            config_hash: config_hash.to_string(),
            params: store
                .ids()
                .map(|id| (store.name(id).to_string(), store.value(id).clone()))
                .collect(),
            adam: adam.cloned(),
        }
    }

    /// Copies saved values into `store`, matching by name and shape.
    pub fn load_into(&self, store: &mut ParamStore<F>) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(TensorError::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for (name, value) in &self.params {
            let id = store
                .find(name)
                .ok_or_else(|| TensorError::Checkpoint(format!("unknown parameter `{}`", name)))?;
            if store.value(id).shape() != value.shape() {
                return Err(TensorError::Checkpoint(format!(
                    "shape of `{}`: checkpoint {:?}, model {:?}",
                    name,
                    value.shape(),
                    store.value(id).shape()
                )));
            }
            store.value_mut(id).data_mut().copy_from_slice(value.data());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(F::PRECISION.tag());
        write_str(&mut out, &self.config_hash);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            write_str(&mut out, name);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        for (_, t) in &self.params {
            for &x in t.data() {
                x.write_le(&mut out);
            }
        }
        match &self.adam {
            None => out.push(0),
            Some(adam) => {
                out.push(1);
                out.extend_from_slice(&adam.step_count().to_le_bytes());
                let c = adam.config;
                for x in [c.lr, c.beta1, c.beta2, c.eps] {
                    out.extend_from_slice(&x.to_le_bytes());
                }
                for moments in [adam.first_moments(), adam.second_moments()] {
                    for m in moments {
                        for &x in m {
                            out.extend_from_slice(&x.to_le_bytes());
                        }
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(TensorError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(TensorError::Checkpoint(format!("unsupported version {}", version)));
        }
        let tag = r.take(1)?[0];
        match Precision::from_tag(tag) {
            Some(p) if p == F::PRECISION => {}
            _ => {
                return Err(TensorError::Checkpoint(format!(
                    "precision tag {} does not match {:?}",
                    tag,
                    F::PRECISION
                )))
            }
        }
        let config_hash = r.string()?;
        let count = r.u32()? as usize;
        let mut header = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let dims = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            header.push((name, dims));
        }
        let width = F::PRECISION.tag() as usize;
        let mut params = Vec::with_capacity(count);
        for (name, dims) in header {
            let numel: usize = dims.iter().product();
            let raw = r.take(numel * width)?;
            let data = raw.chunks(width).map(F::read_le).collect();
            params.push((name, Tensor::new(dims, data)?));
        }
        let adam = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = r.u64()?;
                let config = AdamConfig {
                    lr: r.f64()?,
                    beta1: r.f64()?,
                    beta2: r.f64()?,
                    eps: r.f64()?,
                };
                let mut read_moments = || -> Result<Vec<Vec<f64>>> {
                    params
                        .iter()
                        .map(|(_, t)| (0..t.numel()).map(|_| r.f64()).collect())
                        .collect()
                };
                let first = read_moments()?;
                let second = read_moments()?;
                Some(Adam::from_parts(config, step, first, second))
            }
            other => return Err(TensorError::Checkpoint(format!("bad optimizer flag {}", other))),
        };
        if r.pos != bytes.len() {
            return Err(TensorError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            config_hash,
            params,
            adam,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Reads only the config hash from a checkpoint file header.
pub fn peek_config_hash(bytes: &[u8]) -> Result<String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    r.u32()?;
    r.take(1)?;
    r.string()
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(TensorError::Checkpoint("truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| TensorError::Checkpoint("name is not utf8".into()))
    }
}
