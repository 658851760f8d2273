//! Binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic          8 bytes   "ROARCKPT"
//! version        u32       currently 1
//! hash_len       u32
//! config_hash    hash_len bytes of UTF-8 (hex SHA-256 of the resolved config)
//! param_count    u32
//! param_count × {
//!     name_len   u32
//!     name       name_len bytes of UTF-8
//!     ndim       u32
//!     dims       ndim × u64
//!     payload    product(dims) × f64
//! }
//! has_optimizer  u8        0 or 1
//! if 1 {
//!     lr, beta1, beta2, epsilon, weight_decay   5 × f64
//!     step       u64
//!     entry_count u32
//!     entry_count × {
//!         name_len u32, name, len u64, first len × f64, second len × f64
//!     }
//! }
//! ```
//!
//! Parameters and moment entries are written in lexicographic name order, so
//! identical stores serialize to identical bytes.

use std::path::Path;

use super::adam::{AdamConfig, AdamState};
use super::tensor::{ParamStore, Tensor};
use crate::error::{Result, RoarError};
use crate::util::write_atomic;

pub const MAGIC: &[u8; 8] = b"ROARCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub params: ParamStore,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_str(&mut out, &self.config_hash);
        put_u32(&mut out, self.params.len() as u32);
        for (name, t) in self.params.iter() {
            put_str(&mut out, name);
            put_u32(&mut out, t.shape().len() as u32);
            for d in t.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            put_f64s(&mut out, t.data());
        }
        match &self.optimizer {
            None => out.push(0),
            Some(st) => {
                out.push(1);
                let c = st.config;
                put_f64s(&mut out, &[c.lr, c.beta1, c.beta2, c.epsilon, c.weight_decay]);
                out.extend_from_slice(&st.step.to_le_bytes());
                put_u32(&mut out, st.first.len() as u32);
                for (name, m) in &st.first {
                    let v = &st.second[name];
                    put_str(&mut out, name);
                    out.extend_from_slice(&(m.len() as u64).to_le_bytes());
                    put_f64s(&mut out, m);
                    put_f64s(&mut out, v);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(RoarError::format("checkpoint", "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(RoarError::format(
                "checkpoint",
                format!("unsupported version {version}"),
            ));
        }
        let config_hash = r.string()?;
        let count = r.u32()?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n = shape.iter().product();
            let data = r.f64s(n)?;
            params
                .insert(name, Tensor::new(shape, data)?)
                .map_err(|e| RoarError::format("checkpoint", e.to_string()))?;
        }
        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => {
                let h = r.f64s(5)?;
                let config = AdamConfig {
                    lr: h[0],
                    beta1: h[1],
                    beta2: h[2],
                    epsilon: h[3],
                    weight_decay: h[4],
                };
                let mut st = AdamState::new(config);
                st.step = r.u64()?;
                let entries = r.u32()?;
                for _ in 0..entries {
                    let name = r.string()?;
                    let len = r.u64()? as usize;
                    let m = r.f64s(len)?;
                    let v = r.f64s(len)?;
                    st.first.insert(name.clone(), m);
                    st.second.insert(name, v);
                }
                Some(st)
            }
            other => return Err(RoarError::format("checkpoint", format!("bad optimizer flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(RoarError::format("checkpoint", "trailing bytes"));
        }
        Ok(Checkpoint {
            config_hash,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| RoarError::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    out.reserve(vals.len() * 8);
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(RoarError::format("checkpoint", "truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| RoarError::format("checkpoint", e.to_string()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| RoarError::format("checkpoint", "size overflow"))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
