//! Versioned binary checkpoint: a metadata blob plus named tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "TGXCKPT\0"
//! version    u32       currently 1
//! meta_len   u32       length of the metadata blob
//! meta       meta_len  UTF-8 text, opaque to this module (JSON in practice)
//! count      u32       number of tensor records
//! record*    count times:
//!   name_len u32
//!   name     name_len bytes, UTF-8
//!   dims     4 x u32   (n, c, h, w)
//!   values   n*c*h*w x f64
//! ```
//!
//! Values are always stored as `f64`, so `f64` tensors round-trip bit for bit
//! and `f32` tensors round-trip exactly through the widening cast.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 8] = b"TGXCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: String,
    pub tensors: Vec<(String, Tensor<f64>)>,
}

impl Checkpoint {
    pub fn new(meta: impl Into<String>) -> Self {
        Checkpoint {
            meta: meta.into(),
            tensors: Vec::new(),
        }
    }

    pub fn push<T: Real>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.tensors.push((name.into(), t.cast()));
    }

    /// Appends every entry of `store`, prefixing names with `prefix`.
    pub fn push_store<T: Real>(&mut self, prefix: &str, store: &ParamStore<T>) {
        for (_, e) in store.iter() {
            self.push(format!("{prefix}{}", e.name), &e.value);
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f64>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Overwrites every entry of `store` from `{prefix}{name}` records.
    /// Missing names or shape mismatches are errors.
    pub fn load_store<T: Real>(&self, prefix: &str, store: &mut ParamStore<T>) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let key = format!("{prefix}{}", store.name(id));
            let t = self
                .get(&key)
                .ok_or_else(|| TensorError::Checkpoint(format!("missing tensor `{key}`")))?;
            store.set(id, t.cast())?;
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&len_u32(self.meta.len())?.to_le_bytes())?;
        w.write_all(self.meta.as_bytes())?;
        w.write_all(&len_u32(self.tensors.len())?.to_le_bytes())?;
        for (name, t) in &self.tensors {
            w.write_all(&len_u32(name.len())?.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            for d in t.shape().0 {
                w.write_all(&len_u32(d)?.to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TensorError::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
        }
        let meta = read_string(&mut r)?;
        let count = read_u32(&mut r)?;
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name = read_string(&mut r)?;
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = read_u32(&mut r)? as usize;
            }
            let shape = Shape(dims);
            let mut bytes = vec![0u8; shape.numel() * 8];
            r.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn len_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| TensorError::Checkpoint(format!("length {v} exceeds u32")))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_string(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| TensorError::Checkpoint(format!("invalid UTF-8: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_stable() {
        let mut ck = Checkpoint::new("{}");
        ck.push("w", &Tensor::<f64>::vector(vec![1.5]));
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 2);
        assert_eq!(&buf[16..18], b"{}");
        // count, name_len, name, 4 dims, one value
        assert_eq!(buf.len(), 18 + 4 + 4 + 1 + 16 + 8);
        assert_eq!(f64::from_le_bytes(buf[buf.len() - 8..].try_into().unwrap()), 1.5);
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(Checkpoint::read_from(&b"NOTACKPT\x01\0\0\0"[..]).is_err());
        let mut ck = Vec::new();
        Checkpoint::new("").write_to(&mut ck).unwrap();
        ck[8] = 9;
        assert!(Checkpoint::read_from(&ck[..]).is_err());
    }
}
