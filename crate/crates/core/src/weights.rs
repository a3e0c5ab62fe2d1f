//! Named-tensor container used for checkpoints and pretrained backbones.
//!
//! Layout (little endian):
//!
//! ```text
//! magic   b"ESNW"
//! version u32 = 1
//! count   u32
//! count × { name_len u32, name utf-8, kind u8 (0 param, 1 buffer),
//!           ndim u8, dims u64 × ndim, data f32 × prod(dims) }
//! ```
//!
//! The SHA-256 of the whole file is recorded in the sidecar manifest and
//! checked on load.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Slot, TensorKind, Visit};
use crate::tensor::Real;

const MAGIC: &[u8; 4] = b"ESNW";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode(tensors: &[NamedTensor]) -> Vec<u8> {
    let payload: usize = tensors.iter().map(|t| t.data.len() * 4 + t.name.len() + 16 + 8 * t.shape.len()).sum();
    let mut out = Vec::with_capacity(12 + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(match t.kind {
            TensorKind::Param => 0,
            TensorKind::Buffer => 1,
        });
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            format!("truncated: needed {n} bytes at offset {}, file has {}", self.pos, self.bytes.len())
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Vec<NamedTensor>, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("not a weight file (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported weight file version {version}"));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|e| format!("tensor name: {e}"))?.to_string();
        let kind = match r.u8()? {
            0 => TensorKind::Param,
            1 => TensorKind::Buffer,
            k => return Err(format!("tensor {name}: unknown kind {k}")),
        };
        let ndim = r.u8()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or("tensor too large")?;
        let raw = r.take(numel.checked_mul(4).ok_or("tensor too large")?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        out.push(NamedTensor { name, kind, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes after last tensor", bytes.len() - r.pos));
    }
    Ok(out)
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Snapshot of every tensor under `prefix`, in traversal order.
pub fn collect<T: Real, M: Visit<T> + ?Sized>(module: &M, prefix: &str) -> Vec<NamedTensor> {
    let mut out = Vec::new();
    module.visit(prefix, &mut |name, view| {
        out.push(NamedTensor {
            name: name.to_string(),
            kind: view.kind,
            shape: view.shape.to_vec(),
            data: view.value.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect(),
        });
    });
    out
}

/// Copies tensors into `module`. Every tensor the module visits must be
/// present with a matching shape; extra entries in `tensors` are ignored.
/// Names are looked up as `rename(module_name)`.
pub fn assign<T: Real, M: Visit<T> + ?Sized>(
    module: &mut M,
    prefix: &str,
    tensors: &BTreeMap<String, NamedTensor>,
    rename: impl Fn(&str) -> String,
) -> std::result::Result<usize, String> {
    let mut problems = Vec::new();
    let mut assigned = 0;
    module.visit_mut(prefix, &mut |name, mut slot: Slot<'_, T>| {
        let key = rename(name);
        match tensors.get(&key) {
            None => problems.push(format!("missing tensor {key}")),
            Some(t) if t.shape != slot.shape() => {
                problems.push(format!("tensor {key}: shape {:?}, expected {:?}", t.shape, slot.shape()))
            }
            Some(t) => {
                for (dst, &src) in slot.value_mut().iter_mut().zip(&t.data) {
                    *dst = T::from_f32(src).unwrap_or_else(T::nan);
                }
                assigned += 1;
            }
        }
    });
    if problems.is_empty() {
        Ok(assigned)
    } else {
        let shown: Vec<_> = problems.iter().take(5).cloned().collect();
        Err(format!("{} problem(s): {}", problems.len(), shown.join("; ")))
    }
}

pub fn index(tensors: Vec<NamedTensor>) -> BTreeMap<String, NamedTensor> {
    tensors.into_iter().map(|t| (t.name.clone(), t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<NamedTensor> {
        vec![
            NamedTensor { name: "a.weight".into(), kind: TensorKind::Param, shape: vec![2, 3], data: (0..6).map(|v| v as f32 * 0.5).collect() },
            NamedTensor { name: "a.running_var".into(), kind: TensorKind::Buffer, shape: vec![3], data: vec![1.0, f32::MIN_POSITIVE, -0.0] },
        ]
    }

    #[test]
    fn encode_decode_is_lossless() {
        let t = sample();
        let back = decode(&encode(&t)).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in t.iter().zip(&back) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.kind, b.kind);
            assert_eq!(a.shape, b.shape);
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.data), bits(&b.data));
        }
    }

    #[test]
    fn truncation_and_bad_magic_are_reported() {
        let bytes = encode(&sample());
        for cut in [0, 3, 11, 20, bytes.len() - 1] {
            assert!(decode(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).unwrap_err().contains("magic"));
        let mut long = bytes;
        long.push(0);
        assert!(decode(&long).unwrap_err().contains("trailing"));
    }
}
