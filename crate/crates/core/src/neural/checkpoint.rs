//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//! `b"SBCK"`, `u32` version, `u32`-prefixed architecture tag, `u32`-prefixed
//! config JSON, `u32` tensor count, then per tensor a `u32` rank and `u64`
//! dims, followed by every tensor's `f64` data in the same order.

use std::fs;
use std::path::Path;

use super::Model;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SBCK";
const VERSION: u32 = 1;

pub fn to_bytes<M: Model>(model: &M) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let put_str = |out: &mut Vec<u8>, s: &[u8]| {
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        out.extend_from_slice(s);
    };
    put_str(&mut out, M::ARCH.as_bytes());
    put_str(&mut out, serde_json::to_string(model.config())?.as_bytes());
    let params = model.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in &params {
        out.extend_from_slice(&(p.shape().len() as u32).to_le_bytes());
        for &d in p.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for p in &params {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| bad("truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<&'a str> {
        let n = self.u32()? as usize;
        std::str::from_utf8(self.take(n)?).map_err(|_| bad("non-UTF-8 header"))
    }
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Malformed {
        what: "checkpoint",
        detail: detail.into(),
    }
}

pub fn from_bytes<M: Model>(buf: &[u8]) -> Result<M> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let arch = r.string()?;
    if arch != M::ARCH {
        return Err(bad(format!("architecture `{arch}`, expected `{}`", M::ARCH)));
    }
    let config: M::Config = serde_json::from_str(r.string()?)?;
    let mut model = M::blank(&config)?;

    let count = r.u32()? as usize;
    let expected: Vec<Vec<usize>> = model.params().iter().map(|p| p.shape().to_vec()).collect();
    if count != expected.len() {
        return Err(bad(format!("{count} tensors, expected {}", expected.len())));
    }
    for (i, want) in expected.iter().enumerate() {
        let rank = r.u32()? as usize;
        let got = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if &got != want {
            return Err(bad(format!("tensor {i} has shape {got:?}, expected {want:?}")));
        }
    }
    for p in model.params_mut() {
        for v in p.data_mut() {
            *v = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        }
    }
    if r.pos != buf.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(model)
}

pub fn save<M: Model>(model: &M, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load<M: Model>(path: &Path) -> Result<M> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
