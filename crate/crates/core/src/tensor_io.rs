//! Binary tensor fixtures.
//!
//! `MSTF` (single tensor, little-endian):
//! - magic `MSTF`
//! - version: u32 (= 1)
//! - ndim: u32, then dims: ndim × u32
//! - data: f32 × product(dims), row-major
//!
//! `MSWT` (named tensor container):
//! - magic `MSWT`
//! - version: u32 (= 1)
//! - count: u32
//! - per entry: name length u32, UTF-8 name, embedded MSTF record

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MSTF_MAGIC: &[u8; 4] = b"MSTF";
pub const MSWT_MAGIC: &[u8; 4] = b"MSWT";
pub const FORMAT_VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.what,
                format!(
                    "truncated at byte {} reading {field} ({n} bytes needed, {} left)",
                    self.pos,
                    self.buf.len() - self.pos
                ),
            )),
        }
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(Error::format(
                self.what,
                format!("bad magic {got:?} at byte {}", self.pos - 4),
            ));
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        let v = self.u32("version")?;
        if v != FORMAT_VERSION {
            return Err(Error::format(self.what, format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn tensor(&mut self) -> Result<Tensor> {
        self.magic(MSTF_MAGIC)?;
        self.version()?;
        let ndim = self.u32("ndim")? as usize;
        if ndim == 0 {
            return Err(Error::format(self.what, "ndim must be at least 1"));
        }
        let mut dims = Vec::with_capacity(ndim);
        for i in 0..ndim {
            let d = self.u32("dims")? as usize;
            if d == 0 {
                return Err(Error::format(self.what, format!("dims[{i}] is zero")));
            }
            dims.push(d);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format(self.what, format!("dims {dims:?} overflow")))?;
        let raw = self.take(numel, "data")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::format(self.what, format!("non-finite value at data[{i}]")));
        }
        Tensor::new(dims, data)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                self.what,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn write_tensor(out: &mut Vec<u8>, t: &Tensor) {
    out.extend_from_slice(MSTF_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_mstf(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * t.shape().len() + 4 * t.numel());
    write_tensor(&mut out, t);
    out
}

pub fn decode_mstf(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        what: "MSTF tensor",
    };
    let t = r.tensor()?;
    r.finish()?;
    Ok(t)
}

pub fn encode_mswt<'a, I>(entries: I) -> Vec<u8>
where
    I: IntoIterator<Item = (&'a str, &'a Tensor)>,
{
    let entries: Vec<_> = entries.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MSWT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        write_tensor(&mut out, t);
    }
    out
}

/// Decodes a weights container, keeping entry order. Duplicate names are
/// rejected.
pub fn decode_mswt(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        what: "MSWT container",
    };
    r.magic(MSWT_MAGIC)?;
    r.version()?;
    let count = r.u32("count")?;
    let mut entries: Vec<(String, Tensor)> = Vec::new();
    for i in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|e| Error::format("MSWT container", format!("entry {i} name: {e}")))?
            .to_owned();
        if entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::format(
                "MSWT container",
                format!("duplicate entry name {name:?}"),
            ));
        }
        let t = r.tensor().map_err(|e| match e {
            Error::Format { detail, .. } => {
                Error::format("MSWT container", format!("entry {name:?}: {detail}"))
            }
            other => other,
        })?;
        entries.push((name, t));
    }
    r.finish()?;
    Ok(entries)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_mstf(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_mstf(&read(path.as_ref())?)
}

pub fn write_mstf(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    write(path.as_ref(), &encode_mstf(t))
}

pub fn read_mswt(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    decode_mswt(&read(path.as_ref())?)
}

pub fn write_mswt<'a, I>(path: impl AsRef<Path>, entries: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a Tensor)>,
{
    write(path.as_ref(), &encode_mswt(entries))
}

/// True when the buffer starts with the container magic.
pub fn is_container(bytes: &[u8]) -> bool {
    bytes.starts_with(MSWT_MAGIC)
}
