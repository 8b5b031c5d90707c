//! Binary tensor checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CGFR" | version u32 | count u32 |
//!   count x ( name_len u16 | name utf-8 | rank u8 | dims u32 x rank | f64 x numel )
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::tensor::{numel_of, Tensor};

pub const MAGIC: &[u8; 4] = b"CGFR";
pub const VERSION: u32 = 1;

pub fn encode(tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(tensors.len()).map_err(|_| TensorError::Format("too many tensors".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors {
        let name_len =
            u16::try_from(name.len()).map_err(|_| TensorError::Format(format!("name too long: {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.rank()).map_err(|_| TensorError::Format(format!("rank too high: {name}")))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| TensorError::Format(format!("dim too large: {name}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(TensorError::Format(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Decodes a checkpoint, preserving tensor order.
pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(TensorError::Format("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(TensorError::Format(format!("unsupported version {version}")));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|e| TensorError::Format(format!("tensor name: {e}")))?
            .to_string();
        let rank = c.u8()? as usize;
        let dims = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = numel_of(&dims);
        let raw = c.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Tensor::from_vec(&dims, data)?));
    }
    if c.pos != bytes.len() {
        return Err(TensorError::Format(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(out)
}

/// Writes atomically: the file appears complete or not at all.
pub fn save(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    let bytes = encode(tensors)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn load_map(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    Ok(load(path)?.into_iter().collect())
}
