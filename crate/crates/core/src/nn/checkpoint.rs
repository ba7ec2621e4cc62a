//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MNPECKPT"            8-byte magic
//! version               u32
//! header length         u64
//! header                UTF-8 JSON (schema tag, architecture, masks)
//! array count           u64
//! per array: length u64, then length × f64
//! SHA-256               32 bytes over everything above
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MNPECKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: serde_json::Value,
    pub arrays: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let floats: usize = self.arrays.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(64 + header.len() + 8 * (floats + self.arrays.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.arrays.len() as u64).to_le_bytes());
        for a in &self.arrays {
            out.extend_from_slice(&(a.len() as u64).to_le_bytes());
            for v in a {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 8 + 8 + 32 {
            return Err(Error::Checkpoint("file too short".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checksum);
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {VERSION})"
            )));
        }
        let header_len = r.u64()? as usize;
        let header = serde_json::from_slice(r.take(header_len)?)?;
        let n_arrays = r.u64()? as usize;
        let mut arrays = Vec::with_capacity(n_arrays.min(1 << 16));
        for _ in 0..n_arrays {
            let len = r.u64()? as usize;
            let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Checkpoint("array too long".into()))?)?;
            arrays.push(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            );
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { header, arrays })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
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
            .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Pack a boolean mask into a lowercase hex string, MSB first per byte.
pub fn encode_bits(bits: &[bool]) -> String {
    let mut s = String::with_capacity(bits.len().div_ceil(4));
    for chunk in bits.chunks(8) {
        let mut byte = 0u8;
        for (i, &b) in chunk.iter().enumerate() {
            if b {
                byte |= 0x80 >> i;
            }
        }
        s.push_str(&format!("{byte:02x}"));
    }
    s
}

pub fn decode_bits(hex: &str, len: usize) -> Result<Vec<bool>> {
    if hex.len() != len.div_ceil(8) * 2 {
        return Err(Error::Checkpoint("mask length mismatch".into()));
    }
    let mut bits = Vec::with_capacity(len);
    for i in 0..hex.len() / 2 {
        let byte = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16)
            .map_err(|_| Error::Checkpoint("mask is not hex".into()))?;
        for j in 0..8 {
            if bits.len() < len {
                bits.push(byte & (0x80 >> j) != 0);
            }
        }
    }
    Ok(bits)
}
