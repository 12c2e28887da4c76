//! Named-tensor container.
//!
//! Layout, all integers little-endian: magic `VSEG`, u32 version, u32 entry
//! count, then per entry a u16 name length, the UTF-8 name, a u8 dtype code,
//! a u8 rank, `rank` u32 dims and the payload. A u32 CRC32 of every
//! preceding byte closes the file. Dtype 0 is f32; dtype 1 is raw bytes
//! (rank 1) and carries metadata.

use std::path::Path;

use super::{io_err, write_atomic, DataError};
use crate::gradcore::{Shape, Tensor};

pub const MAGIC: [u8; 4] = *b"VSEG";
pub const VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_BYTES: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32 { dims: Vec<u32>, data: Vec<f32> },
    Bytes(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub payload: Payload,
}

impl Entry {
    pub fn tensor(name: impl Into<String>, t: &Tensor) -> Self {
        Self {
            name: name.into(),
            payload: Payload::F32 {
                dims: t.shape().dims().iter().map(|&d| d as u32).collect(),
                data: t.data().to_vec(),
            },
        }
    }

    pub fn bytes(name: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            payload: Payload::Bytes(bytes),
        }
    }

    /// The payload as a rank-4 tensor; lower ranks are padded with leading ones.
    pub fn to_tensor(&self) -> Option<Tensor> {
        let Payload::F32 { dims, data } = &self.payload else {
            return None;
        };
        if dims.len() > 4 {
            return None;
        }
        let mut d = [1usize; 4];
        for (slot, &v) in d[4 - dims.len()..].iter_mut().zip(dims) {
            *slot = v as usize;
        }
        Tensor::from_vec(Shape::new(d[0], d[1], d[2], d[3]), data.clone()).ok()
    }
}

pub fn encode_entries(entries: &[Entry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        match &e.payload {
            Payload::F32 { dims, data } => {
                out.push(DTYPE_F32);
                out.push(dims.len() as u8);
                for d in dims {
                    out.extend_from_slice(&d.to_le_bytes());
                }
                for v in data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Payload::Bytes(b) => {
                out.push(DTYPE_BYTES);
                out.push(1);
                out.extend_from_slice(&(b.len() as u32).to_le_bytes());
                out.extend_from_slice(b);
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8], DataError> {
        if self.bytes.len() - self.pos < n {
            return Err(DataError::Truncated {
                path: self.path.to_path_buf(),
                section: section.to_string(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, section: &str) -> Result<u8, DataError> {
        Ok(self.take(1, section)?[0])
    }

    fn u16(&mut self, section: &str) -> Result<u16, DataError> {
        Ok(u16::from_le_bytes(self.take(2, section)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, section: &str) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().expect("4 bytes")))
    }

    fn malformed(&self, message: String) -> DataError {
        DataError::Malformed {
            path: self.path.to_path_buf(),
            message,
        }
    }
}

/// Parses a container. `path` only labels errors.
///
/// Entries are read in order before the checksum is verified, so a short file
/// reports the entry it ends in rather than a checksum mismatch.
pub fn decode_entries(bytes: &[u8], path: &Path) -> Result<Vec<Entry>, DataError> {
    let mut r = Reader { bytes, pos: 0, path };
    let magic = r.take(4, "header").map_err(|_| DataError::BadMagic {
        path: path.to_path_buf(),
        found: bytes.to_vec(),
    })?;
    if magic != MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            found: magic.to_vec(),
        });
    }
    let version = r.u32("header")?;
    if version != VERSION {
        return Err(DataError::Version {
            path: path.to_path_buf(),
            found: version,
            expected: VERSION,
        });
    }
    let count = r.u32("header")?;
    let mut entries = Vec::new();
    for i in 0..count {
        let unnamed = format!("entry #{i} header");
        let name_len = r.u16(&unnamed)? as usize;
        let name = std::str::from_utf8(r.take(name_len, &unnamed)?)
            .map_err(|_| r.malformed(format!("entry #{i} name is not UTF-8")))?
            .to_string();
        let section = format!("tensor `{name}`");
        let dtype = r.u8(&section)?;
        let rank = r.u8(&section)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32(&section)?);
        }
        let numel = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
        let Some(numel) = numel else {
            return Err(r.malformed(format!("{section} dims overflow")));
        };
        let payload = match dtype {
            DTYPE_F32 => {
                let raw = r.take(numel.saturating_mul(4), &section)?;
                let data = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect();
                Payload::F32 { dims, data }
            }
            DTYPE_BYTES if rank == 1 => Payload::Bytes(r.take(numel, &section)?.to_vec()),
            _ => return Err(r.malformed(format!("{section} has dtype {dtype} with rank {rank}"))),
        };
        entries.push(Entry { name, payload });
    }
    let body_end = r.pos;
    let stored = r.u32("checksum")?;
    if r.pos != bytes.len() {
        return Err(r.malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(DataError::Checksum {
            path: path.to_path_buf(),
            stored,
            computed,
        });
    }
    Ok(entries)
}

/// Writes named rank-4 tensors in the container format.
pub fn write_tensors(path: &Path, tensors: &[(&str, &Tensor)]) -> Result<(), DataError> {
    let entries: Vec<Entry> = tensors.iter().map(|(n, t)| Entry::tensor(*n, t)).collect();
    write_atomic(path, &encode_entries(&entries))
}

pub fn read_tensors(path: &Path) -> Result<Vec<Entry>, DataError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_entries(&bytes, path)
}
