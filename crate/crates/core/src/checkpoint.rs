//! Binary checkpoints: architecture plus parameter values.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "DPCKPT\0\0"
//! 8       4     version (1)
//! 12      4     scalar width in bytes (4 = f32, 8 = f64)
//! 16      8     arch_len: bytes of UTF-8 TOML architecture
//! 24      8     tensor_count
//! 32      8     payload_len: bytes following the header
//! 40      4     CRC-32 (IEEE) of bytes 0..40 followed by the payload
//! 44      ...   payload: arch TOML, then per tensor
//!               rank u32, rank × dim u64, values
//! ```
//!
//! Tensors appear in [`Model::params`] order. Momentum buffers are not stored.

use std::path::Path;

use crate::arch::ArchSpec;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"DPCKPT\0\0";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 44;

pub fn encode<T: Scalar>(model: &Model<T>) -> Vec<u8> {
    let arch = model.arch().to_toml_string();
    let params = model.params();
    let mut payload = arch.as_bytes().to_vec();
    for p in &params {
        let shape = p.value.shape();
        payload.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            payload.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.value.data() {
            v.write_le(&mut payload);
        }
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(T::BYTES as u32).to_le_bytes());
    out.extend_from_slice(&(arch.len() as u64).to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    let mut h = crc32fast::Hasher::new();
    h.update(&out);
    h.update(&payload);
    out.extend_from_slice(&h.finalize().to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.path, "truncated checkpoint"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::format(self.path, format!("length {v} too large")))
    }
}

/// Decodes a checkpoint; `path` is only used in error messages.
pub fn decode<T: Scalar>(bytes: &[u8], path: &Path) -> Result<Model<T>> {
    let mut r = Reader { bytes, at: 0, path };
    if r.take(8)? != MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let width = r.u32()? as usize;
    if width != T::BYTES {
        return Err(Error::format(
            path,
            format!("checkpoint stores {width}-byte scalars, {}-byte requested", T::BYTES),
        ));
    }
    let arch_len = r.usize()?;
    let tensor_count = r.usize()?;
    let payload_len = r.usize()?;
    let stored_crc = r.u32()?;
    if bytes.len() - HEADER_LEN != payload_len {
        return Err(Error::format(
            path,
            format!("payload is {} bytes, header says {payload_len}", bytes.len() - HEADER_LEN),
        ));
    }
    let mut h = crc32fast::Hasher::new();
    h.update(&bytes[..HEADER_LEN - 4]);
    h.update(&bytes[HEADER_LEN..]);
    if h.finalize() != stored_crc {
        return Err(Error::format(path, "checksum mismatch"));
    }
    let arch_text = std::str::from_utf8(r.take(arch_len)?)
        .map_err(|_| Error::format(path, "architecture is not UTF-8"))?;
    let arch = ArchSpec::from_toml_str(arch_text).map_err(|e| Error::format(path, e.to_string()))?;
    let mut model = Model::<T>::build(&arch)?;
    let mut params = model.params_mut();
    if params.len() != tensor_count {
        return Err(Error::format(
            path,
            format!("{tensor_count} tensors stored, architecture needs {}", params.len()),
        ));
    }
    for (i, p) in params.iter_mut().enumerate() {
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.usize()?);
        }
        if shape != p.value.shape() {
            return Err(Error::format(
                path,
                format!("tensor {i}: stored shape {shape:?}, expected {:?}", p.value.shape()),
            ));
        }
        let raw = r.take(p.value.len() * T::BYTES)?;
        for (dst, chunk) in p.value.data_mut().iter_mut().zip(raw.chunks_exact(T::BYTES)) {
            *dst = T::read_le(chunk);
        }
        p.value.ensure_finite(&format!("checkpoint tensor {i}"))?;
    }
    drop(params);
    Ok(model)
}

pub fn save<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
