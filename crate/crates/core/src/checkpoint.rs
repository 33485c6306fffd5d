//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!   magic "MRA1"
//!   u32 entry count
//!   per entry: u16 id length, id bytes (utf-8), u8 dtype code, u8 rank,
//!              rank x u64 dims
//!   raw little-endian scalar payloads, one block per entry in header order
//!   u64 version counter
//!
//! Round-trips are bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tensor::{Dtype, Scalar, Tensor};

const MAGIC: &[u8; 4] = b"MRA1";

pub fn to_bytes<S: Scalar>(params: &ParameterSet<S>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (id, tensor) in params.iter() {
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        out.push(S::DTYPE.code());
        out.push(tensor.rank() as u8);
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for (_, tensor) in params.iter() {
        for &v in tensor.data() {
            v.write_le(&mut out);
        }
    }
    out.extend_from_slice(&params.version().to_le_bytes());
    out
}

pub fn from_bytes<S: Scalar>(bytes: &[u8]) -> Result<ParameterSet<S>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let count = cur.u32()? as usize;
    let mut headers = Vec::with_capacity(count);
    for _ in 0..count {
        let id_len = cur.u16()? as usize;
        let id = String::from_utf8(cur.take(id_len)?.to_vec())
            .map_err(|e| Error::Checkpoint(format!("non-utf8 parameter id: {e}")))?;
        let dtype = Dtype::from_code(cur.u8()?)?;
        if dtype != S::DTYPE {
            return Err(Error::Checkpoint(format!(
                "parameter {id:?} has dtype code {} but loader expects {}",
                dtype.code(),
                S::DTYPE.code()
            )));
        }
        let rank = cur.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u64()? as usize);
        }
        headers.push((id, dims));
    }
    let mut params = ParameterSet::new();
    let elem = S::DTYPE.size_bytes();
    for (id, dims) in headers {
        let n: usize = dims.iter().product();
        let raw = cur.take(n * elem)?;
        let data: Vec<S> = raw.chunks_exact(elem).map(S::read_le).collect();
        params.insert(id, Tensor::new(dims, data)?)?;
    }
    let version = cur.u64()?;
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after version counter",
            bytes.len() - cur.pos
        )));
    }
    params.set_version(version);
    Ok(params)
}

pub fn save<S: Scalar>(params: &ParameterSet<S>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, to_bytes(params))?;
    Ok(())
}

pub fn load<S: Scalar>(path: &Path) -> Result<ParameterSet<S>> {
    let bytes = fs::read(path)?;
    from_bytes(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint".to_string()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParameterSet<f64> {
        let mut p = ParameterSet::new();
        p.insert("core/w", Tensor::matrix(2, 3, vec![1.5, -2.25, 0.0, 1e-30, 3.0, -0.5]).unwrap())
            .unwrap();
        p.insert("heads/b", Tensor::vector(vec![0.25])).unwrap();
        p.insert("scalar", Tensor::scalar(7.0)).unwrap();
        p.bump_version();
        p.bump_version();
        p
    }

    #[test]
    fn round_trip_bit_exact() {
        let p = sample();
        let bytes = to_bytes(&p);
        let q: ParameterSet<f64> = from_bytes(&bytes).unwrap();
        assert_eq!(p, q);
        assert_eq!(q.version(), 2);
        // Bytes of a re-serialization are identical too.
        assert_eq!(bytes, to_bytes(&q));
    }

    #[test]
    fn magic_enforced() {
        let p = sample();
        let mut bytes = to_bytes(&p);
        bytes[0] = b'X';
        assert!(from_bytes::<f64>(&bytes).is_err());
    }

    #[test]
    fn dtype_mismatch_rejected() {
        let mut p = ParameterSet::<f32>::new();
        p.insert("w", Tensor::vector(vec![1.0f32])).unwrap();
        let bytes = to_bytes(&p);
        assert!(from_bytes::<f64>(&bytes).is_err());
        assert!(from_bytes::<f32>(&bytes).is_ok());
    }

    #[test]
    fn truncation_detected() {
        let p = sample();
        let bytes = to_bytes(&p);
        assert!(from_bytes::<f64>(&bytes[..bytes.len() - 1]).is_err());
    }
}
