//! `RMT1` parameter files: magic bytes followed by one record per tensor
//! (name length, UTF-8 name, rank, dims, data), integers as little-endian
//! `u64` and values as little-endian `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::dense::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RMT1";

pub fn encode(tensors: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| Error::Format {
            what: "RMT1 checkpoint",
            detail: format!("truncated at byte {}", self.pos),
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format {
            what: "RMT1 checkpoint",
            detail: "bad magic".into(),
        });
    }
    let mut r = Reader { buf: bytes, pos: 4 };
    let mut out = Vec::new();
    while r.pos < bytes.len() {
        let name_len = r.u64()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| Error::Format {
                what: "RMT1 checkpoint",
                detail: e.to_string(),
            })?
            .to_string();
        let rank = r.u64()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.checked_mul(8).ok_or_else(|| Error::Format {
            what: "RMT1 checkpoint",
            detail: "tensor too large".into(),
        })?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

/// Writes through a temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    write_atomic(path, &encode(tensors))
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            dims in proptest::collection::vec(1usize..4, 0..3),
            seed in any::<u64>(),
            name in "[a-z_.]{0,12}",
        ) {
            let numel: usize = dims.iter().product();
            let data: Vec<f64> = (0..numel)
                .map(|i| f64::from_bits(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(i as u32) & 0x7FEF_FFFF_FFFF_FFFF))
                .collect();
            let t = Tensor::new(dims, data).unwrap();
            let bytes = encode(&[(name.clone(), t.clone())]);
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(back.len(), 1);
            prop_assert_eq!(&back[0].0, &name);
            prop_assert_eq!(back[0].1.shape(), t.shape());
            let bits_a: Vec<u64> = back[0].1.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits_a, bits_b);
            prop_assert_eq!(encode(&back), bytes);
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(decode(b"XXXX").is_err());
        let bytes = encode(&[("w".into(), Tensor::eye(2))]);
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
    }
}
