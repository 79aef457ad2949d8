//! Named-tensor checkpoint files.
//!
//! Layout (little-endian): magic `DACT`, format version, tensor count; then
//! per tensor the name length and UTF-8 bytes, rank, extents and an f32
//! payload.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{write_atomic, ByteReader};
use crate::tensor::{ParamStore, Scalar, Tensor};

const MAGIC: &[u8; 4] = b"DACT";
const VERSION: u32 = 1;

pub fn encode_checkpoint<T: Scalar>(params: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + params.numel() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<ParamStore<T>> {
    let mut r = ByteReader::new(bytes, "checkpoint");
    if r.take(4)? != MAGIC {
        return Err(r.error("bad magic, not a checkpoint file"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.error(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.error("tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| r.f32().map(|v| T::of(v as f64)))
            .collect::<Result<Vec<_>>>()?;
        let tensor = Tensor::new(shape, data)?;
        store.insert(name, tensor).map_err(|e| Error::Format {
            what: "checkpoint",
            msg: e.to_string(),
        })?;
    }
    if !r.is_empty() {
        return Err(r.error("trailing bytes after last tensor"));
    }
    Ok(store)
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, params: &ParamStore<T>) -> Result<()> {
    write_atomic(path, &encode_checkpoint(params))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<ParamStore<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut p = ParamStore::new();
        p.insert(
            "lex.filter.w3.0",
            Tensor::from_fn(&[2, 3], |i| i as f32 * 0.5 - 1.0),
        )
        .unwrap();
        p.insert("head.b", Tensor::vector(vec![0.25, -3.5]))
            .unwrap();
        p.insert("s", Tensor::scalar(7.0)).unwrap();
        p
    }

    #[test]
    fn round_trip_f32_exact() {
        let p = store();
        let back: ParamStore<f32> = decode_checkpoint(&encode_checkpoint(&p)).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn header_layout() {
        let bytes = encode_checkpoint(&store());
        assert_eq!(&bytes[..4], b"DACT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 15);
        assert_eq!(&bytes[16..31], b"lex.filter.w3.0");
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_checkpoint(&store());
        let err = decode_checkpoint::<f32>(&bytes[..bytes.len() - 2]).unwrap_err();
        assert!(err.to_string().contains("checkpoint"), "{err}");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint::<f32>(&bad)
            .unwrap_err()
            .to_string()
            .contains("magic"));
        let mut long = bytes;
        long.push(0);
        assert!(decode_checkpoint::<f32>(&long).is_err());
    }
}
