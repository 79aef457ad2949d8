//! Binary MFCC cache: magic `MFCC`, version, coefficient count and frame
//! count as little-endian `u32`, then `frames × coeffs` little-endian `f32`
//! values in frame-major order.

use std::path::Path;

use super::MfccGrid;
use crate::error::{Error, Result};
use crate::io::{write_atomic, ByteReader};

const MAGIC: &[u8; 4] = b"MFCC";
const VERSION: u32 = 1;

pub fn encode_mfcc_cache(grid: &MfccGrid) -> Vec<u8> {
    let (nc, nf) = (grid.num_coeffs(), grid.frames());
    let mut out = Vec::with_capacity(16 + 4 * nc * nf);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(nc as u32).to_le_bytes());
    out.extend_from_slice(&(nf as u32).to_le_bytes());
    for f in 0..nf {
        for c in 0..nc {
            out.extend_from_slice(&(grid.at(c, f) as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_mfcc_cache(bytes: &[u8]) -> Result<MfccGrid> {
    let mut r = ByteReader::new(bytes, "MFCC cache");
    if r.take(4)? != MAGIC {
        return Err(r.error("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.error(format!("unsupported version {version}")));
    }
    let nc = r.u32()? as usize;
    let nf = r.u32()? as usize;
    let mut coeffs = vec![0.0; nc * nf];
    for f in 0..nf {
        for c in 0..nc {
            coeffs[c * nf + f] = r.f32()? as f64;
        }
    }
    if !r.is_empty() {
        return Err(r.error("trailing bytes"));
    }
    MfccGrid::new(nc, nf, coeffs).map_err(|e| Error::Format {
        what: "MFCC cache",
        msg: e.to_string(),
    })
}

pub fn write_mfcc_cache(path: impl AsRef<Path>, grid: &MfccGrid) -> Result<()> {
    write_atomic(path, &encode_mfcc_cache(grid))
}

pub fn read_mfcc_cache(path: impl AsRef<Path>) -> Result<MfccGrid> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mfcc_cache(&bytes)
}
