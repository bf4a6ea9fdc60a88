//! Binary tensor dumps.
//!
//! Layout: magic `AFLD`, version and rank as little-endian u16, `rank`
//! u32 dimensions, then row-major 32-bit little-endian floats. Payloads
//! round-trip bit-exactly (values are moved as raw bits).

use super::IoError;
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 4] = b"AFLD";
const VERSION: u16 = 1;

/// A tensor read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldData {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

pub fn write_field(path: &Path, dims: &[u32], data: &[f32]) -> Result<(), IoError> {
    let expected: usize = dims.iter().map(|&d| d as usize).product();
    if expected != data.len() {
        return Err(IoError::BadFieldFile(format!(
            "dims {:?} imply {} values, got {}",
            dims,
            expected,
            data.len()
        )));
    }
    if dims.len() > u16::MAX as usize {
        return Err(IoError::BadFieldFile("rank too large".into()));
    }
    let mut bytes = Vec::with_capacity(8 + 4 * dims.len() + 4 * data.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(dims.len() as u16).to_le_bytes());
    for &d in dims {
        bytes.extend_from_slice(&d.to_le_bytes());
    }
    for &v in data {
        bytes.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<FieldData, IoError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 || &bytes[0..4] != MAGIC {
        return Err(IoError::BadFieldFile("missing AFLD magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(IoError::BadFieldFile(format!("unsupported version {version}")));
    }
    let rank = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let header = 8 + 4 * rank;
    if bytes.len() < header {
        return Err(IoError::BadFieldFile("truncated dimension table".into()));
    }
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        let o = 8 + 4 * i;
        dims.push(u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]));
    }
    let count: usize = dims.iter().map(|&d| d as usize).product();
    if bytes.len() != header + 4 * count {
        return Err(IoError::BadFieldFile(format!(
            "payload is {} bytes, dims {:?} need {}",
            bytes.len() - header,
            dims,
            4 * count
        )));
    }
    let mut data = Vec::with_capacity(count);
    for i in 0..count {
        let o = header + 4 * i;
        let bits = u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
        data.push(f32::from_bits(bits));
    }
    Ok(FieldData { dims, data })
}
