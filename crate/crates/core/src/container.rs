//! Shared binary container layout for artifact files.
//!
//! All on-disk artifacts use one frame: 4 magic bytes, a u16 LE version, a
//! u32 LE header length, a JSON header, the raw payload, and a trailing CRC32
//! of the payload. Integers and floats are little-endian.

use crate::error::{Error, Result};
use std::fs;
use std::path::Path;

pub(crate) const VERSION: u16 = 1;

pub(crate) fn write_container(
    path: &Path,
    magic: &[u8; 4],
    header_json: &[u8],
    payload: &[u8],
) -> Result<()> {
    let mut out = Vec::with_capacity(4 + 2 + 4 + header_json.len() + payload.len() + 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(header_json);
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    fs::write(path, out)?;
    Ok(())
}

/// Parses a container file, verifying magic, version, and the payload CRC.
/// Returns (header bytes, payload bytes).
pub(crate) fn read_container(path: &Path, magic: &[u8; 4]) -> Result<(Vec<u8>, Vec<u8>)> {
    let data = fs::read(path)?;
    let pstr = path.display().to_string();
    let ff = |reason: String| Error::FileFormat {
        path: pstr.clone(),
        reason,
    };
    if data.len() < 10 {
        return Err(ff("file shorter than fixed header".into()));
    }
    if &data[0..4] != magic {
        return Err(ff(format!(
            "bad magic {:?}, expected {:?}",
            &data[0..4],
            magic
        )));
    }
    let version = u16::from_le_bytes([data[4], data[5]]);
    if version != VERSION {
        return Err(ff(format!("unsupported version {version}")));
    }
    let header_len = u32::from_le_bytes([data[6], data[7], data[8], data[9]]) as usize;
    if data.len() < 10 + header_len {
        return Err(ff("header extends past end of file".into()));
    }
    let header = data[10..10 + header_len].to_vec();
    let rest = &data[10 + header_len..];
    if rest.len() < 4 {
        return Err(Error::ChecksumMismatch {
            path: pstr,
            stored: 0,
            computed: crc32fast::hash(rest),
        });
    }
    let (payload, crc_bytes) = rest.split_at(rest.len() - 4);
    let stored = u32::from_le_bytes([crc_bytes[0], crc_bytes[1], crc_bytes[2], crc_bytes[3]]);
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::ChecksumMismatch {
            path: pstr,
            stored,
            computed,
        });
    }
    Ok((header, payload.to_vec()))
}

pub(crate) fn f32s_to_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn bytes_to_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect()
}

pub(crate) fn f64s_to_bytes(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn bytes_to_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))
        .collect()
}
