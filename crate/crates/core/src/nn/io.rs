//! Weight file format ("TBWV"): JSON header describing the layout, raw
//! little-endian f32 payload, trailing CRC32. Round-trips bit-exactly.

use super::{Layout, LayoutEntry, WeightVector};
use crate::container::{bytes_to_f32s, f32s_to_bytes, read_container, write_container};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

const MAGIC: &[u8; 4] = b"TBWV";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    layout: Vec<LayoutEntry>,
    total_len: usize,
    dtype: String,
    endianness: String,
    layout_order: String,
}

pub fn save_weights(w: &WeightVector, path: &Path) -> Result<()> {
    let header = Header {
        layout: w.layout.entries.clone(),
        total_len: w.layout.total_len,
        dtype: "f32".into(),
        endianness: "little".into(),
        layout_order: "row-major".into(),
    };
    let header_json = serde_json::to_vec(&header)?;
    write_container(path, MAGIC, &header_json, &f32s_to_bytes(&w.values))
}

pub fn load_weights(path: &Path) -> Result<WeightVector> {
    let pstr = path.display().to_string();
    let (header_bytes, payload) = read_container(path, MAGIC)?;
    let header: Header = serde_json::from_slice(&header_bytes).map_err(|e| Error::FileFormat {
        path: pstr.clone(),
        reason: format!("header parse failed: {e}"),
    })?;
    if header.dtype != "f32" || header.endianness != "little" || header.layout_order != "row-major"
    {
        return Err(Error::FileFormat {
            path: pstr.clone(),
            reason: format!(
                "unsupported encoding: dtype={} endianness={} layout_order={}",
                header.dtype, header.endianness, header.layout_order
            ),
        });
    }
    let layout = Layout {
        entries: header.layout,
        total_len: header.total_len,
    };
    layout.validate()?;
    if payload.len() != layout.total_len * 4 {
        return Err(Error::FileFormat {
            path: pstr,
            reason: format!(
                "payload holds {} values but header total_len is {}",
                payload.len() / 4,
                layout.total_len
            ),
        });
    }
    Ok(WeightVector {
        values: bytes_to_f32s(&payload),
        layout: Arc::new(layout),
    })
}
