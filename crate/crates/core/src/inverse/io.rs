//! Inverted-trigger file format ("TBTR"): JSON header, f32 mask payload, f32
//! pattern payload, trailing CRC32.

use super::{InvertedTrigger, TraceRow};
use crate::container::{bytes_to_f32s, f32s_to_bytes, read_container, write_container};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

const MAGIC: &[u8; 4] = b"TBTR";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    shape: (usize, usize, usize),
    objective: String,
    lambda: f64,
    steps: usize,
    l1: f64,
    p_l1: f64,
    trace: Vec<TraceRow>,
}

pub fn save_trigger(t: &InvertedTrigger, path: &Path) -> Result<()> {
    let header = Header {
        shape: t.shape,
        objective: t.objective.clone(),
        lambda: t.lambda,
        steps: t.steps,
        l1: t.l1_norm,
        p_l1: t.p_l1_norm,
        trace: t.trace.clone(),
    };
    let mut payload = f32s_to_bytes(&t.mask);
    payload.extend_from_slice(&f32s_to_bytes(&t.pattern));
    write_container(path, MAGIC, &serde_json::to_vec(&header)?, &payload)
}

pub fn load_trigger(path: &Path) -> Result<InvertedTrigger> {
    let pstr = path.display().to_string();
    let (header_bytes, payload) = read_container(path, MAGIC)?;
    let header: Header = serde_json::from_slice(&header_bytes).map_err(|e| Error::FileFormat {
        path: pstr.clone(),
        reason: format!("header parse failed: {e}"),
    })?;
    let (c, h, w) = header.shape;
    let mask_len = h * w;
    let pattern_len = c * h * w;
    if payload.len() != (mask_len + pattern_len) * 4 {
        return Err(Error::FileFormat {
            path: pstr,
            reason: format!(
                "payload holds {} values, expected {}",
                payload.len() / 4,
                mask_len + pattern_len
            ),
        });
    }
    let values = bytes_to_f32s(&payload);
    let mask = values[..mask_len].to_vec();
    let pattern = values[mask_len..].to_vec();
    Ok(InvertedTrigger {
        mask,
        pattern,
        shape: header.shape,
        l1_norm: header.l1,
        p_l1_norm: header.p_l1,
        objective: header.objective,
        lambda: header.lambda,
        steps: header.steps,
        trace: header.trace,
    })
}
