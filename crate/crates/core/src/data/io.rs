//! Dataset file format ("TBDS"): JSON header, then per split the item ids
//! (u64 LE), labels (u16 LE), poison mask (packed bits, LSB first), and pixels
//! (u8 = round(255 x)), with a trailing CRC32.
//!
//! Generated pixels are already quantized to the u8 grid, so save/load
//! round-trips bit-exactly on generator output.

use super::{DatasetBundle, DatasetSpec, LabeledImageSet, Origin};
use crate::container::{read_container, write_container};
use crate::error::{Error, Result};
use crate::nn::Batch;
use serde::{Deserialize, Serialize};
use std::path::Path;

const MAGIC: &[u8; 4] = b"TBDS";

#[derive(Debug, Serialize, Deserialize)]
struct SplitHeader {
    name: String,
    count: usize,
    origin: Origin,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    spec: DatasetSpec,
    shape: (usize, usize, usize),
    pixel_encoding: String,
    splits: Vec<SplitHeader>,
}

fn push_split(payload: &mut Vec<u8>, set: &LabeledImageSet) {
    for id in &set.item_ids {
        payload.extend_from_slice(&id.to_le_bytes());
    }
    for l in &set.batch.labels {
        payload.extend_from_slice(&l.to_le_bytes());
    }
    let mut bits = vec![0u8; set.len().div_ceil(8)];
    for (i, &m) in set.poison_mask.iter().enumerate() {
        if m {
            bits[i / 8] |= 1 << (i % 8);
        }
    }
    payload.extend_from_slice(&bits);
    for &p in &set.batch.images {
        payload.push((p.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
}

fn take<'a>(payload: &'a [u8], cursor: &mut usize, len: usize, path: &str) -> Result<&'a [u8]> {
    if *cursor + len > payload.len() {
        return Err(Error::FileFormat {
            path: path.to_string(),
            reason: format!(
                "payload ended at {} while reading {} bytes at offset {}",
                payload.len(),
                len,
                cursor
            ),
        });
    }
    let s = &payload[*cursor..*cursor + len];
    *cursor += len;
    Ok(s)
}

fn read_split(
    payload: &[u8],
    cursor: &mut usize,
    h: &SplitHeader,
    shape: (usize, usize, usize),
    path: &str,
) -> Result<LabeledImageSet> {
    let n = h.count;
    let (c, ih, iw) = shape;
    let item_len = c * ih * iw;
    let ids: Vec<u64> = take(payload, cursor, n * 8, path)?
        .chunks_exact(8)
        .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let labels: Vec<u16> = take(payload, cursor, n * 2, path)?
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();
    let bits = take(payload, cursor, n.div_ceil(8), path)?.to_vec();
    let mask: Vec<bool> = (0..n).map(|i| bits[i / 8] & (1 << (i % 8)) != 0).collect();
    let pixels = take(payload, cursor, n * item_len, path)?;
    let images: Vec<f32> = pixels.iter().map(|&q| q as f32 / 255.0).collect();
    Ok(LabeledImageSet {
        batch: Batch::new(images, shape, labels).map_err(|e| Error::FileFormat {
            path: path.to_string(),
            reason: format!("invalid split '{}': {e}", h.name),
        })?,
        poison_mask: mask,
        origin: h.origin.clone(),
        item_ids: ids,
    })
}

pub fn save_dataset(bundle: &DatasetBundle, path: &Path) -> Result<()> {
    let header = Header {
        spec: bundle.spec.clone(),
        shape: bundle.spec.shape(),
        pixel_encoding: "u8".into(),
        splits: vec![
            SplitHeader {
                name: "train".into(),
                count: bundle.train.len(),
                origin: bundle.train.origin.clone(),
            },
            SplitHeader {
                name: "val".into(),
                count: bundle.val.len(),
                origin: bundle.val.origin.clone(),
            },
            SplitHeader {
                name: "test".into(),
                count: bundle.test.len(),
                origin: bundle.test.origin.clone(),
            },
        ],
    };
    let mut payload = Vec::new();
    push_split(&mut payload, &bundle.train);
    push_split(&mut payload, &bundle.val);
    push_split(&mut payload, &bundle.test);
    write_container(path, MAGIC, &serde_json::to_vec(&header)?, &payload)
}

pub fn load_dataset(path: &Path) -> Result<DatasetBundle> {
    let pstr = path.display().to_string();
    let (header_bytes, payload) = read_container(path, MAGIC)?;
    let header: Header = serde_json::from_slice(&header_bytes).map_err(|e| Error::FileFormat {
        path: pstr.clone(),
        reason: format!("header parse failed: {e}"),
    })?;
    if header.pixel_encoding != "u8" {
        return Err(Error::FileFormat {
            path: pstr,
            reason: format!("unsupported pixel encoding {}", header.pixel_encoding),
        });
    }
    if header.splits.len() != 3 {
        return Err(Error::FileFormat {
            path: pstr,
            reason: format!("expected 3 splits, found {}", header.splits.len()),
        });
    }
    let mut cursor = 0usize;
    let train = read_split(&payload, &mut cursor, &header.splits[0], header.shape, &pstr)?;
    let val = read_split(&payload, &mut cursor, &header.splits[1], header.shape, &pstr)?;
    let test = read_split(&payload, &mut cursor, &header.splits[2], header.shape, &pstr)?;
    if cursor != payload.len() {
        return Err(Error::FileFormat {
            path: pstr,
            reason: format!(
                "{} trailing payload bytes after the declared splits",
                payload.len() - cursor
            ),
        });
    }
    Ok(DatasetBundle {
        spec: header.spec,
        train,
        val,
        test,
    })
}
