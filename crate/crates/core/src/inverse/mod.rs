//! Attack-agnostic trigger reverse-engineering: optimize a minimal
//! (mask, pattern) trigger, detect infected models via the normalized mask
//! size, identify the infected target class, and build proxy forget sets.

mod io;
mod optimize;

pub use io::{load_trigger, save_trigger};
pub use optimize::{invert_trigger, InversionConfig, InversionObjective, TraceRow};

use crate::data::{ForgetSource, LabeledImageSet, Origin};
use crate::error::{Error, Result};
use crate::nn::{self, ModelSpec, WeightVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// A reverse-engineered trigger: per-pixel blend mask (shared across
/// channels) and an RGB pattern, both in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedTrigger {
    /// [H * W] blend weights.
    pub mask: Vec<f32>,
    /// [C * H * W] pattern values.
    pub pattern: Vec<f32>,
    pub shape: (usize, usize, usize),
    /// Sum of the mask (mask values are non-negative).
    pub l1_norm: f64,
    /// l1_norm / (C * H * W): the normalized trigger size.
    pub p_l1_norm: f64,
    pub objective: String,
    pub lambda: f64,
    pub steps: usize,
    /// Per-step objective and mask-size trace.
    pub trace: Vec<TraceRow>,
}

impl InvertedTrigger {
    pub(crate) fn compute_norms(mask: &[f32], shape: (usize, usize, usize)) -> (f64, f64) {
        let l1: f64 = mask.iter().map(|&m| m.abs() as f64).sum();
        let (c, h, w) = shape;
        (l1, l1 / (c * h * w) as f64)
    }

    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hh = Sha256::new();
        for v in self.mask.iter().chain(&self.pattern) {
            hh.update(v.to_le_bytes());
        }
        hex::encode(hh.finalize())
    }
}

/// out = (1 - mask) * image + mask * pattern, per channel, clamped to [0, 1].
pub fn stamp(image: &[f32], t: &InvertedTrigger) -> Result<Vec<f32>> {
    let (c, h, w) = t.shape;
    if image.len() != c * h * w || t.mask.len() != h * w || t.pattern.len() != c * h * w {
        return Err(Error::InvalidData(format!(
            "stamp shape mismatch: image {}, mask {}, pattern {} for shape {:?}",
            image.len(),
            t.mask.len(),
            t.pattern.len(),
            t.shape
        )));
    }
    let plane = h * w;
    let mut out = vec![0.0f32; image.len()];
    for ch in 0..c {
        for p in 0..plane {
            let m = t.mask[p];
            out[ch * plane + p] =
                ((1.0 - m) * image[ch * plane + p] + m * t.pattern[ch * plane + p]).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Detection verdict from comparing a suspect model's inverted-trigger size
/// against a clean reference of the same architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    pub suspect_p_l1: f64,
    pub reference_p_l1: f64,
    pub ratio: f64,
    pub threshold: f64,
    pub flagged: bool,
}

/// Flags the suspect when its normalized trigger size is at most `threshold`
/// times the clean reference.
pub fn detect(
    suspect: &InvertedTrigger,
    reference: &InvertedTrigger,
    threshold: f64,
) -> Result<DetectionVerdict> {
    if suspect.shape != reference.shape {
        return Err(Error::InvalidData(
            "detect requires triggers of the same image dimensions".into(),
        ));
    }
    if reference.p_l1_norm == 0.0 {
        return Err(Error::InvalidData(
            "degenerate reference trigger: zero mask size".into(),
        ));
    }
    let ratio = suspect.p_l1_norm / reference.p_l1_norm;
    Ok(DetectionVerdict {
        suspect_p_l1: suspect.p_l1_norm,
        reference_p_l1: reference.p_l1_norm,
        ratio,
        threshold,
        flagged: ratio <= threshold,
    })
}

/// Default detection threshold; exposed so verdicts can record it.
pub const DETECT_THRESHOLD_DEFAULT: f64 = 0.33;

/// Stamps every probe image and returns the majority predicted class with its
/// vote fraction. Ties break toward the lowest class index.
pub fn identify_target_class(
    w: &WeightVector,
    spec: &ModelSpec,
    t: &InvertedTrigger,
    probe_set: &LabeledImageSet,
) -> Result<(u16, f64)> {
    if probe_set.is_empty() {
        return Err(Error::InvalidData("probe set is empty".into()));
    }
    let stamped = stamp_set_images(probe_set, t)?;
    let batch = crate::nn::Batch::new(stamped, probe_set.batch.shape, probe_set.batch.labels.clone())?;
    let preds = crate::bench::predictions(w, spec, &batch)?;
    let mut votes = vec![0usize; spec.class_count];
    for p in preds {
        votes[p as usize] += 1;
    }
    let mut best = 0usize;
    for c in 1..votes.len() {
        if votes[c] > votes[best] {
            best = c;
        }
    }
    Ok((best as u16, votes[best] as f64 / probe_set.len() as f64))
}

/// Per-class mean softmax probability shift between a suspect and a clean
/// model over a triggered set. Returns the class with the largest shift and
/// the full table (which sums to ~0).
pub fn logit_shift_target(
    w_clean: &WeightVector,
    w_suspect: &WeightVector,
    spec: &ModelSpec,
    triggered_set: &LabeledImageSet,
) -> Result<(u16, Vec<f64>)> {
    if triggered_set.is_empty() {
        return Err(Error::InvalidData("triggered set is empty".into()));
    }
    let mean_softmax = |w: &WeightVector| -> Result<Vec<f64>> {
        let logits = nn::forward(w, spec, &triggered_set.batch)?;
        let k = spec.class_count;
        let mut acc = vec![0.0f64; k];
        for i in 0..triggered_set.len() {
            let row = &logits[i * k..(i + 1) * k];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
            let exps: Vec<f64> = row.iter().map(|&v| ((v as f64) - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for (a, e) in acc.iter_mut().zip(&exps) {
                *a += e / sum;
            }
        }
        for a in &mut acc {
            *a /= triggered_set.len() as f64;
        }
        Ok(acc)
    };
    let clean = mean_softmax(w_clean)?;
    let suspect = mean_softmax(w_suspect)?;
    let shifts: Vec<f64> = suspect.iter().zip(&clean).map(|(s, c)| s - c).collect();
    let mut best = 0usize;
    for c in 1..shifts.len() {
        if shifts[c] > shifts[best] {
            best = c;
        }
    }
    Ok((best as u16, shifts))
}

fn stamp_set_images(set: &LabeledImageSet, t: &InvertedTrigger) -> Result<Vec<f32>> {
    let item_len = set.batch.item_len();
    let stamped: Vec<Vec<f32>> = (0..set.len())
        .into_par_iter()
        .map(|i| stamp(set.batch.image(i), t))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(set.len() * item_len);
    for img in stamped {
        out.extend_from_slice(&img);
    }
    Ok(out)
}

/// Builds a proxy forget set: the first `n` clean items stamped with the
/// inverted trigger and labeled `target`.
pub fn build_proxy_forget_set(
    trigger: &InvertedTrigger,
    target: u16,
    clean_set: &LabeledImageSet,
    n: usize,
) -> Result<LabeledImageSet> {
    if n > clean_set.len() {
        return Err(Error::InvalidData(format!(
            "proxy forget set of {n} requested from a set of {}",
            clean_set.len()
        )));
    }
    let indices: Vec<usize> = (0..n).collect();
    let mut out = clean_set.select(&indices);
    if n > 0 {
        let images = stamp_set_images(&out, trigger)?;
        out.batch = crate::nn::Batch::new(images, out.batch.shape, vec![target; n])?;
    }
    out.poison_mask = vec![true; n];
    out.origin = Origin::Forget {
        source: ForgetSource::Proxy {
            trigger_hash: trigger.content_hash(),
            target,
        },
        clean_ratio: 0.0,
    };
    Ok(out)
}

/// Stamps every item of an evaluation set with an inverted trigger, keeping
/// original labels (the proxy analogue of the data module's eval stamping).
pub fn stamp_eval_set_inverted(
    set: &LabeledImageSet,
    trigger: &InvertedTrigger,
) -> Result<LabeledImageSet> {
    let images = stamp_set_images(set, trigger)?;
    let mut out = set.clone();
    out.batch = crate::nn::Batch::new(images, set.batch.shape, set.batch.labels.clone())?;
    out.poison_mask = vec![true; set.len()];
    out.origin = Origin::Triggered {
        trigger_hash: trigger.content_hash(),
    };
    Ok(out)
}

#[cfg(test)]
mod tests;
