//! Gradient-based trigger inversion.
//!
//! The mask and pattern are parameterized as sigmoids of unconstrained
//! logits, so values stay in [0, 1] without projection. Two objectives:
//! embedding similarity (maximize mean pairwise cosine similarity of stamped
//! inputs' embeddings, model-agnostic) and class-targeted cross-entropy.
//! Both add an L1 penalty on the mask scaled by lambda, driving the trigger
//! to be minimal.

use super::InvertedTrigger;
use crate::data::LabeledImageSet;
use crate::error::{Error, Result};
use crate::nn::{self, ModelSpec, WeightVector};
use crate::train::AdamW;
use crate::train::OptimParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InversionObjective {
    /// Maximize mean pairwise cosine similarity of embeddings of stamped
    /// inputs, minus lambda * ||mask||_1.
    EmbeddingSimilarity,
    /// Minimize cross-entropy of stamped inputs toward a candidate target,
    /// plus lambda * ||mask||_1.
    ClassTargeted { target: u16 },
}

impl InversionObjective {
    pub fn id(&self) -> String {
        match self {
            InversionObjective::EmbeddingSimilarity => "embedding-similarity".into(),
            InversionObjective::ClassTargeted { target } => format!("class-targeted({target})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    pub lambda: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            lambda: 1e-3,
            steps: 400,
            learning_rate: 0.1,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub objective: f64,
    pub l1: f64,
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    (1.0 / (1.0 + (-(x as f64)).exp())) as f32
}

/// Mean pairwise cosine similarity over embedding rows and its gradient.
fn pairwise_cosine(embeds: &[f32], n: usize, d: usize) -> (f64, Vec<f32>) {
    assert!(n >= 2);
    let e = |i: usize| &embeds[i * d..(i + 1) * d];
    let norms: Vec<f64> = (0..n)
        .map(|i| {
            e(i).iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>()
                .sqrt()
                .max(1e-12)
        })
        .collect();
    let mut total = 0.0f64;
    let mut grad = vec![0.0f64; n * d];
    let pairs = (n * (n - 1) / 2) as f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let dot: f64 = e(i)
                .iter()
                .zip(e(j))
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum();
            let c = dot / (norms[i] * norms[j]);
            total += c;
            for k in 0..d {
                let gi = (e(j)[k] as f64) / (norms[i] * norms[j])
                    - c * (e(i)[k] as f64) / (norms[i] * norms[i]);
                let gj = (e(i)[k] as f64) / (norms[i] * norms[j])
                    - c * (e(j)[k] as f64) / (norms[j] * norms[j]);
                grad[i * d + k] += gi / pairs;
                grad[j * d + k] += gj / pairs;
            }
        }
    }
    (
        total / pairs,
        grad.into_iter().map(|v| v as f32).collect(),
    )
}

/// Optimizes a minimal (mask, pattern) trigger against a model.
///
/// Returns the best-by-objective trigger and the optimization trace. The
/// reported mask/pattern are the best-so-far snapshot, so the recorded
/// best objective is non-increasing along the trace.
pub fn invert_trigger(
    w: &WeightVector,
    spec: &ModelSpec,
    clean_set: &LabeledImageSet,
    objective: InversionObjective,
    cfg: &InversionConfig,
) -> Result<InvertedTrigger> {
    if clean_set.is_empty() {
        return Err(Error::InvalidData("trigger inversion needs clean images".into()));
    }
    if cfg.lambda < 0.0 || cfg.steps == 0 || cfg.learning_rate <= 0.0 {
        return Err(Error::InvalidConfig(
            "inversion needs lambda >= 0, steps >= 1, lr > 0".into(),
        ));
    }
    let shape = clean_set.batch.shape;
    let (c, h, w_img) = shape;
    let plane = h * w_img;
    let item_len = c * plane;
    let n_items = clean_set.len();
    let batch = cfg.batch_size.min(n_items).max(2.min(n_items));

    let mut mask_logits = vec![0.0f32; plane];
    let mut pattern_logits = vec![0.0f32; item_len];
    // Short-memory moments: inversion gradients shrink geometrically as the
    // mask collapses, and beta2 = 0.999 would freeze the step size on stale
    // magnitudes.
    let betas = OptimParams {
        beta1: 0.5,
        beta2: 0.9,
        ..OptimParams::default()
    };
    let mut opt_mask = AdamW::new(plane, betas);
    let mut opt_pattern = AdamW::new(item_len, betas);

    let mut best_obj = f64::INFINITY;
    let mut best_mask: Vec<f32> = mask_logits.iter().map(|&l| sigmoid(l)).collect();
    let mut best_pattern: Vec<f32> = pattern_logits.iter().map(|&l| sigmoid(l)).collect();
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let mask: Vec<f32> = mask_logits.iter().map(|&l| sigmoid(l)).collect();
        let pattern: Vec<f32> = pattern_logits.iter().map(|&l| sigmoid(l)).collect();
        let l1: f64 = mask.iter().map(|&m| m as f64).sum();

        // Deterministic cyclic minibatch.
        let start = (step * batch) % n_items;
        let idx: Vec<usize> = (0..batch).map(|k| (start + k) % n_items).collect();
        let sub = clean_set.batch.select(&idx);

        // Stamp the minibatch with the current trigger.
        let mut stamped = vec![0.0f32; batch * item_len];
        for (bi, chunk) in stamped.chunks_mut(item_len).enumerate() {
            let src = &sub.images[bi * item_len..(bi + 1) * item_len];
            for ch in 0..c {
                for p in 0..plane {
                    chunk[ch * plane + p] = ((1.0 - mask[p]) * src[ch * plane + p]
                        + mask[p] * pattern[ch * plane + p])
                        .clamp(0.0, 1.0);
                }
            }
        }

        // Objective value (without penalty) and gradient w.r.t. stamped pixels.
        let (raw_obj, d_images) = match objective {
            InversionObjective::EmbeddingSimilarity => {
                let (embeds, capture) = nn::embed_captured(w, spec, &stamped, batch)?;
                let d = embeds.len() / batch;
                if batch < 2 {
                    return Err(Error::InvalidData(
                        "embedding-similarity inversion needs at least 2 images".into(),
                    ));
                }
                let (sim, d_embed) = pairwise_cosine(&embeds, batch, d);
                // Maximizing similarity: loss = -sim.
                let d_embed_neg: Vec<f32> = d_embed.iter().map(|&g| -g).collect();
                let dx = nn::grad_from_embedding(w, spec, &capture, &d_embed_neg)?;
                (-sim, dx)
            }
            InversionObjective::ClassTargeted { target } => {
                let labels = vec![target; batch];
                let (ce, dx) = nn::input_grad_cross_entropy(w, spec, &stamped, &labels)?;
                (ce, dx)
            }
        };
        let objective_value = raw_obj + cfg.lambda * l1;
        if !objective_value.is_finite() {
            return Err(Error::NonFiniteObjective { step });
        }
        trace.push(TraceRow {
            step,
            objective: objective_value,
            l1,
        });
        if objective_value < best_obj {
            best_obj = objective_value;
            best_mask = mask.clone();
            best_pattern = pattern.clone();
        }

        // Chain to mask and pattern logits, averaging image grads over the batch.
        let mut g_mask = vec![0.0f32; plane];
        let mut g_pattern = vec![0.0f32; item_len];
        for bi in 0..batch {
            let src = &sub.images[bi * item_len..(bi + 1) * item_len];
            let dxs = &d_images[bi * item_len..(bi + 1) * item_len];
            for ch in 0..c {
                for p in 0..plane {
                    let dq = dxs[ch * plane + p];
                    g_mask[p] += dq * (pattern[ch * plane + p] - src[ch * plane + p]);
                    g_pattern[ch * plane + p] += dq * mask[p];
                }
            }
        }
        let inv_b = 1.0 / batch as f32;
        let lam = cfg.lambda as f32;
        for p in 0..plane {
            let dm = g_mask[p] * inv_b + lam;
            g_mask[p] = dm * mask[p] * (1.0 - mask[p]);
        }
        for q in 0..item_len {
            let pch = q % plane;
            let _ = pch;
            let pat = pattern[q];
            g_pattern[q] = g_pattern[q] * inv_b * pat * (1.0 - pat);
        }
        opt_mask.step(&mut mask_logits, &g_mask, cfg.learning_rate, 1.0);
        opt_pattern.step(&mut pattern_logits, &g_pattern, cfg.learning_rate, 1.0);
    }

    let (l1_norm, p_l1_norm) = InvertedTrigger::compute_norms(&best_mask, shape);
    Ok(InvertedTrigger {
        mask: best_mask,
        pattern: best_pattern,
        shape,
        l1_norm,
        p_l1_norm,
        objective: objective.id(),
        lambda: cfg.lambda,
        steps: cfg.steps,
        trace,
    })
}
