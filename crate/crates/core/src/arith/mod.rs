//! Task-vector algebra: extraction, scaled application, negation-based
//! unlearning, scaling-coefficient search, merging, clean-residual
//! construction, and the disentanglement-error grid.
//!
//! Task vectors store f64 values and every application accumulates in f64
//! before rounding to the f32 weight grid once, so the inverse-pair and
//! residual-reconstruction identities hold bit-exactly on real checkpoints.

mod search;
mod wd;

pub use search::{
    search_alpha, select_min_asr_max_ca, sweep_and_select, AlphaGrid, AlphaSearchPolicy,
    SelectionRule, SweepOutcome, SweepRow,
};
pub use wd::{wd_error_grid, write_wd_grid, AxisRange, WdGrid, WdGridConfig};

use crate::error::{Error, Result};
use crate::hash::sha256_f64s;
use crate::nn::{Layout, WeightVector};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Provenance carried by every task vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvProvenance {
    /// Operation that produced the vector (e.g. "make_task_vector",
    /// "estimate_trigger_vector", "clean_residual").
    pub source: String,
    /// Hash of the trigger spec involved, when there is one.
    pub trigger_hash: Option<String>,
}

/// Element-wise weight difference with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskVector {
    pub values: Vec<f64>,
    pub layout: Arc<Layout>,
    /// Hash of the weights this vector was extracted from.
    pub base_hash: String,
    pub provenance: TvProvenance,
}

impl TaskVector {
    pub fn zeros_like(w: &WeightVector, source: &str) -> TaskVector {
        TaskVector {
            values: vec![0.0; w.total_len()],
            layout: Arc::clone(&w.layout),
            base_hash: w.content_hash(),
            provenance: TvProvenance {
                source: source.to_string(),
                trigger_hash: None,
            },
        }
    }

    pub fn total_len(&self) -> usize {
        self.layout.total_len
    }

    pub fn with_source(mut self, source: &str, trigger_hash: Option<String>) -> TaskVector {
        self.provenance.source = source.to_string();
        self.provenance.trigger_hash = trigger_hash;
        self
    }

    /// A copy scaled by `alpha` (used to bake an optimal coefficient into the
    /// vector, e.g. for disentanglement grids).
    pub fn scaled(&self, alpha: f64) -> TaskVector {
        TaskVector {
            values: self.values.iter().map(|v| alpha * v).collect(),
            layout: Arc::clone(&self.layout),
            base_hash: self.base_hash.clone(),
            provenance: TvProvenance {
                source: format!("{} * {alpha}", self.provenance.source),
                trigger_hash: self.provenance.trigger_hash.clone(),
            },
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn content_hash(&self) -> String {
        sha256_f64s(&self.values)
    }

    /// Some when `theta` is not the checkpoint this vector was extracted from.
    /// Re-basing is legal (transfer experiments do it on purpose) but worth
    /// recording in provenance.
    pub fn base_mismatch(&self, theta: &WeightVector) -> Option<String> {
        let h = theta.content_hash();
        if h != self.base_hash {
            Some(format!(
                "task vector extracted from base {} applied to weights {}",
                &self.base_hash[..12.min(self.base_hash.len())],
                &h[..12]
            ))
        } else {
            None
        }
    }
}

fn check_layout(a: &Layout, b: &Layout, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::LayoutMismatch(format!(
            "{what}: layouts disagree ({} vs {} values)",
            a.total_len, b.total_len
        )));
    }
    Ok(())
}

/// tau = theta_to - theta_from, element-wise in f64.
pub fn make_task_vector(theta_to: &WeightVector, theta_from: &WeightVector) -> Result<TaskVector> {
    check_layout(&theta_to.layout, &theta_from.layout, "make_task_vector")?;
    let values: Vec<f64> = theta_to
        .values
        .iter()
        .zip(&theta_from.values)
        .map(|(&to, &from)| to as f64 - from as f64)
        .collect();
    Ok(TaskVector {
        values,
        layout: Arc::clone(&theta_from.layout),
        base_hash: theta_from.content_hash(),
        provenance: TvProvenance {
            source: "make_task_vector".into(),
            trigger_hash: None,
        },
    })
}

/// theta + alpha * tau, accumulated in f64 and rounded once to f32.
pub fn apply(theta: &WeightVector, tau: &TaskVector, alpha: f64) -> Result<WeightVector> {
    check_layout(&theta.layout, &tau.layout, "apply")?;
    let mut values = Vec::with_capacity(theta.values.len());
    for (&t, &v) in theta.values.iter().zip(&tau.values) {
        let out = (t as f64 + alpha * v) as f32;
        if !out.is_finite() {
            return Err(Error::InvalidData(format!(
                "apply produced a non-finite weight (theta {t}, tau {v}, alpha {alpha})"
            )));
        }
        values.push(out);
    }
    Ok(WeightVector {
        values,
        layout: Arc::clone(&theta.layout),
    })
}

/// Alias of [`apply`] with a negated coefficient, kept as a named operation so
/// provenance distinguishes unlearning edits from generic ones.
pub fn negate_unlearn(
    theta_b: &WeightVector,
    tau_t: &TaskVector,
    alpha: f64,
) -> Result<WeightVector> {
    apply(theta_b, tau_t, -alpha)
}

/// The residual of the total update after removing the scaled trigger vector:
/// tau_c = (theta_b - theta_pre) - alpha * tau_t.
pub fn clean_residual(
    theta_pre: &WeightVector,
    theta_b: &WeightVector,
    tau_t: &TaskVector,
    alpha: f64,
) -> Result<TaskVector> {
    check_layout(&theta_pre.layout, &theta_b.layout, "clean_residual")?;
    check_layout(&theta_pre.layout, &tau_t.layout, "clean_residual")?;
    let values: Vec<f64> = theta_b
        .values
        .iter()
        .zip(&theta_pre.values)
        .zip(&tau_t.values)
        .map(|((&b, &pre), &t)| (b as f64 - pre as f64) - alpha * t)
        .collect();
    Ok(TaskVector {
        values,
        layout: Arc::clone(&theta_pre.layout),
        base_hash: theta_pre.content_hash(),
        provenance: TvProvenance {
            source: "clean_residual".into(),
            trigger_hash: tau_t.provenance.trigger_hash.clone(),
        },
    })
}

/// theta_pre + sum_k alpha_k tau_k, accumulated in listed order in f64.
pub fn merge_task_vectors(
    theta_pre: &WeightVector,
    terms: &[(&TaskVector, f64)],
) -> Result<WeightVector> {
    for (tau, _) in terms {
        check_layout(&theta_pre.layout, &tau.layout, "merge_task_vectors")?;
    }
    let mut acc: Vec<f64> = theta_pre.values.iter().map(|&v| v as f64).collect();
    for (tau, alpha) in terms {
        for (a, &v) in acc.iter_mut().zip(&tau.values) {
            *a += alpha * v;
        }
    }
    let mut values = Vec::with_capacity(acc.len());
    for a in acc {
        let out = a as f32;
        if !out.is_finite() {
            return Err(Error::InvalidData(
                "merge_task_vectors produced a non-finite weight".into(),
            ));
        }
        values.push(out);
    }
    Ok(WeightVector {
        values,
        layout: Arc::clone(&theta_pre.layout),
    })
}
