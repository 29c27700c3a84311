//! Evaluation (CA / ASR), experiment recipes, and report emission.

mod recipe;
mod report;

pub use recipe::{run_recipe, ExperimentConfig, RecipeId, RecipeOutcome};
pub use report::{emit_report, Bundle, PhaseRecord, ReportFormat, SeedSummary};

use crate::data::{LabeledImageSet, Origin};
use crate::error::{Error, Result};
use crate::nn::{self, Batch, ModelSpec, WeightVector};
use serde::{Deserialize, Serialize};

/// Deterministic argmax; ties break toward the lowest class index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for i in 1..row.len() {
        if row[i] > row[best] {
            best = i;
        }
    }
    best
}

/// Predicted class per batch item.
pub fn predictions(w: &WeightVector, spec: &ModelSpec, batch: &Batch) -> Result<Vec<u16>> {
    let logits = nn::forward(w, spec, batch)?;
    let k = spec.class_count;
    Ok((0..batch.len())
        .map(|i| argmax(&logits[i * k..(i + 1) * k]) as u16)
        .collect())
}

/// Fraction of items whose argmax equals the label.
pub fn clean_accuracy(w: &WeightVector, spec: &ModelSpec, set: &LabeledImageSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::InvalidData("clean accuracy of an empty set".into()));
    }
    let preds = predictions(w, spec, &set.batch)?;
    let correct = preds
        .iter()
        .zip(&set.batch.labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / set.len() as f64)
}

/// Fraction of triggered items predicted as the target, computed over items
/// whose original label differs from the target (so true-target items cannot
/// inflate the rate).
pub fn attack_success_rate(
    w: &WeightVector,
    spec: &ModelSpec,
    triggered: &LabeledImageSet,
    target: u16,
) -> Result<f64> {
    if triggered.is_empty() {
        return Err(Error::InvalidData("attack success rate of an empty set".into()));
    }
    let preds = predictions(w, spec, &triggered.batch)?;
    let mut hits = 0usize;
    let mut denom = 0usize;
    for (p, l) in preds.iter().zip(&triggered.batch.labels) {
        if *l == target {
            continue;
        }
        denom += 1;
        if *p == target {
            hits += 1;
        }
    }
    if denom == 0 {
        return Err(Error::InvalidData(
            "attack success rate undefined: every item's true label is the target".into(),
        ));
    }
    Ok(hits as f64 / denom as f64)
}

/// Retention annotations relative to a reference (usually the backdoored model).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Retention {
    /// CA_after / CA_reference.
    pub ca_retention: f64,
    /// 1 - ASR_after / ASR_reference.
    pub asr_removal: f64,
}

/// Provenance block identifying exactly what was evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalProvenance {
    pub weights_hash: String,
    pub clean_set_hash: String,
    pub triggered_set_hash: String,
    pub trigger_hash: Option<String>,
    pub target: u16,
    /// ASR denominator policy, stated in every report.
    pub asr_excludes_true_target_items: bool,
}

/// CA, ASR, per-class accuracy, optional retention annotations, provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ca: f64,
    pub asr: f64,
    pub per_class_accuracy: Vec<f64>,
    pub retention: Option<Retention>,
    pub provenance: EvalProvenance,
}

impl EvalReport {
    /// Attaches retention annotations relative to a reference evaluation.
    pub fn with_reference(mut self, reference: &EvalReport) -> EvalReport {
        let ca_retention = if reference.ca > 0.0 {
            self.ca / reference.ca
        } else {
            f64::NAN
        };
        let asr_removal = if reference.asr > 0.0 {
            1.0 - self.asr / reference.asr
        } else {
            f64::NAN
        };
        self.retention = Some(Retention {
            ca_retention,
            asr_removal,
        });
        self
    }
}

/// Evaluates a model: CA on the clean set, ASR on the triggered set.
///
/// The triggered set must carry the items' original labels (as produced by
/// the eval-set stamping operations), so the exclusion rule can apply.
pub fn evaluate(
    w: &WeightVector,
    spec: &ModelSpec,
    test_clean: &LabeledImageSet,
    test_triggered: &LabeledImageSet,
    target: u16,
) -> Result<EvalReport> {
    if test_clean.is_empty() || test_triggered.is_empty() {
        return Err(Error::InvalidData("evaluate requires non-empty sets".into()));
    }
    let preds = predictions(w, spec, &test_clean.batch)?;
    let mut per_class_hits = vec![0usize; spec.class_count];
    let mut per_class_totals = vec![0usize; spec.class_count];
    let mut correct = 0usize;
    for (p, l) in preds.iter().zip(&test_clean.batch.labels) {
        per_class_totals[*l as usize] += 1;
        if p == l {
            per_class_hits[*l as usize] += 1;
            correct += 1;
        }
    }
    let ca = correct as f64 / test_clean.len() as f64;
    let asr = attack_success_rate(w, spec, test_triggered, target)?;
    let per_class_accuracy = per_class_hits
        .iter()
        .zip(&per_class_totals)
        .map(|(&h, &t)| if t == 0 { f64::NAN } else { h as f64 / t as f64 })
        .collect();
    let trigger_hash = match &test_triggered.origin {
        Origin::Triggered { trigger_hash } => Some(trigger_hash.clone()),
        Origin::Poisoned { trigger, .. } => Some(trigger.content_hash()),
        _ => None,
    };
    Ok(EvalReport {
        ca,
        asr,
        per_class_accuracy,
        retention: None,
        provenance: EvalProvenance {
            weights_hash: w.content_hash(),
            clean_set_hash: test_clean.content_hash(),
            triggered_set_hash: test_triggered.content_hash(),
            trigger_hash,
            target,
            asr_excludes_true_target_items: true,
        },
    })
}
