//! Grid search for the unlearning coefficient.
//!
//! The sweep evaluates `theta_b - alpha * tau` on clean and triggered
//! validation sets over an alpha grid. Two selection rules: pick the
//! minimal-ASR/maximal-CA point, or walk a fixed window past the first
//! ASR-zero point under a clean-accuracy floor (used with proxy triggers,
//! where the true ASR keeps improving after the proxy ASR is nullified).

use super::{negate_unlearn, TaskVector};
use crate::bench::{attack_success_rate, clean_accuracy};
use crate::data::LabeledImageSet;
use crate::error::{Error, Result};
use crate::nn::{ModelSpec, WeightVector};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for AlphaGrid {
    fn default() -> Self {
        AlphaGrid {
            start: 0.0,
            stop: 3.0,
            step: 0.1,
        }
    }
}

impl AlphaGrid {
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step).round() as usize;
        (0..=n).map(|i| self.start + i as f64 * self.step).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start <= self.stop) || !(self.step > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha grid [{}, {}] step {} is invalid",
                self.start, self.stop, self.step
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// Among grid points with minimal ASR, pick maximal CA; ties break toward
    /// smaller alpha.
    MinAsrThenMaxCa,
    /// Walk `window` grid steps past the first ASR = 0 point; stop early when
    /// CA drops below `ca_floor` times the unedited model's CA.
    WindowAfterZero { window: usize, ca_floor: f64 },
}

impl Default for SelectionRule {
    fn default() -> Self {
        SelectionRule::MinAsrThenMaxCa
    }
}

/// Search policy: grid, rule, and the validation sets the sweep evaluates.
pub struct AlphaSearchPolicy<'a> {
    pub grid: AlphaGrid,
    pub rule: SelectionRule,
    pub val_clean: &'a LabeledImageSet,
    pub val_triggered: &'a LabeledImageSet,
    pub target: u16,
}

/// One evaluated grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub ca_val: f64,
    pub asr_val: f64,
    pub selected: bool,
}

/// Full sweep result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub alpha_star: f64,
    pub rows: Vec<SweepRow>,
    /// CA of the unedited model, the reference for floor checks.
    pub ca_reference: f64,
    /// Notes such as re-basing warnings or floor stops.
    pub notes: Vec<String>,
}

impl SweepOutcome {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,ca_val,asr_val,selected\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:.6},{:.6},{:.6},{}\n",
                r.alpha, r.ca_val, r.asr_val, r.selected
            ));
        }
        out
    }
}

/// Index of the selected row under the min-ASR-then-max-CA rule.
pub fn select_min_asr_max_ca(rows: &[SweepRow]) -> usize {
    let mut best = 0usize;
    for (i, r) in rows.iter().enumerate() {
        let b = &rows[best];
        let better = r.asr_val < b.asr_val
            || (r.asr_val == b.asr_val && r.ca_val > b.ca_val)
            || (r.asr_val == b.asr_val && r.ca_val == b.ca_val && r.alpha < b.alpha);
        if better {
            best = i;
        }
    }
    best
}

/// Runs the sweep walk with an injectable evaluator (alpha -> (ca, asr)).
/// Returns the selected index and all evaluated rows in grid order.
pub fn sweep_and_select(
    grid: &AlphaGrid,
    rule: &SelectionRule,
    ca_reference: f64,
    mut eval: impl FnMut(f64) -> Result<(f64, f64)>,
) -> Result<(usize, Vec<SweepRow>, Vec<String>)> {
    grid.validate()?;
    let alphas = grid.points();
    let mut notes = Vec::new();
    match rule {
        SelectionRule::MinAsrThenMaxCa => {
            let mut rows = Vec::with_capacity(alphas.len());
            for &a in &alphas {
                let (ca, asr) = eval(a)?;
                if ca.is_nan() || asr.is_nan() {
                    return Err(Error::InvalidData(format!("NaN evaluation at alpha {a}")));
                }
                rows.push(SweepRow {
                    alpha: a,
                    ca_val: ca,
                    asr_val: asr,
                    selected: false,
                });
            }
            let best = select_min_asr_max_ca(&rows);
            rows[best].selected = true;
            Ok((best, rows, notes))
        }
        SelectionRule::WindowAfterZero { window, ca_floor } => {
            if *window == 0 {
                return Err(Error::InvalidConfig("window must be >= 1".into()));
            }
            let floor = ca_floor * ca_reference;
            let mut rows: Vec<SweepRow> = Vec::new();
            let mut first_zero: Option<usize> = None;
            let mut selected: usize = 0;
            for (i, &a) in alphas.iter().enumerate() {
                let (ca, asr) = eval(a)?;
                rows.push(SweepRow {
                    alpha: a,
                    ca_val: ca,
                    asr_val: asr,
                    selected: false,
                });
                if i > 0 && ca < floor {
                    // The violating point is recorded but not selected.
                    notes.push(format!(
                        "clean-accuracy floor {floor:.4} crossed at alpha {a:.4}; selected previous point"
                    ));
                    selected = i - 1;
                    rows[selected].selected = true;
                    return Ok((selected, rows, notes));
                }
                selected = i;
                if first_zero.is_none() && asr == 0.0 {
                    first_zero = Some(i);
                }
                if let Some(z) = first_zero {
                    if i >= z + window {
                        break;
                    }
                }
            }
            if first_zero.is_none() {
                notes.push("proxy ASR never reached zero; walked the full grid".into());
            }
            rows[selected].selected = true;
            Ok((selected, rows, notes))
        }
    }
}

/// Grid search over unlearning strengths: evaluates CA and ASR of
/// `theta_b - alpha * tau` per grid point and applies the policy's rule.
/// Forward passes are cached by (weights hash, dataset hash), so duplicate
/// grid points (e.g. a zero task vector) evaluate once.
pub fn search_alpha(
    theta_b: &WeightVector,
    tau: &TaskVector,
    spec: &ModelSpec,
    policy: &AlphaSearchPolicy<'_>,
) -> Result<SweepOutcome> {
    if policy.val_clean.is_empty() || policy.val_triggered.is_empty() {
        return Err(Error::InvalidData(
            "alpha search requires non-empty validation sets".into(),
        ));
    }
    let clean_hash = policy.val_clean.content_hash();
    let trig_hash = policy.val_triggered.content_hash();
    let mut cache: HashMap<String, (f64, f64)> = HashMap::new();
    let ca_reference = clean_accuracy(theta_b, spec, policy.val_clean)?;

    let mut notes = Vec::new();
    if let Some(warn) = tau.base_mismatch(theta_b) {
        notes.push(warn);
    }

    let mut eval = |alpha: f64| -> Result<(f64, f64)> {
        let w = negate_unlearn(theta_b, tau, alpha)?;
        let key = format!("{}|{}|{}", w.content_hash(), clean_hash, trig_hash);
        if let Some(&hit) = cache.get(&key) {
            return Ok(hit);
        }
        let ca = clean_accuracy(&w, spec, policy.val_clean)?;
        let asr = attack_success_rate(&w, spec, policy.val_triggered, policy.target)?;
        cache.insert(key, (ca, asr));
        Ok((ca, asr))
    };

    let (idx, rows, walk_notes) = sweep_and_select(&policy.grid, &policy.rule, ca_reference, &mut eval)?;
    notes.extend(walk_notes);
    Ok(SweepOutcome {
        alpha_star: rows[idx].alpha,
        rows,
        ca_reference,
        notes,
    })
}
