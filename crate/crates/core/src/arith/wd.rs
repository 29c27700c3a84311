//! Weight-disentanglement error grid.
//!
//! For every (alpha_1, alpha_2) grid point, compare predictions of the
//! two-vector model against each single-vector model on that vector's own
//! domain; xi is the sum of the two disagreement rates (raw range [0, 2],
//! reported normalized to [0, 1]).

use super::{merge_task_vectors, TaskVector};
use crate::bench::predictions;
use crate::data::LabeledImageSet;
use crate::error::{Error, Result};
use crate::nn::{ModelSpec, WeightVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisRange {
    pub start: f64,
    pub stop: f64,
}

impl Default for AxisRange {
    fn default() -> Self {
        AxisRange {
            start: 0.0,
            stop: 2.0,
        }
    }
}

impl AxisRange {
    fn points(&self, resolution: usize) -> Vec<f64> {
        if resolution == 1 {
            return vec![self.start];
        }
        (0..resolution)
            .map(|i| self.start + (self.stop - self.start) * i as f64 / (resolution - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WdGridConfig {
    pub alpha_1: AxisRange,
    pub alpha_2: AxisRange,
    pub resolution: usize,
    /// Items evaluated per domain; the realized counts are recorded in the grid.
    pub samples_per_domain: usize,
}

impl Default for WdGridConfig {
    fn default() -> Self {
        WdGridConfig {
            alpha_1: AxisRange::default(),
            alpha_2: AxisRange::default(),
            resolution: 11,
            samples_per_domain: 512,
        }
    }
}

/// The evaluated grid. `xi_raw` is row-major over (alpha_1 index, alpha_2
/// index) with values in [0, 2]; normalized values divide by 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WdGrid {
    pub alpha_c_axis: Vec<f64>,
    pub alpha_t_axis: Vec<f64>,
    pub xi_raw: Vec<f64>,
    pub metric: String,
    pub samples: (usize, usize),
    /// Divide raw values by this to get the reported normalized grid.
    pub normalization: f64,
}

impl WdGrid {
    pub fn xi_raw_at(&self, i1: usize, i2: usize) -> f64 {
        self.xi_raw[i1 * self.alpha_t_axis.len() + i2]
    }

    pub fn xi_normalized_at(&self, i1: usize, i2: usize) -> f64 {
        self.xi_raw_at(i1, i2) / self.normalization
    }

    pub fn xi_normalized(&self) -> Vec<f64> {
        self.xi_raw.iter().map(|v| v / self.normalization).collect()
    }
}

/// Builds the disentanglement-error grid for two task vectors over their
/// respective domains. The two evaluation sets must be disjoint (checked on
/// item ids).
pub fn wd_error_grid(
    theta_pre: &WeightVector,
    tau_1: &TaskVector,
    tau_2: &TaskVector,
    spec: &ModelSpec,
    domain_1: &LabeledImageSet,
    domain_2: &LabeledImageSet,
    cfg: &WdGridConfig,
) -> Result<WdGrid> {
    if domain_1.is_empty() || domain_2.is_empty() {
        return Err(Error::InvalidData("wd grid requires non-empty domains".into()));
    }
    if cfg.resolution == 0 || cfg.samples_per_domain == 0 {
        return Err(Error::InvalidConfig(
            "wd grid resolution and samples must be >= 1".into(),
        ));
    }
    for id in &domain_1.item_ids {
        if domain_2.item_ids.contains(id) {
            return Err(Error::InvalidData(format!(
                "wd grid domains overlap on item id {id}"
            )));
        }
    }
    let take = |d: &LabeledImageSet| -> LabeledImageSet {
        let n = cfg.samples_per_domain.min(d.len());
        let idx: Vec<usize> = (0..n).collect();
        d.select(&idx)
    };
    let d1 = take(domain_1);
    let d2 = take(domain_2);

    let a1 = cfg.alpha_1.points(cfg.resolution);
    let a2 = cfg.alpha_2.points(cfg.resolution);

    // Single-vector predictions depend on one axis each.
    let singles_1: Vec<Vec<u16>> = a1
        .iter()
        .map(|&a| {
            let w = merge_task_vectors(theta_pre, &[(tau_1, a)])?;
            predictions(&w, spec, &d1.batch)
        })
        .collect::<Result<_>>()?;
    let singles_2: Vec<Vec<u16>> = a2
        .iter()
        .map(|&a| {
            let w = merge_task_vectors(theta_pre, &[(tau_2, a)])?;
            predictions(&w, spec, &d2.batch)
        })
        .collect::<Result<_>>()?;

    let pairs: Vec<(usize, usize)> = (0..a1.len())
        .flat_map(|i| (0..a2.len()).map(move |j| (i, j)))
        .collect();
    let xi_raw: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| -> Result<f64> {
            let combined = merge_task_vectors(theta_pre, &[(tau_1, a1[i]), (tau_2, a2[j])])?;
            let p1 = predictions(&combined, spec, &d1.batch)?;
            let p2 = predictions(&combined, spec, &d2.batch)?;
            let dis_1 = p1
                .iter()
                .zip(&singles_1[i])
                .filter(|(a, b)| a != b)
                .count() as f64
                / p1.len() as f64;
            let dis_2 = p2
                .iter()
                .zip(&singles_2[j])
                .filter(|(a, b)| a != b)
                .count() as f64
                / p2.len() as f64;
            Ok(dis_1 + dis_2)
        })
        .collect::<Result<_>>()?;

    Ok(WdGrid {
        alpha_c_axis: a1,
        alpha_t_axis: a2,
        xi_raw,
        metric: "argmax-disagreement".into(),
        samples: (d1.len(), d2.len()),
        normalization: 2.0,
    })
}

/// Writes the normalized grid as a CSV matrix plus a JSON sidecar describing
/// axes, metric, sample counts, and normalization.
pub fn write_wd_grid(grid: &WdGrid, csv_path: &Path, sidecar_path: &Path) -> Result<()> {
    let mut csv = String::new();
    csv.push_str("alpha_c\\alpha_t");
    for a in &grid.alpha_t_axis {
        csv.push_str(&format!(",{a:.4}"));
    }
    csv.push('\n');
    for (i, ac) in grid.alpha_c_axis.iter().enumerate() {
        csv.push_str(&format!("{ac:.4}"));
        for j in 0..grid.alpha_t_axis.len() {
            csv.push_str(&format!(",{:.6}", grid.xi_normalized_at(i, j)));
        }
        csv.push('\n');
    }
    std::fs::write(csv_path, csv)?;

    let sidecar = serde_json::json!({
        "alpha_c_axis": grid.alpha_c_axis,
        "alpha_t_axis": grid.alpha_t_axis,
        "metric": grid.metric,
        "samples_per_domain": [grid.samples.0, grid.samples.1],
        "normalization": grid.normalization,
        "values": "normalized (raw xi divided by normalization)",
    });
    std::fs::write(sidecar_path, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}
