//! Report bundles and emission.
//!
//! A bundle is a plain directory tree: manifests, CSVs, and hashes, all
//! deterministic — rerunning a recipe with the same config and seeds yields
//! byte-identical files. All maps are ordered and nothing records wall-clock
//! time or absolute paths.

use super::EvalReport;
use crate::error::Result;
use crate::hash::sha256_hex;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// One recorded phase of one seed's pipeline (the run manifest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: String,
    /// Op-specific payload: configs, seeds, dataset hashes, per-epoch metrics,
    /// output weight hashes.
    pub details: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator; 0 for a single seed).
    pub std: f64,
    pub n: usize,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd {
            mean: f64::NAN,
            std: f64::NAN,
            n: 0,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    MeanStd { mean, std, n }
}

/// Everything recorded for one seed of a recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    /// Scalar metrics (fractions, coefficients) keyed by stable names.
    pub metrics: BTreeMap<String, f64>,
    /// Full evaluation reports keyed by stage name.
    pub evals: BTreeMap<String, EvalReport>,
    pub alpha_star: Option<f64>,
    pub phases: Vec<PhaseRecord>,
}

/// The aggregate result of a recipe run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub recipe: String,
    pub config: serde_json::Value,
    pub seeds: Vec<SeedSummary>,
    /// Mean +- std across seeds for every metric present in all seeds.
    pub aggregate: BTreeMap<String, MeanStd>,
    pub incomplete: bool,
    pub missing_phases: Vec<String>,
    /// Relative path -> SHA-256 of every artifact the recipe wrote.
    pub artifacts: BTreeMap<String, String>,
    pub notes: Vec<String>,
}

impl Bundle {
    pub fn new(recipe: &str, config: serde_json::Value) -> Bundle {
        Bundle {
            recipe: recipe.to_string(),
            config,
            seeds: Vec::new(),
            aggregate: BTreeMap::new(),
            incomplete: false,
            missing_phases: Vec::new(),
            artifacts: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    /// Recomputes the aggregate block from the per-seed metric rows.
    pub fn recompute_aggregate(&mut self) {
        let mut keys: Vec<String> = Vec::new();
        for s in &self.seeds {
            for k in s.metrics.keys() {
                if !keys.contains(k) {
                    keys.push(k.clone());
                }
            }
        }
        self.aggregate.clear();
        for k in keys {
            let values: Vec<f64> = self
                .seeds
                .iter()
                .filter_map(|s| s.metrics.get(&k).copied())
                .collect();
            self.aggregate.insert(k, mean_std(&values));
        }
    }

    pub fn to_canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
    MarkdownSummary,
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn csv_of(bundle: &Bundle) -> String {
    let mut keys: Vec<&String> = bundle.aggregate.keys().collect();
    keys.sort();
    let mut out = String::from("seed");
    for k in &keys {
        out.push(',');
        out.push_str(k);
    }
    out.push('\n');
    for s in &bundle.seeds {
        out.push_str(&s.seed.to_string());
        for k in &keys {
            out.push(',');
            match s.metrics.get(*k) {
                Some(v) => out.push_str(&format!("{v:.6}")),
                None => out.push_str(""),
            }
        }
        out.push('\n');
    }
    out.push_str("mean");
    for k in &keys {
        out.push_str(&format!(",{:.6}", bundle.aggregate[*k].mean));
    }
    out.push('\n');
    out.push_str("std");
    for k in &keys {
        out.push_str(&format!(",{:.6}", bundle.aggregate[*k].std));
    }
    out.push('\n');
    out
}

fn markdown_of(bundle: &Bundle) -> String {
    let mut md = String::new();
    md.push_str(&format!("# Recipe report: {}\n\n", bundle.recipe));
    if bundle.incomplete {
        md.push_str("> **INCOMPLETE** — the run aborted before all phases finished.\n");
        md.push_str(&format!(
            "> Missing phases: {}\n\n",
            bundle.missing_phases.join(", ")
        ));
    }
    // Before/after table when the standard stage evals are present.
    let has_pair = bundle
        .seeds
        .iter()
        .any(|s| s.evals.contains_key("backdoored") && s.evals.contains_key("cleaned"));
    if has_pair {
        md.push_str("| seed | CA (attacked) | ASR (attacked) | CA (cleaned) | ASR (cleaned) |\n");
        md.push_str("|---|---|---|---|---|\n");
        for s in &bundle.seeds {
            let (Some(b), Some(c)) = (s.evals.get("backdoored"), s.evals.get("cleaned")) else {
                continue;
            };
            let ca_ret = if b.ca > 0.0 { c.ca / b.ca } else { f64::NAN };
            let asr_rem = if b.asr > 0.0 {
                1.0 - c.asr / b.asr
            } else {
                f64::NAN
            };
            md.push_str(&format!(
                "| {} | {} | {} | {} ({}%) | {} ({}%) |\n",
                s.seed,
                pct(b.ca),
                pct(b.asr),
                pct(c.ca),
                pct(ca_ret),
                pct(c.asr),
                pct(asr_rem),
            ));
        }
        md.push('\n');
    }
    md.push_str("## Metrics (mean ± std over seeds)\n\n");
    md.push_str("| metric | mean | std | n |\n|---|---|---|---|\n");
    for (k, v) in &bundle.aggregate {
        md.push_str(&format!("| {k} | {:.4} | {:.4} | {} |\n", v.mean, v.std, v.n));
    }
    md.push('\n');
    if !bundle.notes.is_empty() {
        md.push_str("## Notes\n\n");
        for n in &bundle.notes {
            md.push_str(&format!("- {n}\n"));
        }
        md.push('\n');
    }
    md.push_str(
        "ASR counts only items whose true label differs from the target; \
         retention percentages are CA_after/CA_before and 1 - ASR_after/ASR_before.\n",
    );
    md
}

/// Writes the bundle in the requested format; returns the written paths.
/// Emission is deterministic: the same bundle produces identical bytes.
pub fn emit_report(bundle: &Bundle, format: ReportFormat, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let (name, content) = match format {
        ReportFormat::Json => ("report.json", bundle.to_canonical_json()?),
        ReportFormat::Csv => ("report.csv", csv_of(bundle)),
        ReportFormat::MarkdownSummary => ("report.md", markdown_of(bundle)),
    };
    let path = out_dir.join(name);
    std::fs::write(&path, content)?;
    Ok(vec![path])
}

/// Writes a file and records its relative path + hash in the bundle.
pub(crate) fn write_artifact(
    bundle: &mut Bundle,
    root: &Path,
    rel: &str,
    bytes: &[u8],
) -> Result<()> {
    let path = root.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&path, bytes)?;
    bundle
        .artifacts
        .insert(rel.to_string(), sha256_hex(bytes));
    Ok(())
}
