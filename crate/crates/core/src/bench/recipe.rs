//! Config-driven experiment recipes.
//!
//! Each recipe runs its phase pipeline once per seed, records per-phase
//! manifests and per-seed metrics, aggregates mean ± std across seeds, and
//! writes a deterministic report bundle (a directory of JSON/CSV files, every
//! artifact content-hashed). All randomness flows from the config's seeds.

use super::report::{emit_report, write_artifact, Bundle, PhaseRecord, ReportFormat, SeedSummary};
use super::{clean_accuracy, evaluate, EvalReport};
use crate::arith::{
    clean_residual, make_task_vector, negate_unlearn, search_alpha, wd_error_grid, write_wd_grid,
    AlphaGrid, AlphaSearchPolicy, SelectionRule, SweepOutcome, TaskVector, WdGridConfig,
};
use crate::data::{
    build_forget_set, gen_dataset, stamp_eval_set, DatasetBundle, DatasetSpec, LabeledImageSet,
    TriggerSpec,
};
use crate::error::{Error, Result};
use crate::inverse::{
    build_proxy_forget_set, detect, identify_target_class, invert_trigger, logit_shift_target,
    stamp_eval_set_inverted, InversionConfig, InversionObjective, DETECT_THRESHOLD_DEFAULT,
};
use crate::nn::{self, ModelSpec, WeightVector};
use crate::rng::CounterRng;
use crate::train::{
    clean_finetune, estimate_trigger_vector, gradient_ascent, implant_backdoor,
    train, train_with_snapshots, AscentEval, EpochStats, StopPolicy, TrainConfig,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecipeId {
    Implant,
    TbarTrue,
    TbarProxy,
    GaCompare,
    WdGrid,
    Transfer,
    MixedRatio,
    ForgetSize,
    DetoxMerge,
    AlphaSensitivity,
}

impl RecipeId {
    pub fn name(&self) -> &'static str {
        match self {
            RecipeId::Implant => "implant",
            RecipeId::TbarTrue => "tbar-true",
            RecipeId::TbarProxy => "tbar-proxy",
            RecipeId::GaCompare => "ga-compare",
            RecipeId::WdGrid => "wd-grid",
            RecipeId::Transfer => "transfer",
            RecipeId::MixedRatio => "mixed-ratio",
            RecipeId::ForgetSize => "forget-size",
            RecipeId::DetoxMerge => "detox-merge",
            RecipeId::AlphaSensitivity => "alpha-sensitivity",
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3]
}

fn default_poison_rate() -> f64 {
    0.03
}

fn default_pretrain_epochs() -> usize {
    5
}

fn default_implant_epochs() -> usize {
    4
}

fn default_forget_epochs() -> usize {
    1
}

fn default_forget_set_size() -> usize {
    256
}

fn default_window() -> usize {
    10
}

fn default_ca_floor() -> f64 {
    0.90
}

fn default_ga_max_epochs() -> usize {
    8
}

fn default_mixed_ratios() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75]
}

fn default_forget_sizes() -> Vec<usize> {
    vec![64, 128, 256, 512]
}

fn default_merge_alpha() -> f64 {
    1.0
}

fn default_lr_pretrain() -> f64 {
    1e-3
}

fn default_lr_finetune() -> f64 {
    3e-4
}

fn default_lr_ascent() -> f64 {
    1e-4
}

/// One experiment: recipe id, dataset(s), trigger, per-phase knobs, seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub recipe: RecipeId,
    pub dataset: DatasetSpec,
    /// Second task for transfer and detox-merge recipes.
    #[serde(default)]
    pub dataset_b: Option<DatasetSpec>,
    pub trigger: TriggerSpec,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_poison_rate")]
    pub poison_rate: f64,
    #[serde(default = "default_pretrain_epochs")]
    pub pretrain_epochs: usize,
    #[serde(default = "default_implant_epochs")]
    pub implant_epochs: usize,
    #[serde(default = "default_forget_epochs")]
    pub forget_epochs: usize,
    #[serde(default = "default_forget_set_size")]
    pub forget_set_size: usize,
    /// Clean fraction of the forget set (0 = all triggered).
    #[serde(default)]
    pub clean_ratio: f64,
    #[serde(default)]
    pub alpha_grid: AlphaGrid,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_ca_floor")]
    pub ca_floor: f64,
    #[serde(default)]
    pub wd: WdGridConfig,
    #[serde(default)]
    pub inversion: InversionConfig,
    /// Use the logit-shift table instead of majority probing for target
    /// identification in the proxy recipe (the weak-trigger path).
    #[serde(default)]
    pub proxy_logit_shift: bool,
    #[serde(default = "default_ga_max_epochs")]
    pub ga_max_epochs: usize,
    #[serde(default = "default_mixed_ratios")]
    pub mixed_ratios: Vec<f64>,
    #[serde(default = "default_forget_sizes")]
    pub forget_sizes: Vec<usize>,
    #[serde(default = "default_merge_alpha")]
    pub merge_alpha: f64,
    #[serde(default = "default_lr_pretrain")]
    pub lr_pretrain: f64,
    #[serde(default = "default_lr_finetune")]
    pub lr_finetune: f64,
    #[serde(default = "default_lr_ascent")]
    pub lr_ascent: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        if let Some(b) = &self.dataset_b {
            b.validate()?;
            if b.class_count != self.dataset.class_count
                || b.height != self.dataset.height
                || b.width != self.dataset.width
            {
                return Err(Error::InvalidConfig(
                    "dataset_b must share class_count and image shape with the primary dataset"
                        .into(),
                ));
            }
        }
        if matches!(self.recipe, RecipeId::Transfer | RecipeId::DetoxMerge)
            && self.dataset_b.is_none()
        {
            return Err(Error::InvalidConfig(format!(
                "recipe {} requires dataset_b",
                self.recipe.name()
            )));
        }
        self.trigger.validate(self.dataset.shape())?;
        if (self.trigger.target_label as usize) >= self.dataset.class_count {
            return Err(Error::InvalidConfig("target label out of class range".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must be non-empty".into()));
        }
        if !(0.0..=1.0).contains(&self.poison_rate) {
            return Err(Error::InvalidConfig("poison_rate outside [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.clean_ratio) {
            return Err(Error::InvalidConfig("clean_ratio outside [0, 1)".into()));
        }
        self.alpha_grid.validate()?;
        let val_items = self.dataset.val_per_class * self.dataset.class_count;
        if self.forget_set_size + 2 > val_items {
            return Err(Error::InvalidConfig(format!(
                "forget_set_size {} leaves no validation items (val split has {})",
                self.forget_set_size, val_items
            )));
        }
        if !(self.ca_floor > 0.0 && self.ca_floor <= 1.0) {
            return Err(Error::InvalidConfig("ca_floor outside (0, 1]".into()));
        }
        Ok(())
    }
}

/// Deterministic per-seed seed derivations for every phase.
pub struct SeedPlan {
    pub init: u64,
    pub pretrain_shuffle: u64,
    pub implant_shuffle: u64,
    pub poison: u64,
    pub forget_shuffle: u64,
    pub stamp_val: u64,
    pub stamp_test: u64,
    pub ga_shuffle: u64,
    pub aux: u64,
}

pub fn derive_seeds(seed: u64) -> SeedPlan {
    let d = |tag: u64| CounterRng::substream(seed, &[0x5eed, tag]).next_u64();
    SeedPlan {
        init: d(1),
        pretrain_shuffle: d(2),
        implant_shuffle: d(3),
        poison: d(4),
        forget_shuffle: d(5),
        stamp_val: d(6),
        stamp_test: d(7),
        ga_shuffle: d(8),
        aux: d(9),
    }
}

pub struct RecipeOutcome {
    pub bundle: Bundle,
    pub out_dir: PathBuf,
    /// Set when a phase failed; the partial bundle is preserved on disk.
    pub failure: Option<String>,
}

fn epochs_json(h: &[EpochStats]) -> serde_json::Value {
    serde_json::to_value(h).unwrap_or(serde_json::Value::Null)
}

/// Standard per-seed pipeline pieces shared by most recipes.
struct SeedRun<'a> {
    cfg: &'a ExperimentConfig,
    data: &'a DatasetBundle,
    plan: SeedPlan,
    model: ModelSpec,
    summary: SeedSummary,
}

impl<'a> SeedRun<'a> {
    fn new(cfg: &'a ExperimentConfig, data: &'a DatasetBundle, seed: u64) -> Result<SeedRun<'a>> {
        let plan = derive_seeds(seed);
        let model = ModelSpec::desk_cnn_for(data.spec.shape(), cfg.dataset.class_count, plan.init);
        Ok(SeedRun {
            cfg,
            data,
            plan,
            model,
            summary: SeedSummary {
                seed,
                metrics: BTreeMap::new(),
                evals: BTreeMap::new(),
                alpha_star: None,
                phases: Vec::new(),
            },
        })
    }

    fn record(&mut self, phase: &str, details: serde_json::Value) {
        self.summary.phases.push(PhaseRecord {
            phase: phase.to_string(),
            details,
        });
    }

    fn metric(&mut self, key: &str, value: f64) {
        self.summary.metrics.insert(key.to_string(), value);
    }

    fn pretrain(&mut self) -> Result<WeightVector> {
        let cfg = TrainConfig {
            learning_rate: self.cfg.lr_pretrain,
            shuffle_seed: self.plan.pretrain_shuffle,
            ..TrainConfig::pretrain_default(self.cfg.pretrain_epochs, self.plan.pretrain_shuffle)
        };
        let w0 = nn::init(&self.model)?;
        let run = train(&w0, &self.model, &self.data.train, &cfg)?;
        self.record(
            "pretrain",
            serde_json::json!({
                "config": cfg,
                "dataset_hash": self.data.train.content_hash(),
                "input_weights_hash": w0.content_hash(),
                "output_weights_hash": run.weights.content_hash(),
                "epochs": epochs_json(&run.history),
            }),
        );
        Ok(run.weights)
    }

    fn implant(
        &mut self,
        theta_pre: &WeightVector,
        trigger: &TriggerSpec,
        rate: f64,
        phase_name: &str,
    ) -> Result<WeightVector> {
        let cfg = TrainConfig {
            learning_rate: self.cfg.lr_finetune,
            shuffle_seed: self.plan.implant_shuffle,
            ..TrainConfig::finetune_default(self.cfg.implant_epochs, self.plan.implant_shuffle)
        };
        let run = implant_backdoor(
            theta_pre,
            &self.model,
            &self.data.train,
            trigger,
            rate,
            self.plan.poison,
            &cfg,
        )?;
        self.record(
            phase_name,
            serde_json::json!({
                "config": cfg,
                "dataset_hash": self.data.train.content_hash(),
                "input_weights_hash": theta_pre.content_hash(),
                "output_weights_hash": run.weights.content_hash(),
                "provenance": run.provenance,
                "epochs": epochs_json(&run.history),
            }),
        );
        Ok(run.weights)
    }

    /// Validation split: the first `forget_set_size` items feed forget sets,
    /// the rest are the alpha-search validation pool.
    fn val_pool(&self) -> (LabeledImageSet, LabeledImageSet) {
        self.data.val.split_at(self.cfg.forget_set_size)
    }

    fn stamped_val_pool(&self, trigger: &TriggerSpec) -> Result<(LabeledImageSet, LabeledImageSet)> {
        let (_, val_eval) = self.val_pool();
        let stamped = stamp_eval_set(&val_eval, trigger, self.plan.stamp_val)?;
        Ok((val_eval, stamped))
    }

    fn test_sets(&self, trigger: &TriggerSpec) -> Result<(LabeledImageSet, LabeledImageSet)> {
        let stamped = stamp_eval_set(&self.data.test, trigger, self.plan.stamp_test)?;
        Ok((self.data.test.clone(), stamped))
    }

    fn forget_set(&mut self, trigger: &TriggerSpec, n: usize, clean_ratio: f64) -> Result<LabeledImageSet> {
        let (forget_src, _) = self.val_pool();
        let fs = build_forget_set(&forget_src, n, trigger, clean_ratio)?;
        self.record(
            "build-forget-set",
            serde_json::json!({
                "size": n,
                "clean_ratio": clean_ratio,
                "trigger_hash": trigger.content_hash(),
                "class_histogram": fs.class_histogram(self.cfg.dataset.class_count),
                "set_hash": fs.content_hash(),
            }),
        );
        Ok(fs)
    }

    fn estimate(
        &mut self,
        theta_b: &WeightVector,
        forget: &LabeledImageSet,
    ) -> Result<TaskVector> {
        let cfg = TrainConfig {
            learning_rate: self.cfg.lr_finetune,
            epochs: self.cfg.forget_epochs,
            shuffle_seed: self.plan.forget_shuffle,
            ..TrainConfig::forget_default(self.plan.forget_shuffle)
        };
        let (tau, history) = estimate_trigger_vector(theta_b, &self.model, forget, &cfg)?;
        self.record(
            "estimate-trigger-vector",
            serde_json::json!({
                "config": cfg,
                "forget_set_hash": forget.content_hash(),
                "input_weights_hash": theta_b.content_hash(),
                "tau_hash": tau.content_hash(),
                "tau_l2": tau.l2_norm(),
                "epochs": epochs_json(&history),
            }),
        );
        Ok(tau)
    }

    fn search(
        &mut self,
        theta_b: &WeightVector,
        tau: &TaskVector,
        rule: SelectionRule,
        val_clean: &LabeledImageSet,
        val_triggered: &LabeledImageSet,
        target: u16,
    ) -> Result<SweepOutcome> {
        let policy = AlphaSearchPolicy {
            grid: self.cfg.alpha_grid,
            rule,
            val_clean,
            val_triggered,
            target,
        };
        let sweep = search_alpha(theta_b, tau, &self.model, &policy)?;
        self.record(
            "search-alpha",
            serde_json::json!({
                "grid": self.cfg.alpha_grid,
                "rule": rule,
                "alpha_star": sweep.alpha_star,
                "ca_reference": sweep.ca_reference,
                "notes": sweep.notes,
            }),
        );
        Ok(sweep)
    }

    fn eval_pair(
        &mut self,
        name: &str,
        w: &WeightVector,
        test_clean: &LabeledImageSet,
        test_triggered: &LabeledImageSet,
        target: u16,
        reference: Option<&EvalReport>,
    ) -> Result<EvalReport> {
        let mut report = evaluate(w, &self.model, test_clean, test_triggered, target)?;
        if let Some(r) = reference {
            report = report.with_reference(r);
        }
        self.metric(&format!("ca_{name}"), report.ca);
        self.metric(&format!("asr_{name}"), report.asr);
        self.summary.evals.insert(name.to_string(), report.clone());
        Ok(report)
    }
}

/// The true-trigger unlearning pipeline for one seed; shared by several
/// recipes. Returns (theta_pre, theta_b, tau, sweep, reports).
struct TruePipeline {
    theta_pre: WeightVector,
    theta_b: WeightVector,
    tau: TaskVector,
    sweep: SweepOutcome,
    theta_clean: WeightVector,
    backdoored: EvalReport,
    cleaned: EvalReport,
}

fn run_true_pipeline(run: &mut SeedRun<'_>) -> Result<TruePipeline> {
    let cfg = run.cfg;
    let trigger = cfg.trigger.clone();
    let target = trigger.target_label;
    let theta_pre = run.pretrain()?;
    let theta_b = run.implant(&theta_pre, &trigger, cfg.poison_rate, "implant")?;
    let (test_clean, test_trig) = run.test_sets(&trigger)?;
    let pretrain_ca = clean_accuracy(&theta_pre, &run.model, &test_clean)?;
    run.metric("pretrain_ca", pretrain_ca);
    let backdoored = run.eval_pair("backdoored", &theta_b, &test_clean, &test_trig, target, None)?;
    let forget = run.forget_set(&trigger, cfg.forget_set_size, cfg.clean_ratio)?;
    let tau = run.estimate(&theta_b, &forget)?;
    let (val_clean, val_trig) = run.stamped_val_pool(&trigger)?;
    let sweep = run.search(
        &theta_b,
        &tau,
        SelectionRule::MinAsrThenMaxCa,
        &val_clean,
        &val_trig,
        target,
    )?;
    let theta_clean = negate_unlearn(&theta_b, &tau, sweep.alpha_star)?;
    run.summary.alpha_star = Some(sweep.alpha_star);
    run.metric("alpha_star", sweep.alpha_star);
    let cleaned = run.eval_pair(
        "cleaned",
        &theta_clean,
        &test_clean,
        &test_trig,
        target,
        Some(&backdoored),
    )?;
    if let Some(r) = cleaned.retention {
        run.metric("ca_retention", r.ca_retention);
        run.metric("asr_removal", r.asr_removal);
    }
    Ok(TruePipeline {
        theta_pre,
        theta_b,
        tau,
        sweep,
        theta_clean,
        backdoored,
        cleaned,
    })
}

fn seed_dir(seed: u64) -> String {
    format!("seeds/seed-{seed}")
}

/// Runs a recipe, writing the report bundle under `out_dir`.
///
/// Config validation errors return `Err` before anything is written. A phase
/// failure preserves the partial bundle (marked incomplete) and reports the
/// failure in the outcome instead of an `Err`.
pub fn run_recipe(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RecipeOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let config_json = serde_json::to_value(cfg)?;
    let mut bundle = Bundle::new(cfg.recipe.name(), config_json.clone());
    write_artifact(
        &mut bundle,
        out_dir,
        "config.json",
        serde_json::to_string_pretty(&config_json)?.as_bytes(),
    )?;

    let data = gen_dataset(&cfg.dataset)?;
    bundle
        .notes
        .push(format!("train split hash {}", data.train.content_hash()));
    let data_b = match &cfg.dataset_b {
        Some(spec) => Some(gen_dataset(spec)?),
        None => None,
    };

    let mut failure: Option<String> = None;
    for &seed in &cfg.seeds {
        let result = run_one_seed(cfg, &data, data_b.as_ref(), seed, out_dir, &mut bundle);
        match result {
            Ok(summary) => bundle.seeds.push(summary),
            Err(e) => {
                failure = Some(format!("seed {seed}: {e}"));
                bundle.incomplete = true;
                bundle
                    .missing_phases
                    .push(format!("seed {seed} onward ({e})"));
                break;
            }
        }
    }
    bundle.recompute_aggregate();

    let bundle_json = bundle.to_canonical_json()?;
    write_artifact(&mut bundle, out_dir, "bundle.json", bundle_json.as_bytes())?;
    // The artifact map now contains bundle.json's own hash; rewrite so the
    // stored file matches the final in-memory bundle.
    let bundle_json = bundle.to_canonical_json()?;
    std::fs::write(out_dir.join("bundle.json"), &bundle_json)?;
    emit_report(&bundle, ReportFormat::Json, out_dir)?;
    emit_report(&bundle, ReportFormat::Csv, out_dir)?;
    emit_report(&bundle, ReportFormat::MarkdownSummary, out_dir)?;

    Ok(RecipeOutcome {
        bundle,
        out_dir: out_dir.to_path_buf(),
        failure,
    })
}

fn run_one_seed(
    cfg: &ExperimentConfig,
    data: &DatasetBundle,
    data_b: Option<&DatasetBundle>,
    seed: u64,
    out_dir: &Path,
    bundle: &mut Bundle,
) -> Result<SeedSummary> {
    let mut run = SeedRun::new(cfg, data, seed)?;
    let target = cfg.trigger.target_label;
    match cfg.recipe {
        RecipeId::Implant => {
            let theta_pre = run.pretrain()?;
            let theta_b = run.implant(&theta_pre, &cfg.trigger, cfg.poison_rate, "implant")?;
            let (test_clean, test_trig) = run.test_sets(&cfg.trigger)?;
            run.metric(
                "pretrain_ca",
                clean_accuracy(&theta_pre, &run.model, &test_clean)?,
            );
            let backdoored =
                run.eval_pair("backdoored", &theta_b, &test_clean, &test_trig, target, None)?;
            // Control arm: same fine-tune at rate 0.
            let theta_ctrl = run.implant(&theta_pre, &cfg.trigger, 0.0, "implant-control")?;
            let control =
                run.eval_pair("control", &theta_ctrl, &test_clean, &test_trig, target, None)?;
            run.metric("ca_gap_vs_control", control.ca - backdoored.ca);
        }
        RecipeId::TbarTrue => {
            let p = run_true_pipeline(&mut run)?;
            write_artifact(
                bundle,
                out_dir,
                &format!("{}/sweep.csv", seed_dir(seed)),
                p.sweep.to_csv().as_bytes(),
            )?;
        }
        RecipeId::WdGrid => {
            let p = run_true_pipeline(&mut run)?;
            write_artifact(
                bundle,
                out_dir,
                &format!("{}/sweep.csv", seed_dir(seed)),
                p.sweep.to_csv().as_bytes(),
            )?;
            let tau_c = clean_residual(&p.theta_pre, &p.theta_b, &p.tau, p.sweep.alpha_star)?;
            let tau_t_star = p.tau.scaled(p.sweep.alpha_star);
            // Disjoint domains from the val evaluation pool: first half clean,
            // second half triggered.
            let (_, val_eval) = run.val_pool();
            let (d_clean, d_for_trig) = val_eval.split_at(val_eval.len() / 2);
            let d_trig = stamp_eval_set(&d_for_trig, &cfg.trigger, run.plan.stamp_val)?;
            let grid = wd_error_grid(
                &p.theta_pre,
                &tau_c,
                &tau_t_star,
                &run.model,
                &d_clean,
                &d_trig,
                &cfg.wd,
            )?;
            let csv_path = out_dir.join(seed_dir(seed)).join("wd-grid.csv");
            let sidecar = out_dir.join(seed_dir(seed)).join("wd-grid.json");
            std::fs::create_dir_all(csv_path.parent().unwrap())?;
            write_wd_grid(&grid, &csv_path, &sidecar)?;
            for rel in ["wd-grid.csv", "wd-grid.json"] {
                let full = out_dir.join(seed_dir(seed)).join(rel);
                let bytes = std::fs::read(&full)?;
                bundle.artifacts.insert(
                    format!("{}/{}", seed_dir(seed), rel),
                    crate::hash::sha256_hex(&bytes),
                );
            }
            let norm = grid.xi_normalized();
            let res = grid.alpha_t_axis.len();
            run.metric("xi_origin", norm[0]);
            // Interior points with both coefficients >= 0.5.
            let mut min_interior = f64::INFINITY;
            for (i, &ac) in grid.alpha_c_axis.iter().enumerate() {
                for (j, &at) in grid.alpha_t_axis.iter().enumerate() {
                    let interior = i + 1 < grid.alpha_c_axis.len() && j + 1 < res;
                    if ac >= 0.5 && at >= 0.5 && interior {
                        min_interior = min_interior.min(norm[i * res + j]);
                    }
                }
            }
            run.metric("xi_min_interior", min_interior);
            run.record(
                "wd-grid",
                serde_json::json!({
                    "config": cfg.wd,
                    "samples": [grid.samples.0, grid.samples.1],
                    "xi_origin": norm[0],
                    "xi_min_interior": min_interior,
                }),
            );
        }
        RecipeId::Transfer => {
            // Pipeline on task A extracts the trigger vector.
            let p = run_true_pipeline(&mut run)?;
            // Independent model backdoored on task B with the same trigger.
            let data_b = data_b.expect("validated");
            let mut run_b = SeedRun::new(cfg, data_b, seed ^ 0xb)?;
            let theta_pre_b = run_b.pretrain()?;
            let theta_b_b = run_b.implant(&theta_pre_b, &cfg.trigger, cfg.poison_rate, "implant-b")?;
            let (test_clean_b, test_trig_b) = run_b.test_sets(&cfg.trigger)?;
            let before =
                run_b.eval_pair("backdoored", &theta_b_b, &test_clean_b, &test_trig_b, target, None)?;
            // Re-based application of A's vector onto B's model.
            let (val_clean_b, val_trig_b) = run_b.stamped_val_pool(&cfg.trigger)?;
            let sweep_b = run_b.search(
                &theta_b_b,
                &p.tau,
                SelectionRule::MinAsrThenMaxCa,
                &val_clean_b,
                &val_trig_b,
                target,
            )?;
            let cleaned_b = negate_unlearn(&theta_b_b, &p.tau, sweep_b.alpha_star)?;
            let after = run_b.eval_pair(
                "cleaned",
                &cleaned_b,
                &test_clean_b,
                &test_trig_b,
                target,
                Some(&before),
            )?;
            // Fold B-side results into the primary summary with b_ prefixes.
            for (k, v) in run_b.summary.metrics {
                run.metric(&format!("b_{k}"), v);
            }
            run.metric("b_alpha_star", sweep_b.alpha_star);
            for rec in run_b.summary.phases {
                run.record(&format!("b:{}", rec.phase), rec.details);
            }
            run.summary
                .evals
                .insert("b_backdoored".to_string(), before);
            run.summary.evals.insert("b_cleaned".to_string(), after);
            write_artifact(
                bundle,
                out_dir,
                &format!("{}/sweep-transfer.csv", seed_dir(seed)),
                sweep_b.to_csv().as_bytes(),
            )?;
        }
        RecipeId::TbarProxy => {
            let theta_pre = run.pretrain()?;
            let theta_b = run.implant(&theta_pre, &cfg.trigger, cfg.poison_rate, "implant")?;
            let (test_clean, test_trig) = run.test_sets(&cfg.trigger)?;
            let backdoored =
                run.eval_pair("backdoored", &theta_b, &test_clean, &test_trig, target, None)?;
            // Reverse-engineer a trigger from the suspect model using only
            // clean validation images.
            let (_, val_eval) = run.val_pool();
            let suspect_trigger = invert_trigger(
                &theta_b,
                &run.model,
                &val_eval,
                InversionObjective::EmbeddingSimilarity,
                &cfg.inversion,
            )?;
            let reference_trigger = invert_trigger(
                &theta_pre,
                &run.model,
                &val_eval,
                InversionObjective::EmbeddingSimilarity,
                &cfg.inversion,
            )?;
            let verdict = detect(&suspect_trigger, &reference_trigger, DETECT_THRESHOLD_DEFAULT)?;
            run.metric("suspect_p_l1", verdict.suspect_p_l1);
            run.metric("reference_p_l1", verdict.reference_p_l1);
            run.metric("detect_flagged", verdict.flagged as u8 as f64);
            // Identify the target class: majority probing, with the
            // logit-shift table as the authoritative fallback.
            let (probe_target, confidence) =
                identify_target_class(&theta_b, &run.model, &suspect_trigger, &val_eval)?;
            let proxy_trig_val = stamp_eval_set_inverted(&val_eval, &suspect_trigger)?;
            let (shift_target, shifts) =
                logit_shift_target(&theta_pre, &theta_b, &run.model, &proxy_trig_val)?;
            let inferred = if cfg.proxy_logit_shift || probe_target != shift_target {
                shift_target
            } else {
                probe_target
            };
            if probe_target != shift_target {
                bundle.notes.push(format!(
                    "seed {seed}: probe target {probe_target} disagrees with logit-shift target {shift_target}; logit-shift wins"
                ));
            }
            run.metric("probe_target", probe_target as f64);
            run.metric("probe_confidence", confidence);
            run.metric("shift_target", shift_target as f64);
            run.metric("inferred_target", inferred as f64);
            run.metric("target_correct", (inferred == target) as u8 as f64);
            run.record(
                "identify-target",
                serde_json::json!({
                    "probe_target": probe_target,
                    "probe_confidence": confidence,
                    "logit_shift_target": shift_target,
                    "shift_table": shifts,
                    "inferred_target": inferred,
                }),
            );
            // Proxy forget set and window-after-zero search; the proxy ASR is
            // measured with the inverted trigger, the floor with clean CA.
            let (forget_src, _) = run.val_pool();
            let proxy_forget =
                build_proxy_forget_set(&suspect_trigger, inferred, &forget_src, cfg.forget_set_size)?;
            let tau = run.estimate(&theta_b, &proxy_forget)?;
            let proxy_val_trig = stamp_eval_set_inverted(&val_eval, &suspect_trigger)?;
            let sweep = run.search(
                &theta_b,
                &tau,
                SelectionRule::WindowAfterZero {
                    window: cfg.window,
                    ca_floor: cfg.ca_floor,
                },
                &val_eval,
                &proxy_val_trig,
                inferred,
            )?;
            let theta_clean = negate_unlearn(&theta_b, &tau, sweep.alpha_star)?;
            run.summary.alpha_star = Some(sweep.alpha_star);
            run.metric("alpha_star", sweep.alpha_star);
            run.eval_pair(
                "cleaned",
                &theta_clean,
                &test_clean,
                &test_trig,
                target,
                Some(&backdoored),
            )?;
            write_artifact(
                bundle,
                out_dir,
                &format!("{}/sweep-proxy.csv", seed_dir(seed)),
                sweep.to_csv().as_bytes(),
            )?;
        }
        RecipeId::GaCompare => {
            let theta_pre = run.pretrain()?;
            let theta_b = run.implant(&theta_pre, &cfg.trigger, cfg.poison_rate, "implant")?;
            let (val_clean, val_trig) = run.stamped_val_pool(&cfg.trigger)?;
            let forget = run.forget_set(&cfg.trigger, cfg.forget_set_size, cfg.clean_ratio)?;
            let ca_reference = clean_accuracy(&theta_b, &run.model, &val_clean)?;
            // Gradient-ascent trajectory, evaluated per epoch; no floor so the
            // curve can exhibit the late collapse.
            let ga_cfg = TrainConfig {
                learning_rate: cfg.lr_ascent,
                shuffle_seed: run.plan.ga_shuffle,
                ..TrainConfig::ascent_default(run.plan.ga_shuffle)
            };
            let stop = StopPolicy {
                max_epochs: cfg.ga_max_epochs,
                ca_floor: None,
            };
            let eval_ctx = AscentEval {
                clean_val: &val_clean,
                triggered_val: &val_trig,
                target,
                ca_reference,
            };
            let ga = gradient_ascent(&theta_b, &run.model, &forget, &ga_cfg, &stop, &eval_ctx)?;
            // TBAR curve: one fine-tune with per-epoch snapshots; each epoch's
            // delta is searched and negated independently.
            let ft_cfg = TrainConfig {
                learning_rate: cfg.lr_finetune,
                epochs: cfg.ga_max_epochs,
                shuffle_seed: run.plan.forget_shuffle,
                ..TrainConfig::forget_default(run.plan.forget_shuffle)
            };
            let (_, snapshots) = train_with_snapshots(&theta_b, &run.model, &forget, &ft_cfg)?;
            let mut csv = String::from(
                "epoch,ga_ca,ga_one_minus_asr,tbar_ca,tbar_one_minus_asr,tbar_alpha_star\n",
            );
            let mut tbar_cas = Vec::new();
            for (e, snap) in snapshots.iter().enumerate() {
                let tau_e = make_task_vector(snap, &theta_b)?
                    .with_source("estimate_trigger_vector", Some(cfg.trigger.content_hash()));
                let sweep_e = search_alpha(
                    &theta_b,
                    &tau_e,
                    &run.model,
                    &AlphaSearchPolicy {
                        grid: cfg.alpha_grid,
                        rule: SelectionRule::MinAsrThenMaxCa,
                        val_clean: &val_clean,
                        val_triggered: &val_trig,
                        target,
                    },
                )?;
                let w_e = negate_unlearn(&theta_b, &tau_e, sweep_e.alpha_star)?;
                let ca_e = clean_accuracy(&w_e, &run.model, &val_clean)?;
                let asr_e =
                    super::attack_success_rate(&w_e, &run.model, &val_trig, target)?;
                tbar_cas.push(ca_e);
                let (ga_ca, ga_asr) = ga
                    .trajectory
                    .get(e)
                    .map(|p| (p.ca_val, p.asr_val))
                    .unwrap_or((f64::NAN, f64::NAN));
                csv.push_str(&format!(
                    "{e},{ga_ca:.6},{:.6},{ca_e:.6},{:.6},{:.4}\n",
                    1.0 - ga_asr,
                    1.0 - asr_e,
                    sweep_e.alpha_star
                ));
            }
            write_artifact(
                bundle,
                out_dir,
                &format!("{}/ga-compare.csv", seed_dir(seed)),
                csv.as_bytes(),
            )?;
            let ga_best_ca = ga
                .trajectory
                .iter()
                .map(|p| p.ca_val)
                .fold(f64::NEG_INFINITY, f64::max);
            let ga_final_ca = ga.trajectory.last().map(|p| p.ca_val).unwrap_or(f64::NAN);
            run.metric("ga_best_ca", ga_best_ca);
            run.metric("ga_final_ca", ga_final_ca);
            run.metric(
                "ga_final_asr",
                ga.trajectory.last().map(|p| p.asr_val).unwrap_or(f64::NAN),
            );
            let tbar_ca_min = tbar_cas.iter().copied().fold(f64::INFINITY, f64::min);
            let tbar_ca_max = tbar_cas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            run.metric("tbar_ca_min", tbar_ca_min);
            run.metric("tbar_ca_max", tbar_ca_max);
            run.record(
                "ga-compare",
                serde_json::json!({
                    "ga_config": ga_cfg,
                    "stop": stop,
                    "trajectory": ga.trajectory,
                    "stopped_by_floor": ga.stopped_by_floor,
                }),
            );
        }
        RecipeId::MixedRatio => {
            let theta_pre = run.pretrain()?;
            let theta_b = run.implant(&theta_pre, &cfg.trigger, cfg.poison_rate, "implant")?;
            let (test_clean, test_trig) = run.test_sets(&cfg.trigger)?;
            run.eval_pair("backdoored", &theta_b, &test_clean, &test_trig, target, None)?;
            let (val_clean, val_trig) = run.stamped_val_pool(&cfg.trigger)?;
            let mut csv = String::from("clean_ratio,alpha_star,ca,asr\n");
            let ratios = cfg.mixed_ratios.clone();
            for ratio in ratios {
                let forget = run.forget_set(&cfg.trigger, cfg.forget_set_size, ratio)?;
                let tau = run.estimate(&theta_b, &forget)?;
                let sweep = run.search(
                    &theta_b,
                    &tau,
                    SelectionRule::MinAsrThenMaxCa,
                    &val_clean,
                    &val_trig,
                    target,
                )?;
                let w = negate_unlearn(&theta_b, &tau, sweep.alpha_star)?;
                let report = evaluate(&w, &run.model, &test_clean, &test_trig, target)?;
                let tag = format!("{:.2}", ratio).replace('.', "_");
                run.metric(&format!("ca_ratio_{tag}"), report.ca);
                run.metric(&format!("asr_ratio_{tag}"), report.asr);
                csv.push_str(&format!(
                    "{ratio:.2},{:.4},{:.6},{:.6}\n",
                    sweep.alpha_star, report.ca, report.asr
                ));
            }
            write_artifact(
                bundle,
                out_dir,
                &format!("{}/mixed-ratio.csv", seed_dir(seed)),
                csv.as_bytes(),
            )?;
        }
        RecipeId::ForgetSize => {
            let theta_pre = run.pretrain()?;
            let theta_b = run.implant(&theta_pre, &cfg.trigger, cfg.poison_rate, "implant")?;
            let (test_clean, test_trig) = run.test_sets(&cfg.trigger)?;
            run.eval_pair("backdoored", &theta_b, &test_clean, &test_trig, target, None)?;
            let mut csv = String::from("forget_size,alpha_star,ca,asr\n");
            let sizes = cfg.forget_sizes.clone();
            for size in sizes {
                let (forget_src, val_eval) = run.data.val.split_at(size);
                let forget = build_forget_set(&forget_src, size, &cfg.trigger, cfg.clean_ratio)?;
                let val_trig = stamp_eval_set(&val_eval, &cfg.trigger, run.plan.stamp_val)?;
                let tau = run.estimate(&theta_b, &forget)?;
                let sweep = run.search(
                    &theta_b,
                    &tau,
                    SelectionRule::MinAsrThenMaxCa,
                    &val_eval,
                    &val_trig,
                    target,
                )?;
                let w = negate_unlearn(&theta_b, &tau, sweep.alpha_star)?;
                let report = evaluate(&w, &run.model, &test_clean, &test_trig, target)?;
                run.metric(&format!("ca_size_{size}"), report.ca);
                run.metric(&format!("asr_size_{size}"), report.asr);
                csv.push_str(&format!(
                    "{size},{:.4},{:.6},{:.6}\n",
                    sweep.alpha_star, report.ca, report.asr
                ));
            }
            write_artifact(
                bundle,
                out_dir,
                &format!("{}/forget-size.csv", seed_dir(seed)),
                csv.as_bytes(),
            )?;
        }
        RecipeId::DetoxMerge => {
            // Two task vectors from one base: a backdoored task-A vector and a
            // clean task-B vector, merged by plain task arithmetic.
            let data_b = data_b.expect("validated");
            let theta_pre = run.pretrain()?;
            let theta_b_a = run.implant(&theta_pre, &cfg.trigger, cfg.poison_rate, "implant-a")?;
            let tau_a = make_task_vector(&theta_b_a, &theta_pre)?;
            let ft_cfg = TrainConfig {
                learning_rate: cfg.lr_finetune,
                shuffle_seed: run.plan.aux,
                ..TrainConfig::finetune_default(cfg.implant_epochs, run.plan.aux)
            };
            let run_b = clean_finetune(&theta_pre, &run.model, &data_b.train, &ft_cfg)?;
            run.record(
                "finetune-b",
                serde_json::json!({
                    "config": ft_cfg,
                    "dataset_hash": data_b.train.content_hash(),
                    "output_weights_hash": run_b.weights.content_hash(),
                    "epochs": epochs_json(&run_b.history),
                }),
            );
            let tau_b = make_task_vector(&run_b.weights, &theta_pre)?;
            let merged = crate::arith::merge_task_vectors(
                &theta_pre,
                &[(&tau_a, cfg.merge_alpha), (&tau_b, cfg.merge_alpha)],
            )?;
            let (test_clean, test_trig) = run.test_sets(&cfg.trigger)?;
            let before =
                run.eval_pair("backdoored", &merged, &test_clean, &test_trig, target, None)?;
            run.metric(
                "merged_ca_task_b",
                clean_accuracy(&merged, &run.model, &data_b.test)?,
            );
            // Detox: estimate the trigger vector from the merged model itself.
            let forget = run.forget_set(&cfg.trigger, cfg.forget_set_size, cfg.clean_ratio)?;
            let tau = run.estimate(&merged, &forget)?;
            let (val_clean, val_trig) = run.stamped_val_pool(&cfg.trigger)?;
            let sweep = run.search(
                &merged,
                &tau,
                SelectionRule::MinAsrThenMaxCa,
                &val_clean,
                &val_trig,
                target,
            )?;
            let detoxed = negate_unlearn(&merged, &tau, sweep.alpha_star)?;
            run.summary.alpha_star = Some(sweep.alpha_star);
            let after = run.eval_pair(
                "cleaned",
                &detoxed,
                &test_clean,
                &test_trig,
                target,
                Some(&before),
            )?;
            run.metric(
                "detoxed_ca_task_b",
                clean_accuracy(&detoxed, &run.model, &data_b.test)?,
            );
            let _ = after;
            write_artifact(
                bundle,
                out_dir,
                &format!("{}/sweep-detox.csv", seed_dir(seed)),
                sweep.to_csv().as_bytes(),
            )?;
        }
        RecipeId::AlphaSensitivity => {
            let p = run_true_pipeline(&mut run)?;
            let (test_clean, test_trig) = run.test_sets(&cfg.trigger)?;
            let mut csv = String::from("alpha_scale,alpha,ca,asr\n");
            for (tag, scale) in [("minus10", 0.9), ("star", 1.0), ("plus10", 1.1)] {
                let alpha = scale * p.sweep.alpha_star;
                let w = negate_unlearn(&p.theta_b, &p.tau, alpha)?;
                let report = evaluate(&w, &run.model, &test_clean, &test_trig, target)?;
                run.metric(&format!("ca_{tag}"), report.ca);
                run.metric(&format!("asr_{tag}"), report.asr);
                csv.push_str(&format!(
                    "{scale:.1},{alpha:.4},{:.6},{:.6}\n",
                    report.ca, report.asr
                ));
            }
            write_artifact(
                bundle,
                out_dir,
                &format!("{}/alpha-sensitivity.csv", seed_dir(seed)),
                csv.as_bytes(),
            )?;
            let _ = (p.theta_clean, p.backdoored, p.cleaned);
        }
    }

    // Per-seed manifest file: every phase record in one JSON document.
    let manifest = serde_json::to_string_pretty(&run.summary.phases)?;
    write_artifact(
        bundle,
        out_dir,
        &format!("{}/manifests.json", seed_dir(seed)),
        manifest.as_bytes(),
    )?;
    Ok(run.summary)
}
