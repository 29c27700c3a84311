//! Deterministic training loops: pretraining, backdoor implantation,
//! trigger-vector estimation, gradient-ascent unlearning, and the clean
//! fine-tuning baseline.
//!
//! Every run is a pure function of (initial weights, data, config): shuffles
//! draw from counter streams keyed by the config's seed, gradient reductions
//! are fixed-order, and optimizer state is created fresh per call.

use crate::arith::{make_task_vector, TaskVector};
use crate::bench::{attack_success_rate, clean_accuracy};
use crate::data::{poison, LabeledImageSet, Origin, TriggerSpec};
use crate::error::{Error, Result};
use crate::nn::{self, ModelSpec, Plan, WeightVector};
use crate::rng::CounterRng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    CosineWarmup { warmup_steps: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Descent,
    Ascent,
}

/// Adaptive-moment parameters with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimParams {
    fn default() -> Self {
        OptimParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub schedule: Schedule,
    pub optimizer: OptimParams,
    pub shuffle_seed: u64,
    pub direction: Direction,
    /// Ascent normally uses the plain first-order update; this switches in the
    /// adaptive-moment variant (recorded in run manifests).
    pub ascent_adaptive: bool,
}

impl TrainConfig {
    fn base(lr: f64, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 64,
            learning_rate: lr,
            schedule: Schedule::Constant,
            optimizer: OptimParams::default(),
            shuffle_seed: seed,
            direction: Direction::Descent,
            ascent_adaptive: false,
        }
    }

    /// Desk pretraining recipe: warmup + cosine.
    pub fn pretrain_default(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            schedule: Schedule::CosineWarmup { warmup_steps: 50 },
            ..TrainConfig::base(1e-3, epochs, seed)
        }
    }

    /// Desk backdoor-implantation fine-tune.
    pub fn finetune_default(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            schedule: Schedule::CosineWarmup { warmup_steps: 0 },
            ..TrainConfig::base(3e-4, epochs, seed)
        }
    }

    /// Forget-set fine-tune for trigger-vector estimation; one epoch.
    pub fn forget_default(seed: u64) -> TrainConfig {
        TrainConfig::base(3e-4, 1, seed)
    }

    /// Plain gradient ascent.
    pub fn ascent_default(seed: u64) -> TrainConfig {
        TrainConfig {
            direction: Direction::Ascent,
            ..TrainConfig::base(1e-4, 1, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.direction == Direction::Ascent && self.schedule != Schedule::Constant {
            return Err(Error::InvalidConfig(
                "ascent runs require a constant schedule".into(),
            ));
        }
        Ok(())
    }
}

/// Early-stopping policy for ascent runs: a hard epoch cap plus an optional
/// floor on validation clean accuracy as a fraction of a reference CA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopPolicy {
    pub max_epochs: usize,
    /// Stop when CA_val < floor * CA_reference. Checked once per epoch.
    pub ca_floor: Option<f64>,
}

impl StopPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be >= 1".into()));
        }
        if let Some(f) = self.ca_floor {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidConfig(format!("ca_floor {f} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub final_lr: f64,
}

/// Result of a descent training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub weights: WeightVector,
    pub history: Vec<EpochStats>,
}

fn schedule_lr(cfg: &TrainConfig, step: usize, total_steps: usize) -> f64 {
    match cfg.schedule {
        Schedule::Constant => cfg.learning_rate,
        Schedule::CosineWarmup { warmup_steps } => {
            if step < warmup_steps {
                cfg.learning_rate * (step + 1) as f64 / warmup_steps as f64
            } else if total_steps <= warmup_steps + 1 {
                cfg.learning_rate
            } else {
                let t = (step - warmup_steps) as f64 / (total_steps - warmup_steps - 1) as f64;
                cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

pub(crate) struct AdamW {
    m: Vec<f32>,
    v: Vec<f32>,
    t: u64,
    p: OptimParams,
}

impl AdamW {
    pub(crate) fn new(len: usize, p: OptimParams) -> AdamW {
        AdamW {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            p,
        }
    }

    pub(crate) fn step(&mut self, w: &mut [f32], g: &[f32], lr: f64, sign: f32) {
        self.t += 1;
        let b1 = self.p.beta1 as f32;
        let b2 = self.p.beta2 as f32;
        let eps = self.p.eps as f32;
        let bc1 = (1.0 - self.p.beta1.powi(self.t as i32)) as f32;
        let bc2 = (1.0 - self.p.beta2.powi(self.t as i32)) as f32;
        let lr = lr as f32;
        let wd = self.p.weight_decay as f32;
        for i in 0..w.len() {
            let gi = g[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * gi;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * gi * gi;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            w[i] -= sign * lr * (mh / (vh.sqrt() + eps));
            w[i] -= lr * wd * w[i];
        }
    }
}

const SHUFFLE_STREAM: u64 = 31;

struct EpochOutcome {
    loss_sum: f64,
    correct: usize,
    steps: usize,
    final_lr: f64,
}

/// Runs one epoch of minibatch updates. `step_base` counts previous steps for
/// the schedule; returns epoch statistics computed from pre-update logits.
#[allow(clippy::too_many_arguments)]
fn run_epoch(
    plan: &Plan,
    weights: &mut Vec<f32>,
    data: &LabeledImageSet,
    cfg: &TrainConfig,
    opt: &mut Option<AdamW>,
    epoch: usize,
    step_base: usize,
    total_steps: usize,
    history: &[EpochStats],
) -> Result<EpochOutcome> {
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = CounterRng::substream(cfg.shuffle_seed, &[SHUFFLE_STREAM, epoch as u64]);
    rng.shuffle(&mut order);

    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    let mut step = 0usize;
    let mut final_lr = cfg.learning_rate;
    for chunk in order.chunks(cfg.batch_size) {
        let mb = data.batch.select(chunk);
        let (loss, grad, hit) =
            nn::loss_grad_counts(plan, weights.as_slice(), &mb.images, &mb.labels);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                step: step_base + step,
                history: history
                    .iter()
                    .map(|h| h.mean_loss)
                    .chain(std::iter::once(loss))
                    .collect(),
            });
        }
        loss_sum += loss * mb.labels.len() as f64;
        correct += hit;
        let lr = schedule_lr(cfg, step_base + step, total_steps);
        final_lr = lr;
        match (cfg.direction, opt.as_mut()) {
            (Direction::Descent, Some(adam)) => adam.step(weights, &grad, lr, 1.0),
            (Direction::Ascent, Some(adam)) => adam.step(weights, &grad, lr, -1.0),
            (Direction::Ascent, None) => {
                // Plain first-order ascent: w <- w + lr * grad.
                let lr = lr as f32;
                for (w, g) in weights.iter_mut().zip(&grad) {
                    *w += lr * g;
                }
            }
            (Direction::Descent, None) => unreachable!("descent always uses the optimizer"),
        }
        step += 1;
    }
    Ok(EpochOutcome {
        loss_sum,
        correct,
        steps: step,
        final_lr,
    })
}

fn train_inner(
    w0: &WeightVector,
    spec: &ModelSpec,
    data: &LabeledImageSet,
    cfg: &TrainConfig,
    mut snapshot_sink: Option<&mut Vec<WeightVector>>,
) -> Result<TrainRun> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidData("cannot train on an empty set".into()));
    }
    let plan = spec.plan()?;
    if !w0.same_layout(&plan.layout()) {
        return Err(Error::LayoutMismatch(
            "initial weights do not match the model spec".into(),
        ));
    }
    if data.batch.shape != plan.input_shape {
        return Err(Error::InvalidData(format!(
            "training data shape {:?} does not match model input {:?}",
            data.batch.shape, plan.input_shape
        )));
    }
    let n = data.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut weights = w0.values.clone();
    let mut opt = match cfg.direction {
        Direction::Descent => Some(AdamW::new(weights.len(), cfg.optimizer)),
        Direction::Ascent if cfg.ascent_adaptive => Some(AdamW::new(weights.len(), cfg.optimizer)),
        Direction::Ascent => None,
    };
    let mut history: Vec<EpochStats> = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let out = run_epoch(
            &plan,
            &mut weights,
            data,
            cfg,
            &mut opt,
            epoch,
            epoch * steps_per_epoch,
            total_steps,
            &history,
        )?;
        debug_assert_eq!(out.steps, steps_per_epoch);
        history.push(EpochStats {
            epoch,
            mean_loss: out.loss_sum / n as f64,
            train_accuracy: out.correct as f64 / n as f64,
            final_lr: out.final_lr,
        });
        if let Some(sink) = snapshot_sink.as_deref_mut() {
            sink.push(WeightVector {
                values: weights.clone(),
                layout: plan.layout(),
            });
        }
    }
    Ok(TrainRun {
        weights: WeightVector {
            values: weights,
            layout: plan.layout(),
        },
        history,
    })
}

/// Descent training. Bit-deterministic given (w0, data, cfg); aborts on
/// non-finite loss with the loss history in the error.
pub fn train(
    w0: &WeightVector,
    spec: &ModelSpec,
    data: &LabeledImageSet,
    cfg: &TrainConfig,
) -> Result<TrainRun> {
    if cfg.direction != Direction::Descent {
        return Err(Error::InvalidConfig(
            "train runs descent; use gradient_ascent for ascent".into(),
        ));
    }
    train_inner(w0, spec, data, cfg, None)
}

/// Like [`train`] but also returns the weights after every epoch (used by the
/// per-epoch comparison curves).
pub fn train_with_snapshots(
    w0: &WeightVector,
    spec: &ModelSpec,
    data: &LabeledImageSet,
    cfg: &TrainConfig,
) -> Result<(TrainRun, Vec<WeightVector>)> {
    if cfg.direction != Direction::Descent {
        return Err(Error::InvalidConfig(
            "train runs descent; use gradient_ascent for ascent".into(),
        ));
    }
    let mut snaps = Vec::with_capacity(cfg.epochs);
    let run = train_inner(w0, spec, data, cfg, Some(&mut snaps))?;
    Ok((run, snaps))
}

/// Provenance block recorded by [`implant_backdoor`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImplantProvenance {
    pub trigger_hash: String,
    pub trigger_kind: String,
    pub rate: f64,
    pub poison_seed: u64,
    pub shuffle_seed: u64,
    /// Item ids of the poisoned training items.
    pub poison_item_ids: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct ImplantRun {
    pub weights: WeightVector,
    pub history: Vec<EpochStats>,
    pub provenance: ImplantProvenance,
}

/// Poison-then-train convenience composition.
pub fn implant_backdoor(
    theta_pre: &WeightVector,
    spec: &ModelSpec,
    train_set: &LabeledImageSet,
    trigger: &TriggerSpec,
    rate: f64,
    poison_seed: u64,
    cfg: &TrainConfig,
) -> Result<ImplantRun> {
    let poisoned = poison(train_set, rate, trigger, poison_seed)?;
    let poison_item_ids: Vec<u64> = poisoned
        .item_ids
        .iter()
        .zip(&poisoned.poison_mask)
        .filter(|(_, &m)| m)
        .map(|(&id, _)| id)
        .collect();
    let run = train(theta_pre, spec, &poisoned, cfg)?;
    Ok(ImplantRun {
        weights: run.weights,
        history: run.history,
        provenance: ImplantProvenance {
            trigger_hash: trigger.content_hash(),
            trigger_kind: trigger.kind_name().to_string(),
            rate,
            poison_seed,
            shuffle_seed: cfg.shuffle_seed,
            poison_item_ids,
        },
    })
}

/// Fine-tunes the suspected model on the forget set and returns the weight
/// delta as the estimated trigger direction, with the fine-tune history.
pub fn estimate_trigger_vector(
    theta_b: &WeightVector,
    spec: &ModelSpec,
    forget_set: &LabeledImageSet,
    cfg: &TrainConfig,
) -> Result<(TaskVector, Vec<EpochStats>)> {
    let Origin::Forget { source, .. } = &forget_set.origin else {
        return Err(Error::InvalidData(
            "estimate_trigger_vector requires a forget-origin set".into(),
        ));
    };
    let trigger_hash = match source {
        crate::data::ForgetSource::Trigger(t) => t.content_hash(),
        crate::data::ForgetSource::Proxy { trigger_hash, .. } => trigger_hash.clone(),
    };
    let run = train(theta_b, spec, forget_set, cfg)?;
    let tau = make_task_vector(&run.weights, theta_b)?
        .with_source("estimate_trigger_vector", Some(trigger_hash));
    Ok((tau, run.history))
}

/// Validation context for ascent trajectories.
pub struct AscentEval<'a> {
    pub clean_val: &'a LabeledImageSet,
    pub triggered_val: &'a LabeledImageSet,
    pub target: u16,
    /// Reference CA for the stop floor (typically CA of the backdoored model).
    pub ca_reference: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AscentPoint {
    pub epoch: usize,
    pub mean_loss: f64,
    pub ca_val: f64,
    pub asr_val: f64,
}

#[derive(Debug, Clone)]
pub struct AscentRun {
    pub weights: WeightVector,
    pub trajectory: Vec<AscentPoint>,
    /// True when the CA floor fired before max_epochs.
    pub stopped_by_floor: bool,
    /// Set when the loss went non-finite; weights are the last finite epoch's.
    pub aborted_non_finite: Option<(usize, usize)>,
}

/// Plain gradient ascent on the forget set (`w <- w + lr * grad` per step),
/// evaluated per epoch against the validation sets. Stops at `max_epochs` or
/// when CA_val < floor * CA_reference; a non-finite loss aborts with the
/// trajectory so far.
pub fn gradient_ascent(
    theta_b: &WeightVector,
    spec: &ModelSpec,
    forget_set: &LabeledImageSet,
    cfg: &TrainConfig,
    stop: &StopPolicy,
    eval: &AscentEval<'_>,
) -> Result<AscentRun> {
    cfg.validate()?;
    stop.validate()?;
    if cfg.direction != Direction::Ascent {
        return Err(Error::InvalidConfig(
            "gradient_ascent requires direction = ascent".into(),
        ));
    }
    if !forget_set.origin.is_forget() {
        return Err(Error::InvalidData(
            "gradient_ascent requires a forget-origin set".into(),
        ));
    }
    let plan = spec.plan()?;
    if !theta_b.same_layout(&plan.layout()) {
        return Err(Error::LayoutMismatch(
            "initial weights do not match the model spec".into(),
        ));
    }
    let n = forget_set.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let mut weights = theta_b.values.clone();
    let mut opt = if cfg.ascent_adaptive {
        Some(AdamW::new(weights.len(), cfg.optimizer))
    } else {
        None
    };
    let mut trajectory = Vec::new();
    let mut last_good = weights.clone();
    for epoch in 0..stop.max_epochs {
        let out = run_epoch(
            &plan,
            &mut weights,
            forget_set,
            cfg,
            &mut opt,
            epoch,
            epoch * steps_per_epoch,
            steps_per_epoch * stop.max_epochs,
            &[],
        );
        let out = match out {
            Ok(o) => o,
            Err(Error::NonFiniteLoss { epoch, step, .. }) => {
                return Ok(AscentRun {
                    weights: WeightVector {
                        values: last_good,
                        layout: plan.layout(),
                    },
                    trajectory,
                    stopped_by_floor: false,
                    aborted_non_finite: Some((epoch, step)),
                });
            }
            Err(e) => return Err(e),
        };
        last_good = weights.clone();
        let w = WeightVector {
            values: weights.clone(),
            layout: plan.layout(),
        };
        let ca = clean_accuracy(&w, spec, eval.clean_val)?;
        let asr = attack_success_rate(&w, spec, eval.triggered_val, eval.target)?;
        trajectory.push(AscentPoint {
            epoch,
            mean_loss: out.loss_sum / n as f64,
            ca_val: ca,
            asr_val: asr,
        });
        if let Some(floor) = stop.ca_floor {
            if ca < floor * eval.ca_reference {
                return Ok(AscentRun {
                    weights: w,
                    trajectory,
                    stopped_by_floor: true,
                    aborted_non_finite: None,
                });
            }
        }
    }
    Ok(AscentRun {
        weights: WeightVector {
            values: weights,
            layout: plan.layout(),
        },
        trajectory,
        stopped_by_floor: false,
        aborted_non_finite: None,
    })
}

/// Standard descent fine-tuning on clean data; the comparison arm for data
/// efficiency in reports. Rejects sets with any poisoned item.
pub fn clean_finetune(
    theta_b: &WeightVector,
    spec: &ModelSpec,
    clean_set: &LabeledImageSet,
    cfg: &TrainConfig,
) -> Result<TrainRun> {
    if clean_set.poison_mask.iter().any(|&m| m) {
        return Err(Error::InvalidData(
            "clean_finetune requires an unpoisoned set".into(),
        ));
    }
    train(theta_b, spec, clean_set, cfg)
}

#[cfg(test)]
mod tests;
