//! Procedural datasets, trigger stamping, poisoning, and forget sets.

mod gen;
mod io;
mod trigger;

pub use io::{load_dataset, save_dataset};
pub use trigger::{apply_trigger, blended_mix, sig_wave, Placement, TriggerKind, TriggerSpec};

use crate::error::{Error, Result};
use crate::nn::Batch;
use crate::rng::CounterRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Procedural dataset description. Classes and items are deterministic
/// functions of `(seed, class, index)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub class_count: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl DatasetSpec {
    /// The sizing used by the bench recipes: large enough for ASR/CA mirrors,
    /// small enough for minutes-scale CI.
    pub fn desk_default(seed: u64) -> Self {
        DatasetSpec {
            class_count: 10,
            train_per_class: 150,
            val_per_class: 60,
            test_per_class: 60,
            height: 32,
            width: 32,
            seed,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (3, self.height, self.width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 {
            return Err(Error::InvalidConfig("class_count must be >= 1".into()));
        }
        if self.train_per_class == 0 || self.val_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::InvalidConfig("per-class counts must be >= 1".into()));
        }
        if self.height < 16 || self.width < 16 {
            return Err(Error::InvalidConfig(format!(
                "image {}x{} too small for rendering (minimum side 16)",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Where a forget set's trigger came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgetSource {
    /// Built from the true attack spec.
    Trigger(TriggerSpec),
    /// Built from a reverse-engineered trigger (referenced by content hash).
    Proxy { trigger_hash: String, target: u16 },
}

impl ForgetSource {
    pub fn target(&self) -> u16 {
        match self {
            ForgetSource::Trigger(t) => t.target_label,
            ForgetSource::Proxy { target, .. } => *target,
        }
    }
}

/// Provenance of a [`LabeledImageSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Clean,
    /// Training set with `rate` of its items stamped and relabeled.
    Poisoned { trigger: TriggerSpec, rate: f64 },
    /// Evaluation set with every item stamped and original labels kept.
    Triggered { trigger_hash: String },
    /// Forget set: stamped items relabeled to the target, plus an optional
    /// clean remainder.
    Forget {
        source: ForgetSource,
        clean_ratio: f64,
    },
}

impl Origin {
    pub fn is_forget(&self) -> bool {
        matches!(self, Origin::Forget { .. })
    }
}

/// Images + labels + per-item poison flag + provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet {
    pub batch: Batch,
    pub poison_mask: Vec<bool>,
    pub origin: Origin,
    /// Stable per-item identifiers; splits of one dataset never share ids.
    pub item_ids: Vec<u64>,
}

impl LabeledImageSet {
    pub fn len(&self) -> usize {
        self.batch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batch.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> LabeledImageSet {
        LabeledImageSet {
            batch: self.batch.select(indices),
            poison_mask: indices.iter().map(|&i| self.poison_mask[i]).collect(),
            origin: self.origin.clone(),
            item_ids: indices.iter().map(|&i| self.item_ids[i]).collect(),
        }
    }

    /// First `n` items and the rest, as two sets sharing this set's origin.
    pub fn split_at(&self, n: usize) -> (LabeledImageSet, LabeledImageSet) {
        let head: Vec<usize> = (0..n.min(self.len())).collect();
        let tail: Vec<usize> = (n.min(self.len())..self.len()).collect();
        (self.select(&head), self.select(&tail))
    }

    /// Count of items per label value.
    pub fn class_histogram(&self, class_count: usize) -> Vec<usize> {
        let mut hist = vec![0usize; class_count];
        for &l in &self.batch.labels {
            if (l as usize) < class_count {
                hist[l as usize] += 1;
            }
        }
        hist
    }

    /// SHA-256 over pixels, labels, and mask; identifies evaluation inputs.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in &self.batch.images {
            h.update(v.to_le_bytes());
        }
        for l in &self.batch.labels {
            h.update(l.to_le_bytes());
        }
        for &m in &self.poison_mask {
            h.update([m as u8]);
        }
        hex::encode(h.finalize())
    }
}

/// The three generated splits.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub spec: DatasetSpec,
    pub train: LabeledImageSet,
    pub val: LabeledImageSet,
    pub test: LabeledImageSet,
}

/// Item id layout: class in the high bits, global per-class index below.
fn item_id(class: usize, global_index: u64) -> u64 {
    ((class as u64) << 32) | global_index
}

/// Generates the train/val/test splits. Splits take disjoint per-class index
/// ranges, and items are interleaved round-robin over classes so any prefix of
/// a split is approximately class-balanced.
pub fn gen_dataset(spec: &DatasetSpec) -> Result<DatasetBundle> {
    spec.validate()?;
    let families: Vec<gen::ClassFamily> = (0..spec.class_count)
        .map(|c| gen::ClassFamily::derive(spec.seed, c, spec.class_count))
        .collect();

    let build_split = |per_class: usize, index_base: usize| -> LabeledImageSet {
        let n = per_class * spec.class_count;
        let (h, w) = (spec.height, spec.width);
        let item_len = 3 * h * w;
        // Round-robin interleave: item j is class j % K, per-class index j / K.
        let rendered: Vec<(Vec<f32>, u16, u64)> = (0..n)
            .into_par_iter()
            .map(|j| {
                let class = j % spec.class_count;
                let idx = index_base as u64 + (j / spec.class_count) as u64;
                let img = gen::render_item(&families[class], spec.seed, class, idx, h, w);
                (img, class as u16, item_id(class, idx))
            })
            .collect();
        let mut images = Vec::with_capacity(n * item_len);
        let mut labels = Vec::with_capacity(n);
        let mut ids = Vec::with_capacity(n);
        for (img, label, id) in rendered {
            images.extend_from_slice(&img);
            labels.push(label);
            ids.push(id);
        }
        LabeledImageSet {
            batch: Batch::new(images, spec.shape(), labels).expect("generator output is valid"),
            poison_mask: vec![false; n],
            origin: Origin::Clean,
            item_ids: ids,
        }
    };

    let train = build_split(spec.train_per_class, 0);
    let val = build_split(spec.val_per_class, spec.train_per_class);
    let test = build_split(
        spec.test_per_class,
        spec.train_per_class + spec.val_per_class,
    );
    Ok(DatasetBundle {
        spec: spec.clone(),
        train,
        val,
        test,
    })
}

const POISON_PICK_STREAM: u64 = 21;
const ITEM_SEED_STREAM: u64 = 22;

/// Per-item stamping seed, derived from an operation seed and the item id.
fn item_seed(op_seed: u64, id: u64) -> u64 {
    let mut rng = CounterRng::substream(op_seed, &[ITEM_SEED_STREAM, id]);
    rng.next_u64()
}

/// Nearest integer with ties to even; used for all poison/forget counts so
/// realized counts are auditable.
pub fn rounded_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).round_ties_even() as usize
}

/// Stamps `round(rate * n)` uniformly chosen items and relabels them to the
/// trigger's target. Every unchosen item is bit-identical to the input.
pub fn poison(
    ds: &LabeledImageSet,
    rate: f64,
    t: &TriggerSpec,
    seed: u64,
) -> Result<LabeledImageSet> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!("poison rate {rate} outside [0, 1]")));
    }
    t.validate(ds.batch.shape)?;
    let n = ds.len();
    let count = rounded_count(rate, n);
    let mut rng = CounterRng::substream(seed, &[POISON_PICK_STREAM]);
    let mut chosen = rng.sample_indices(n, count);
    chosen.sort_unstable();

    let mut out = ds.clone();
    out.origin = Origin::Poisoned {
        trigger: t.clone(),
        rate,
    };
    out.poison_mask = vec![false; n];
    let item_len = ds.batch.item_len();
    for &i in &chosen {
        let stamped = apply_trigger(
            ds.batch.image(i),
            ds.batch.shape,
            t,
            item_seed(seed, ds.item_ids[i]),
        )?;
        out.batch.images[i * item_len..(i + 1) * item_len].copy_from_slice(&stamped);
        out.batch.labels[i] = t.target_label;
        out.poison_mask[i] = true;
    }
    Ok(out)
}

/// Builds a forget set from the first `n` items of `ds`:
/// `round((1 - clean_ratio) * n)` items stamped and relabeled to the target,
/// the remainder kept clean with original labels.
///
/// `ds` must come from a split disjoint from the training split; the item ids
/// carried through let callers verify that.
pub fn build_forget_set(
    ds: &LabeledImageSet,
    n: usize,
    t: &TriggerSpec,
    clean_ratio: f64,
) -> Result<LabeledImageSet> {
    if n > ds.len() {
        return Err(Error::InvalidData(format!(
            "forget set of {n} requested from a set of {}",
            ds.len()
        )));
    }
    if !(0.0..1.0).contains(&clean_ratio) {
        return Err(Error::InvalidConfig(format!(
            "clean_ratio {clean_ratio} outside [0, 1)"
        )));
    }
    t.validate(ds.batch.shape)?;
    let triggered = rounded_count(1.0 - clean_ratio, n);
    let indices: Vec<usize> = (0..n).collect();
    let mut out = ds.select(&indices);
    out.origin = Origin::Forget {
        source: ForgetSource::Trigger(t.clone()),
        clean_ratio,
    };
    out.poison_mask = vec![false; n];
    let op_seed = match &t.kind {
        TriggerKind::Badnet { noise_seed, .. } => *noise_seed,
        TriggerKind::Blended { noise_seed, .. } => *noise_seed,
        TriggerKind::Wanet { warp_seed, .. } => *warp_seed,
        TriggerKind::Sig { .. } => 0,
    };
    let item_len = ds.batch.item_len();
    for i in 0..triggered {
        let stamped = apply_trigger(
            ds.batch.image(i),
            ds.batch.shape,
            t,
            item_seed(op_seed, out.item_ids[i]),
        )?;
        out.batch.images[i * item_len..(i + 1) * item_len].copy_from_slice(&stamped);
        out.batch.labels[i] = t.target_label;
        out.poison_mask[i] = true;
    }
    Ok(out)
}

/// Stamps every item of an evaluation set with the trigger, keeping original
/// labels (so ASR can exclude items whose true label is already the target).
pub fn stamp_eval_set(ds: &LabeledImageSet, t: &TriggerSpec, seed: u64) -> Result<LabeledImageSet> {
    t.validate(ds.batch.shape)?;
    let item_len = ds.batch.item_len();
    let mut out = ds.clone();
    out.origin = Origin::Triggered {
        trigger_hash: t.content_hash(),
    };
    let stamped: Vec<Vec<f32>> = (0..ds.len())
        .into_par_iter()
        .map(|i| {
            apply_trigger(
                ds.batch.image(i),
                ds.batch.shape,
                t,
                item_seed(seed, ds.item_ids[i]),
            )
            .expect("validated above")
        })
        .collect();
    for (i, img) in stamped.into_iter().enumerate() {
        out.batch.images[i * item_len..(i + 1) * item_len].copy_from_slice(&img);
        out.poison_mask[i] = true;
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
