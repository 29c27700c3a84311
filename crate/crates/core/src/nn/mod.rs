//! Minimal feed-forward network with exact reverse-mode gradients.
//!
//! Weights live in a single flat `f32` vector ([`WeightVector`]) with a
//! [`Layout`] mapping offsets back to per-layer tensors, so weight-space
//! arithmetic elsewhere in the crate is plain elementwise vector math.
//!
//! The compute kernels are generic over [`Real`] (`f32` for production,
//! `f64` for oracle-grade gradient checks); both instantiations share one
//! code path.

mod engine;
mod io;
mod plan;
mod scalar;

pub use engine::{
    embed, embed_captured, forward, grad_from_embedding, input_grad_cross_entropy, loss_and_grad,
    loss_and_grad_f64, loss_f64, BatchCapture,
};
pub(crate) use engine::loss_grad_counts;
pub use io::{load_weights, save_weights};
pub use plan::Plan;
pub use scalar::Real;

use crate::error::{Error, Result};
use crate::hash::sha256_f32s;
use crate::rng::CounterRng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Layer descriptor in a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        kernel: usize,
    },
    Flatten,
    Dense {
        out_features: usize,
    },
}

/// Architecture + init seed. Two equal specs initialize bit-identically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// (channels, height, width)
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    pub class_count: usize,
    pub seed: u64,
}

impl ModelSpec {
    /// The reference desk architecture: two conv/pool stages and a two-layer head.
    /// Small enough for minutes-scale CPU training, spatial enough for patch and
    /// warp triggers.
    pub fn desk_cnn(class_count: usize, seed: u64) -> Self {
        Self::desk_cnn_for((3, 32, 32), class_count, seed)
    }

    /// The desk architecture over an arbitrary input shape (sides must survive
    /// two 2x poolings).
    pub fn desk_cnn_for(input_shape: (usize, usize, usize), class_count: usize, seed: u64) -> Self {
        ModelSpec {
            input_shape,
            layers: vec![
                LayerSpec::Conv {
                    out_channels: 8,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool { kernel: 2 },
                LayerSpec::Conv {
                    out_channels: 16,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool { kernel: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { out_features: 64 },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    out_features: class_count,
                },
            ],
            class_count,
            seed,
        }
    }

    pub fn plan(&self) -> Result<Plan> {
        Plan::from_spec(self)
    }
}

/// One named tensor inside the flat weight vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered list of layout entries covering `[0, total_len)` without overlap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub entries: Vec<LayoutEntry>,
    pub total_len: usize,
}

impl Layout {
    /// Validates the covering invariant: offsets are consecutive and sum to total_len.
    pub fn validate(&self) -> Result<()> {
        let mut cursor = 0usize;
        for e in &self.entries {
            if e.offset != cursor {
                return Err(Error::LayoutMismatch(format!(
                    "entry '{}' at offset {} but expected {}",
                    e.name, e.offset, cursor
                )));
            }
            cursor += e.len();
        }
        if cursor != self.total_len {
            return Err(Error::LayoutMismatch(format!(
                "entries cover {} values but total_len is {}",
                cursor, self.total_len
            )));
        }
        Ok(())
    }
}

/// Flat parameter vector plus the layout mapping back to layer tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub values: Vec<f32>,
    pub layout: Arc<Layout>,
}

impl WeightVector {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        WeightVector {
            values: vec![0.0; layout.total_len],
            layout,
        }
    }

    pub fn total_len(&self) -> usize {
        self.layout.total_len
    }

    /// Unflattened view: one `(name, shape, values)` triple per layer tensor.
    pub fn tensors(&self) -> Vec<(&str, &[usize], &[f32])> {
        self.layout
            .entries
            .iter()
            .map(|e| {
                (
                    e.name.as_str(),
                    e.shape.as_slice(),
                    &self.values[e.offset..e.offset + e.len()],
                )
            })
            .collect()
    }

    /// Rebuilds the flat vector from per-tensor slices (inverse of [`tensors`]).
    ///
    /// [`tensors`]: WeightVector::tensors
    pub fn from_tensors(layout: Arc<Layout>, tensors: &[(&str, &[f32])]) -> Result<Self> {
        if tensors.len() != layout.entries.len() {
            return Err(Error::LayoutMismatch(format!(
                "got {} tensors for a layout with {} entries",
                tensors.len(),
                layout.entries.len()
            )));
        }
        let mut values = vec![0.0f32; layout.total_len];
        for (e, (name, data)) in layout.entries.iter().zip(tensors) {
            if e.name != *name || e.len() != data.len() {
                return Err(Error::LayoutMismatch(format!(
                    "tensor '{}' (len {}) does not match entry '{}' (len {})",
                    name,
                    data.len(),
                    e.name,
                    e.len()
                )));
            }
            values[e.offset..e.offset + e.len()].copy_from_slice(data);
        }
        Ok(WeightVector {
            values,
            layout,
        })
    }

    /// SHA-256 over the little-endian byte image of the values.
    pub fn content_hash(&self) -> String {
        sha256_f32s(&self.values)
    }

    pub fn same_layout(&self, other: &Layout) -> bool {
        self.layout.as_ref() == other
    }
}

/// A batch of images with class labels. Pixels are `f32` in [0, 1], NCHW order.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Vec<f32>,
    /// (channels, height, width) of every image.
    pub shape: (usize, usize, usize),
    pub labels: Vec<u16>,
}

impl Batch {
    pub fn new(images: Vec<f32>, shape: (usize, usize, usize), labels: Vec<u16>) -> Result<Self> {
        let (c, h, w) = shape;
        let item_len = c * h * w;
        if labels.is_empty() {
            return Err(Error::InvalidData("batch must contain at least one item".into()));
        }
        if item_len == 0 || images.len() != labels.len() * item_len {
            return Err(Error::InvalidData(format!(
                "image buffer has {} values, expected {} items x {} values",
                images.len(),
                labels.len(),
                item_len
            )));
        }
        if let Some(bad) = images.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidData(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Batch {
            images,
            shape,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn item_len(&self) -> usize {
        let (c, h, w) = self.shape;
        c * h * w
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let len = self.item_len();
        &self.images[i * len..(i + 1) * len]
    }

    /// Copies a subset of items in the given index order.
    pub fn select(&self, indices: &[usize]) -> Batch {
        let len = self.item_len();
        let mut images = Vec::with_capacity(indices.len() * len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Batch {
            images,
            shape: self.shape,
            labels,
        }
    }
}

const INIT_STREAM_TAG: u64 = 0x494e_4954; // "INIT"

/// Initializes weights from a fan-in-scaled uniform distribution.
///
/// Each parameter tensor draws from its own counter stream keyed by
/// `(spec.seed, layer index)`, so initialization is reproducible and
/// independent of evaluation order. Biases start at zero.
pub fn init(spec: &ModelSpec) -> Result<WeightVector> {
    let plan = spec.plan()?;
    let layout = plan.layout();
    let mut values = vec![0.0f32; layout.total_len];
    for (idx, entry) in layout.entries.iter().enumerate() {
        if entry.name.ends_with(".bias") {
            continue;
        }
        let fan_in = plan.fan_in_of(&entry.name).expect("weight entry has fan-in");
        let bound = (1.0 / fan_in as f64).sqrt() as f32;
        let mut rng = CounterRng::substream(spec.seed, &[INIT_STREAM_TAG, idx as u64]);
        for v in &mut values[entry.offset..entry.offset + entry.len()] {
            *v = rng.uniform_f32(-bound, bound);
        }
    }
    Ok(WeightVector {
        values,
        layout,
    })
}

#[cfg(test)]
mod tests;
