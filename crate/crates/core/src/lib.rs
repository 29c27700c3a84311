//! Desk-scale workbench for studying image-classification backdoors in weight space.
//!
//! The crate implants backdoors into a small CNN by data poisoning, estimates the
//! weight-space direction that encodes the trigger by fine-tuning on a forget set,
//! and removes the backdoor by negating that direction. Everything is seeded and
//! bit-deterministic: reruns with the same config produce byte-identical artifacts,
//! independent of thread count.
//!
//! Module map:
//! - [`nn`] — feed-forward network (conv + dense) with exact reverse-mode gradients
//!   and flat-vector parameter views.
//! - [`data`] — procedural dataset generation, trigger stamping, poisoning, and
//!   forget-set construction.
//! - [`train`] — deterministic training loops: pretraining, backdoor implantation,
//!   trigger-vector estimation, gradient ascent, clean fine-tuning.
//! - [`arith`] — task-vector algebra: extraction, scaled application, negation,
//!   scaling-coefficient search, merging, and the disentanglement-error grid.
//! - [`inverse`] — trigger reverse-engineering: minimal (mask, pattern) optimization,
//!   infection detection, target-class identification, proxy forget sets.
//! - [`bench`] — CA/ASR evaluation, experiment recipes, and report emission.

pub mod arith;
pub mod bench;
pub(crate) mod container;
pub mod data;
pub mod error;
pub mod hash;
pub mod inverse;
pub mod nn;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
