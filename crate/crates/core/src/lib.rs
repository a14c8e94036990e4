//! Hybrid CNN + gradient-boosted-tree image classification.
//!
//! A small convolutional network is trained by backpropagation, then truncated
//! after its global-average-pool layer and reused as a fixed feature extractor
//! feeding a second-order gradient-boosted decision-tree ensemble. The crate
//! also ships the data plumbing (PGM datasets, synthesis, preprocessing,
//! augmentation, stratified splits), multiclass evaluation metrics, and an
//! orchestration pipeline that trains both classifiers on one split and emits
//! a paired comparison report.
//!
//! Everything is deterministic: a fixed seed reproduces every artifact byte
//! for byte, regardless of thread count.

pub mod convnet;
pub mod dataio;
pub mod error;
pub mod fsutil;
pub mod gbt;
pub mod metrics;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
