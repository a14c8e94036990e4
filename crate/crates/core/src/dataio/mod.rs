//! Dataset plumbing: PGM images with a CSV manifest, synthesis for
//! desk-scale runs, preprocessing, augmentation, and stratified splitting.
//!
//! Raw pixels live in the [0, 255] grayscale domain as rank-2 `[H, W]`
//! tensors; [`preprocess`] converts them to the standardized `[S, S, 3]`
//! tensors the network consumes. Every operation here is a deterministic
//! function of its inputs and seed.

mod augment;
mod manifest;
mod pgm;
mod preprocess;
mod split;
mod synth;

pub use augment::{augment, AugmentConfig};
pub use manifest::{load_dataset, save_dataset, save_features_csv, MANIFEST_NAME};
pub use pgm::{read_pgm, write_pgm};
pub use preprocess::preprocess;
pub use split::{to_one_hot, train_test_split};
pub use synth::synthesize_dataset;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::collections::HashSet;

/// One grayscale image with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    id: String,
    pixels: Tensor,
    label: usize,
}

impl ImageSample {
    /// Validates that `pixels` is rank 2 with every value in [0, 255].
    /// Values may be fractional (augmentation interpolates); they are
    /// quantized only when written as PGM.
    pub fn new(id: String, pixels: Tensor, label: usize) -> Result<ImageSample> {
        if id.is_empty() {
            return Err(Error::InvalidData("sample id must be non-empty".into()));
        }
        if pixels.rank() != 2 {
            return Err(Error::InvalidShape(format!(
                "sample pixels must be rank 2 [h, w], got {:?}",
                pixels.shape()
            )));
        }
        if let Some(v) = pixels
            .data()
            .iter()
            .find(|v| !(0.0..=255.0).contains(*v))
        {
            return Err(Error::InvalidData(format!(
                "sample {:?} has pixel {} outside [0, 255]",
                id, v
            )));
        }
        Ok(ImageSample { id, pixels, label })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn label(&self) -> usize {
        self.label
    }

    /// (height, width).
    pub fn dims(&self) -> (usize, usize) {
        (self.pixels.shape()[0], self.pixels.shape()[1])
    }
}

/// An ordered collection of samples plus the class-name table their labels
/// index. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<ImageSample>,
    class_names: Vec<String>,
}

impl Dataset {
    /// Validates that class names are non-empty and unique, labels index
    /// them, and sample ids are unique.
    pub fn new(samples: Vec<ImageSample>, class_names: Vec<String>) -> Result<Dataset> {
        if class_names.is_empty() {
            return Err(Error::InvalidData("class name list is empty".into()));
        }
        let mut seen = HashSet::new();
        for name in &class_names {
            if name.is_empty() {
                return Err(Error::InvalidData("class names must be non-empty".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidData(format!("duplicate class name {:?}", name)));
            }
        }
        let mut ids = HashSet::new();
        for s in &samples {
            if s.label >= class_names.len() {
                return Err(Error::InvalidLabel(format!(
                    "sample {:?} has label {} but there are {} classes",
                    s.id,
                    s.label,
                    class_names.len()
                )));
            }
            if !ids.insert(s.id.as_str()) {
                return Err(Error::InvalidData(format!("duplicate sample id {:?}", s.id)));
            }
        }
        Ok(Dataset {
            samples,
            class_names,
        })
    }

    pub fn samples(&self) -> &[ImageSample] {
        &self.samples
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample count per class, indexed by label.
    pub fn per_class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Sample indices grouped by label, each group in dataset order.
    pub(crate) fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.class_names.len()];
        for (i, s) in self.samples.iter().enumerate() {
            by_class[s.label].push(i);
        }
        by_class
    }

    /// New dataset keeping `indices` in the given order, same class table.
    pub(crate) fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            class_names: self.class_names.clone(),
        }
    }
}
