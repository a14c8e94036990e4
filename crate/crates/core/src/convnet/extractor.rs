//! Feature extraction from a trained classifier.

use super::{Layer, Network};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The layers of a classifier up to and including its first global-average-
/// pool layer, run in inference mode. Output is the rank-1 pooled feature
/// vector the classifier's head would have seen (dropout inactive).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    body: Network,
}

impl Network {
    /// Clones this network truncated after its first global-average-pool
    /// layer. Errors if the network has no such layer.
    pub fn truncate_at_gap(&self) -> Result<FeatureExtractor> {
        let gap_at = self
            .layers()
            .iter()
            .position(|l| matches!(l, Layer::GlobalAveragePool))
            .ok_or_else(|| {
                Error::InvalidArchitecture(
                    "network has no global average pool layer to truncate at".into(),
                )
            })?;
        let body = Network::new(
            self.input_shape(),
            self.layers()[..=gap_at].to_vec(),
        )?;
        Ok(FeatureExtractor { body })
    }
}

impl FeatureExtractor {
    pub fn input_shape(&self) -> [usize; 3] {
        self.body.input_shape()
    }

    /// Width of the feature vector this extractor produces.
    pub fn output_width(&self) -> usize {
        self.body.output_shape()[0]
    }

    /// Pooled feature vector for one image, inference mode.
    pub fn extract(&self, image: &Tensor) -> Result<Tensor> {
        self.body.infer(image)
    }
}
