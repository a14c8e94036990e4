//! Small convolutional classifier trained from scratch by backpropagation.
//!
//! Images are channels-last `[H, W, C]` tensors in f64. A network is a
//! validated chain of layers ending in a terminal softmax; training is
//! plain minibatch SGD on categorical cross-entropy with optional L2 on the
//! dense head. The trained network can be truncated after its
//! global-average-pool layer to serve as a fixed feature extractor.

mod backprop;
mod extractor;
mod init;
mod ops;
mod serialize;
mod train;

pub use backprop::{Cache, Gradients, ParamGrads};
pub use extractor::FeatureExtractor;
pub use init::{default_classifier_spec, init_network, LayerSpec};
pub use ops::{
    conv_forward, cross_entropy, dense_forward, dropout, global_average_pool, pool_forward,
    relu, softmax,
};
pub use serialize::{load_network, save_network};
pub use train::{evaluate, fit, EpochRecord, TrainHistory, HISTORY_CSV_HEADER};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Spatial padding mode for convolutions.
///
/// `Valid` applies no padding. `Same` zero-pads symmetrically by
/// `floor(K/2)` on each side, which preserves spatial size at stride 1 for
/// the odd kernels this crate requires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Valid,
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Max,
    Average,
}

/// 2-D convolution parameters. Kernels are stored `[F_out, K_h, K_w, F_in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub kernels: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvLayer {
    /// Validates kernel rank, odd kernel dims, bias width, and stride >= 1.
    pub fn new(kernels: Tensor, bias: Tensor, stride: usize, padding: Padding) -> Result<ConvLayer> {
        if kernels.rank() != 4 {
            return Err(Error::InvalidShape(format!(
                "conv kernels must be rank 4 [f_out, k_h, k_w, f_in], got {:?}",
                kernels.shape()
            )));
        }
        let (kh, kw) = (kernels.shape()[1], kernels.shape()[2]);
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::InvalidShape(format!(
                "kernel dims must be odd, got {}x{}",
                kh, kw
            )));
        }
        if bias.rank() != 1 || bias.shape()[0] != kernels.shape()[0] {
            return Err(Error::ShapeMismatch(format!(
                "conv bias {:?} must be rank 1 of length {}",
                bias.shape(),
                kernels.shape()[0]
            )));
        }
        if stride < 1 {
            return Err(Error::InvalidConfig("conv stride must be >= 1".into()));
        }
        Ok(ConvLayer {
            kernels,
            bias,
            stride,
            padding,
        })
    }

    pub fn filters(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[3]
    }

    /// Symmetric zero padding applied on each spatial side.
    pub fn pad(&self) -> (usize, usize) {
        match self.padding {
            Padding::Valid => (0, 0),
            Padding::Same => (self.kernels.shape()[1] / 2, self.kernels.shape()[2] / 2),
        }
    }

    /// Output spatial dims: floor((dim + 2*pad - K) / stride) + 1.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let (h, w, c) = expect_rank3(input, "conv input")?;
        if c != self.in_channels() {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} input channels, got {}",
                self.in_channels(),
                c
            )));
        }
        let (kh, kw) = (self.kernels.shape()[1], self.kernels.shape()[2]);
        let (ph, pw) = self.pad();
        let (hp, wp) = (h + 2 * ph, w + 2 * pw);
        if kh > hp || kw > wp {
            return Err(Error::InvalidGeometry(format!(
                "kernel {}x{} larger than padded input {}x{}",
                kh, kw, hp, wp
            )));
        }
        Ok(vec![
            (hp - kh) / self.stride + 1,
            (wp - kw) / self.stride + 1,
            self.filters(),
        ])
    }
}

/// 2-D pooling parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolLayer {
    pub window: (usize, usize),
    pub stride: usize,
    pub mode: PoolMode,
}

impl PoolLayer {
    pub fn new(window: (usize, usize), stride: usize, mode: PoolMode) -> Result<PoolLayer> {
        if window.0 < 1 || window.1 < 1 {
            return Err(Error::InvalidConfig("pool window dims must be >= 1".into()));
        }
        if stride < 1 {
            return Err(Error::InvalidConfig("pool stride must be >= 1".into()));
        }
        Ok(PoolLayer {
            window,
            stride,
            mode,
        })
    }

    /// Output spatial dims: floor((dim - window) / stride) + 1; trailing
    /// rows/columns that do not fill a window are dropped.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let (h, w, c) = expect_rank3(input, "pool input")?;
        if self.window.0 > h || self.window.1 > w {
            return Err(Error::InvalidGeometry(format!(
                "pool window {}x{} larger than input {}x{}",
                self.window.0, self.window.1, h, w
            )));
        }
        Ok(vec![
            (h - self.window.0) / self.stride + 1,
            (w - self.window.1) / self.stride + 1,
            c,
        ])
    }
}

/// Fully-connected layer; weights are `[units, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
    /// L2 penalty coefficient applied to both weights and bias; the loss
    /// gains l2 * (|W|^2 + |b|^2) and gradients gain 2 * l2 * parameter.
    pub l2: f64,
}

impl DenseLayer {
    pub fn new(weights: Tensor, bias: Tensor, l2: f64) -> Result<DenseLayer> {
        if weights.rank() != 2 {
            return Err(Error::InvalidShape(format!(
                "dense weights must be rank 2 [units, in], got {:?}",
                weights.shape()
            )));
        }
        if bias.rank() != 1 || bias.shape()[0] != weights.shape()[0] {
            return Err(Error::ShapeMismatch(format!(
                "dense bias {:?} must be rank 1 of length {}",
                bias.shape(),
                weights.shape()[0]
            )));
        }
        if !(l2 >= 0.0) || !l2.is_finite() {
            return Err(Error::InvalidConfig(format!("l2 must be >= 0, got {}", l2)));
        }
        Ok(DenseLayer { weights, bias, l2 })
    }

    pub fn units(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_features(&self) -> usize {
        self.weights.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    Relu,
    Pool(PoolLayer),
    /// Inverted dropout: surviving activations are scaled by 1/(1-rate)
    /// during training; identity at inference. 0 <= rate < 1.
    Dropout { rate: f64 },
    GlobalAveragePool,
    Flatten,
    Dense(DenseLayer),
    Softmax,
}

impl Layer {
    /// Shape this layer produces for the given input shape, or the error
    /// explaining why the input is unacceptable.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv(l) => l.output_shape(input),
            Layer::Relu => Ok(input.to_vec()),
            Layer::Pool(l) => l.output_shape(input),
            Layer::Dropout { rate } => {
                if !(*rate >= 0.0 && *rate < 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "dropout rate must be in [0, 1), got {}",
                        rate
                    )));
                }
                Ok(input.to_vec())
            }
            Layer::GlobalAveragePool => {
                let (_, _, c) = expect_rank3(input, "global average pool input")?;
                Ok(vec![c])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Dense(l) => {
                if input.len() != 1 || input[0] != l.in_features() {
                    return Err(Error::ShapeMismatch(format!(
                        "dense expects rank-1 input of {} features, got {:?}",
                        l.in_features(),
                        input
                    )));
                }
                Ok(vec![l.units()])
            }
            Layer::Softmax => {
                if input.len() != 1 || input[0] < 2 {
                    return Err(Error::InvalidArchitecture(format!(
                        "softmax needs a rank-1 input of width >= 2, got {:?}",
                        input
                    )));
                }
                Ok(input.to_vec())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Relu => "relu",
            Layer::Pool(_) => "pool",
            Layer::Dropout { .. } => "dropout",
            Layer::GlobalAveragePool => "global_average_pool",
            Layer::Flatten => "flatten",
            Layer::Dense(_) => "dense",
            Layer::Softmax => "softmax",
        }
    }
}

/// A validated feed-forward network over `[H, W, C]` images.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: [usize; 3],
    layers: Vec<Layer>,
}

impl Network {
    /// Chains every layer's shape from `input_shape`, rejecting mismatches,
    /// and requires softmax (if present) to be unique and terminal.
    pub fn new(input_shape: [usize; 3], layers: Vec<Layer>) -> Result<Network> {
        if input_shape.contains(&0) {
            return Err(Error::InvalidShape(format!(
                "input shape dims must be >= 1, got {:?}",
                input_shape
            )));
        }
        if layers.is_empty() {
            return Err(Error::InvalidArchitecture("network needs at least one layer".into()));
        }
        let mut shape = input_shape.to_vec();
        for (i, layer) in layers.iter().enumerate() {
            if matches!(layer, Layer::Softmax) && i + 1 != layers.len() {
                return Err(Error::InvalidArchitecture(format!(
                    "softmax must be the terminal layer, found at index {}",
                    i
                )));
            }
            shape = layer.output_shape(&shape).map_err(|e| {
                Error::InvalidArchitecture(format!("layer {} ({}): {}", i, layer.name(), e))
            })?;
        }
        Ok(Network {
            input_shape,
            layers,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Shape of the final layer's output.
    pub fn output_shape(&self) -> Vec<usize> {
        let mut shape = self.input_shape.to_vec();
        for layer in &self.layers {
            // Shapes were validated at construction.
            shape = layer.output_shape(&shape).expect("validated at construction");
        }
        shape
    }

    /// Class count of a classifier (width of the terminal softmax).
    pub fn class_count(&self) -> Result<usize> {
        match self.layers.last() {
            Some(Layer::Softmax) => Ok(self.output_shape()[0]),
            _ => Err(Error::InvalidArchitecture(
                "network does not end in softmax".into(),
            )),
        }
    }

    /// Total number of trainable parameters.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => c.kernels.len() + c.bias.len(),
                Layer::Dense(d) => d.weights.len() + d.bias.len(),
                _ => 0,
            })
            .sum()
    }
}

/// SGD hyperparameters for [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Fixed SGD step size.
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weights draw from N(0, (init_stddev / sqrt(fan_in))^2); biases are 0.
    pub init_stddev: f64,
    /// Seeds initialization, shuffling, and dropout masks.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 25,
            batch_size: 2,
            init_stddev: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.init_stddev > 0.0) || !self.init_stddev.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "init_stddev must be positive and finite, got {}",
                self.init_stddev
            )));
        }
        Ok(())
    }
}

pub(crate) fn expect_rank3(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    if shape.len() != 3 {
        return Err(Error::InvalidShape(format!(
            "{} must be rank 3 [h, w, c], got {:?}",
            what, shape
        )));
    }
    Ok((shape[0], shape[1], shape[2]))
}

/// Index of the greatest element; ties break to the lowest index.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..xs.len() {
        if xs[i] > xs[best] {
            best = i;
        }
    }
    best
}
