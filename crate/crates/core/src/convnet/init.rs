//! Network construction from layer specs with seeded Gaussian init.

use super::{
    ConvLayer, DenseLayer, Layer, Network, Padding, PoolLayer, PoolMode,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Declarative layer description; [`init_network`] turns a spec chain into a
/// parameterized [`Network`], inferring every width from the input shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        filters: usize,
        /// Square kernel side; must be odd.
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    AveragePool {
        window: usize,
        stride: usize,
    },
    Dropout {
        rate: f64,
    },
    GlobalAveragePool,
    Flatten,
    Dense {
        units: usize,
        l2: f64,
    },
    Softmax,
}

/// Builds a network from `specs`, drawing conv kernels and dense weights
/// from N(0, (init_stddev / sqrt(fan_in))^2) in layer order from a
/// ChaCha8 stream seeded with `seed`; biases start at zero.
///
/// fan_in is K_h * K_w * C_in for conv layers and the input width for dense
/// layers. The same seed always yields the same parameters.
pub fn init_network(
    input_shape: [usize; 3],
    specs: &[LayerSpec],
    init_stddev: f64,
    seed: u64,
) -> Result<Network> {
    if !(init_stddev > 0.0) || !init_stddev.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "init_stddev must be positive and finite, got {}",
            init_stddev
        )));
    }
    if input_shape.contains(&0) {
        return Err(Error::InvalidShape(format!(
            "input shape dims must be >= 1, got {:?}",
            input_shape
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape = input_shape.to_vec();
    let mut layers = Vec::with_capacity(specs.len());
    for spec in specs {
        let layer = match *spec {
            LayerSpec::Conv {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let (_, _, c) = super::expect_rank3(&shape, "conv input")?;
                let fan_in = kernel * kernel * c;
                let kernels = gaussian(
                    &[filters, kernel, kernel, c],
                    init_stddev,
                    fan_in,
                    &mut rng,
                )?;
                Layer::Conv(ConvLayer::new(
                    kernels,
                    Tensor::zeros(&[filters])?,
                    stride,
                    padding,
                )?)
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::MaxPool { window, stride } => {
                Layer::Pool(PoolLayer::new((window, window), stride, PoolMode::Max)?)
            }
            LayerSpec::AveragePool { window, stride } => {
                Layer::Pool(PoolLayer::new((window, window), stride, PoolMode::Average)?)
            }
            LayerSpec::Dropout { rate } => Layer::Dropout { rate },
            LayerSpec::GlobalAveragePool => Layer::GlobalAveragePool,
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Dense { units, l2 } => {
                if shape.len() != 1 {
                    return Err(Error::InvalidArchitecture(format!(
                        "dense layer needs a rank-1 input, got {:?} (add flatten or global_average_pool first)",
                        shape
                    )));
                }
                let fan_in = shape[0];
                let weights = gaussian(&[units, fan_in], init_stddev, fan_in, &mut rng)?;
                Layer::Dense(DenseLayer::new(weights, Tensor::zeros(&[units])?, l2)?)
            }
            LayerSpec::Softmax => Layer::Softmax,
        };
        shape = layer.output_shape(&shape)?;
        layers.push(layer);
    }
    Network::new(input_shape, layers)
}

fn gaussian(
    shape: &[usize],
    init_stddev: f64,
    fan_in: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    if fan_in == 0 {
        return Err(Error::InvalidShape("fan_in must be >= 1".into()));
    }
    let stddev = init_stddev / (fan_in as f64).sqrt();
    let normal = Normal::new(0.0, stddev)
        .map_err(|e| Error::InvalidConfig(format!("bad init distribution: {}", e)))?;
    let len = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| normal.sample(rng)).collect();
    Tensor::from_vec(shape, data)
}

/// The stock classifier: two 3x3 valid conv/relu/max-pool stages (8 then 16
/// filters), dropout, global average pooling, dropout again, and a dense
/// softmax head with L2.
pub fn default_classifier_spec(class_count: usize, dropout_rate: f64, l2: f64) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv {
            filters: 8,
            kernel: 3,
            stride: 1,
            padding: Padding::Valid,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool { window: 2, stride: 2 },
        LayerSpec::Conv {
            filters: 16,
            kernel: 3,
            stride: 1,
            padding: Padding::Valid,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool { window: 2, stride: 2 },
        LayerSpec::Dropout { rate: dropout_rate },
        LayerSpec::GlobalAveragePool,
        LayerSpec::Dropout { rate: dropout_rate },
        LayerSpec::Dense {
            units: class_count,
            l2,
        },
        LayerSpec::Softmax,
    ]
}
