//! Network persistence: a JSON descriptor next to a little-endian f64 blob.
//!
//! The descriptor records architecture, hyperparameters, and the byte span
//! of every parameter tensor; the blob holds the raw values. Loading
//! re-validates everything the constructors validate, so a tampered pair is
//! rejected rather than half-trusted.

use super::{ConvLayer, DenseLayer, Layer, Network, Padding, PoolLayer, PoolMode, TrainConfig};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDescriptor {
    format_version: u32,
    input_shape: [usize; 3],
    hyperparameters: TrainConfig,
    layers: Vec<LayerDescriptor>,
}

/// Span of one tensor inside the blob.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRef {
    shape: Vec<usize>,
    byte_offset: usize,
    byte_len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case", deny_unknown_fields)]
enum LayerDescriptor {
    Conv {
        stride: usize,
        padding: Padding,
        kernels: TensorRef,
        bias: TensorRef,
    },
    Relu,
    Pool {
        window: [usize; 2],
        stride: usize,
        mode: PoolMode,
    },
    Dropout {
        rate: f64,
    },
    GlobalAveragePool,
    Flatten,
    Dense {
        l2: f64,
        weights: TensorRef,
        bias: TensorRef,
    },
    Softmax,
}

/// Saves `net` as `json_path` (descriptor) plus `bin_path` (parameter blob).
/// Both writes are atomic; the same network and config always produce
/// byte-identical files.
pub fn save_network(
    net: &Network,
    cfg: &TrainConfig,
    json_path: &Path,
    bin_path: &Path,
) -> Result<()> {
    let mut blob = Vec::new();
    let mut layers = Vec::with_capacity(net.layers().len());
    for layer in net.layers() {
        layers.push(match layer {
            Layer::Conv(l) => LayerDescriptor::Conv {
                stride: l.stride,
                padding: l.padding,
                kernels: push_tensor(&mut blob, &l.kernels),
                bias: push_tensor(&mut blob, &l.bias),
            },
            Layer::Relu => LayerDescriptor::Relu,
            Layer::Pool(l) => LayerDescriptor::Pool {
                window: [l.window.0, l.window.1],
                stride: l.stride,
                mode: l.mode,
            },
            Layer::Dropout { rate } => LayerDescriptor::Dropout { rate: *rate },
            Layer::GlobalAveragePool => LayerDescriptor::GlobalAveragePool,
            Layer::Flatten => LayerDescriptor::Flatten,
            Layer::Dense(l) => LayerDescriptor::Dense {
                l2: l.l2,
                weights: push_tensor(&mut blob, &l.weights),
                bias: push_tensor(&mut blob, &l.bias),
            },
            Layer::Softmax => LayerDescriptor::Softmax,
        });
    }
    let descriptor = NetworkDescriptor {
        format_version: FORMAT_VERSION,
        input_shape: net.input_shape(),
        hyperparameters: cfg.clone(),
        layers,
    };
    let mut json = serde_json::to_string_pretty(&descriptor)
        .map_err(|e| Error::Serialize(format!("network descriptor: {}", e)))?;
    json.push('\n');
    write_atomic(bin_path, &blob)?;
    write_atomic(json_path, json.as_bytes())?;
    Ok(())
}

/// Loads a network saved by [`save_network`], re-validating the descriptor,
/// the blob bounds, and the reconstructed architecture.
pub fn load_network(json_path: &Path, bin_path: &Path) -> Result<(Network, TrainConfig)> {
    let json = fs::read_to_string(json_path)?;
    let descriptor: NetworkDescriptor = serde_json::from_str(&json)
        .map_err(|e| Error::Load(format!("{}: {}", json_path.display(), e)))?;
    if descriptor.format_version != FORMAT_VERSION {
        return Err(Error::Load(format!(
            "{}: unsupported format version {}",
            json_path.display(),
            descriptor.format_version
        )));
    }
    descriptor.hyperparameters.validate()?;
    let blob = fs::read(bin_path)?;

    let mut referenced = 0usize;
    let mut layers = Vec::with_capacity(descriptor.layers.len());
    for (i, ld) in descriptor.layers.iter().enumerate() {
        let layer = build_layer(ld, &blob, &mut referenced)
            .map_err(|e| Error::Load(format!("{}: layer {}: {}", json_path.display(), i, e)))?;
        layers.push(layer);
    }
    if referenced != blob.len() {
        return Err(Error::Load(format!(
            "{}: descriptor references {} parameter bytes but blob has {}",
            bin_path.display(),
            referenced,
            blob.len()
        )));
    }
    let net = Network::new(descriptor.input_shape, layers).map_err(|e| {
        Error::Load(format!(
            "{}: descriptor describes an invalid network: {}",
            json_path.display(),
            e
        ))
    })?;
    Ok((net, descriptor.hyperparameters))
}

fn push_tensor(blob: &mut Vec<u8>, t: &Tensor) -> TensorRef {
    let byte_offset = blob.len();
    for v in t.data() {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    TensorRef {
        shape: t.shape().to_vec(),
        byte_offset,
        byte_len: t.len() * 8,
    }
}

fn build_layer(ld: &LayerDescriptor, blob: &[u8], referenced: &mut usize) -> Result<Layer> {
    Ok(match ld {
        LayerDescriptor::Conv {
            stride,
            padding,
            kernels,
            bias,
        } => Layer::Conv(ConvLayer::new(
            read_tensor(blob, kernels, referenced)?,
            read_tensor(blob, bias, referenced)?,
            *stride,
            *padding,
        )?),
        LayerDescriptor::Relu => Layer::Relu,
        LayerDescriptor::Pool {
            window,
            stride,
            mode,
        } => Layer::Pool(PoolLayer::new((window[0], window[1]), *stride, *mode)?),
        LayerDescriptor::Dropout { rate } => Layer::Dropout { rate: *rate },
        LayerDescriptor::GlobalAveragePool => Layer::GlobalAveragePool,
        LayerDescriptor::Flatten => Layer::Flatten,
        LayerDescriptor::Dense { l2, weights, bias } => Layer::Dense(DenseLayer::new(
            read_tensor(blob, weights, referenced)?,
            read_tensor(blob, bias, referenced)?,
            *l2,
        )?),
        LayerDescriptor::Softmax => Layer::Softmax,
    })
}

fn read_tensor(blob: &[u8], r: &TensorRef, referenced: &mut usize) -> Result<Tensor> {
    let elems = r
        .shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Load("tensor shape overflows".into()))?;
    let expected_len = elems
        .checked_mul(8)
        .ok_or_else(|| Error::Load("tensor byte length overflows".into()))?;
    if r.byte_len != expected_len {
        return Err(Error::Load(format!(
            "tensor ref byte_len {} does not match shape {:?} ({} bytes)",
            r.byte_len, r.shape, expected_len
        )));
    }
    let end = r
        .byte_offset
        .checked_add(r.byte_len)
        .filter(|&end| end <= blob.len())
        .ok_or_else(|| {
            Error::Load(format!(
                "tensor ref [{}, {}) exceeds blob of {} bytes",
                r.byte_offset,
                r.byte_offset as u128 + r.byte_len as u128,
                blob.len()
            ))
        })?;
    let data: Vec<f64> = blob[r.byte_offset..end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks_exact(8)")))
        .collect();
    *referenced += r.byte_len;
    Tensor::from_vec(&r.shape, data)
        .map_err(|e| Error::Load(format!("tensor at byte {}: {}", r.byte_offset, e)))
}
