//! Forward pass with cache, reverse-mode gradients, and the SGD update.

use super::ops::{
    conv_forward, dense_forward, dropout_masked, global_average_pool, one_hot_label, pad_spatial,
    pool_forward_cached, relu, softmax,
};
use super::{ConvLayer, Layer, Network, PoolMode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;

/// Everything the backward pass needs from one forward pass: the input
/// handed to each layer plus per-layer bookkeeping (dropout masks, max-pool
/// argmax offsets) and the final output.
#[derive(Debug, Clone)]
pub struct Cache {
    training: bool,
    inputs: Vec<Tensor>,
    extras: Vec<Extra>,
    output: Tensor,
}

#[derive(Debug, Clone)]
enum Extra {
    None,
    /// Dropout mask, entries 0 or 1/(1-rate); empty when identity.
    Mask(Vec<f64>),
    /// Flat input offset of each pooled maximum.
    ArgMax(Vec<usize>),
}

impl Cache {
    /// Final network output recorded by the forward pass.
    pub fn output(&self) -> &Tensor {
        &self.output
    }

    /// Input that was handed to layer `i`; `layer_input(0)` is the image.
    pub fn layer_input(&self, i: usize) -> &Tensor {
        &self.inputs[i]
    }

    pub fn is_training(&self) -> bool {
        self.training
    }
}

/// Gradients of the regularized single-sample loss with respect to every
/// trainable parameter, index-aligned with the network's layers.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Option<ParamGrads>>,
}

/// Gradient pair for one parameterized layer (conv kernels or dense weights,
/// plus the bias).
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl Gradients {
    /// Accumulates `other` into `self` elementwise. Layouts must match.
    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient layouts differ: {} vs {} layers",
                self.layers.len(),
                other.layers.len()
            )));
        }
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            match (mine, theirs) {
                (None, None) => {}
                (Some(a), Some(b)) => {
                    a.weights = a.weights.add(&b.weights)?;
                    a.bias = a.bias.add(&b.bias)?;
                }
                _ => {
                    return Err(Error::ShapeMismatch(
                        "gradient layouts differ in parameterized layers".into(),
                    ))
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.layers.iter_mut().flatten() {
            g.weights = g.weights.scale(k);
            g.bias = g.bias.scale(k);
        }
    }
}

impl Network {
    /// Runs the network on one image.
    ///
    /// `rng: Some(_)` selects training mode (dropout active, cache usable by
    /// [`Network::backward`]); `None` selects inference mode where dropout is
    /// the identity.
    pub fn forward(&self, image: &Tensor, mut rng: Option<&mut ChaCha8Rng>) -> Result<(Tensor, Cache)> {
        if image.shape() != self.input_shape() {
            return Err(Error::ShapeMismatch(format!(
                "network expects input {:?}, got {:?}",
                self.input_shape(),
                image.shape()
            )));
        }
        let training = rng.is_some();
        let mut inputs = Vec::with_capacity(self.layers().len());
        let mut extras = Vec::with_capacity(self.layers().len());
        let mut current = image.clone();
        for layer in self.layers() {
            inputs.push(current.clone());
            let mut extra = Extra::None;
            current = match layer {
                Layer::Conv(l) => conv_forward(&current, l)?,
                Layer::Relu => relu(&current),
                Layer::Pool(l) => {
                    let (out, arg) = pool_forward_cached(&current, l)?;
                    if matches!(l.mode, PoolMode::Max) {
                        extra = Extra::ArgMax(arg);
                    }
                    out
                }
                Layer::Dropout { rate } => match rng.as_deref_mut() {
                    Some(r) => {
                        let (out, mask) = dropout_masked(&current, *rate, r, true)?;
                        if !mask.is_empty() {
                            extra = Extra::Mask(mask);
                        }
                        out
                    }
                    None => current,
                },
                Layer::GlobalAveragePool => global_average_pool(&current)?,
                Layer::Flatten => current.reshape(&[current.len()])?,
                Layer::Dense(l) => dense_forward(&current, l)?,
                Layer::Softmax => softmax(&current)?,
            };
            extras.push(extra);
        }
        current.check_finite("network output")?;
        Ok((
            current.clone(),
            Cache {
                training,
                inputs,
                extras,
                output: current,
            },
        ))
    }

    /// Inference-mode probabilities for one image.
    pub fn infer(&self, image: &Tensor) -> Result<Tensor> {
        Ok(self.forward(image, None)?.0)
    }

    /// Gradients of the single-sample regularized loss
    /// `cross_entropy(probs, one_hot) + sum_dense l2 * (|W|^2 + |b|^2)`
    /// via reverse-mode accumulation.
    ///
    /// Requires a cache from a training-mode forward on a network whose
    /// terminal layer is softmax; the softmax/cross-entropy pair collapses to
    /// the initial delta `probs - one_hot` at the logits.
    pub fn backward(&self, cache: &Cache, one_hot: &Tensor) -> Result<Gradients> {
        if !cache.training {
            return Err(Error::InvalidState(
                "backward needs a cache from a training-mode forward".into(),
            ));
        }
        if cache.inputs.len() != self.layers().len() {
            return Err(Error::InvalidState(
                "cache does not match this network's layer count".into(),
            ));
        }
        if !matches!(self.layers().last(), Some(Layer::Softmax)) {
            return Err(Error::InvalidArchitecture(
                "backward requires a terminal softmax layer".into(),
            ));
        }
        one_hot_label(one_hot)?;
        let mut delta = cache.output.sub(one_hot).map_err(|_| {
            Error::ShapeMismatch(format!(
                "one-hot width {:?} does not match output {:?}",
                one_hot.shape(),
                cache.output.shape()
            ))
        })?;

        let mut grads: Vec<Option<ParamGrads>> = vec![None; self.layers().len()];
        // Softmax itself contributed the initial delta; walk the rest.
        for i in (0..self.layers().len() - 1).rev() {
            let input = &cache.inputs[i];
            match &self.layers()[i] {
                Layer::Conv(l) => {
                    let (d_in, pg) = conv_backward(input, l, &delta)?;
                    grads[i] = Some(pg);
                    delta = d_in;
                }
                Layer::Relu => {
                    delta = input.zip_gate(&delta)?;
                }
                Layer::Pool(l) => {
                    let mut d_in = Tensor::zeros(input.shape())?;
                    match (&l.mode, &cache.extras[i]) {
                        (PoolMode::Max, Extra::ArgMax(arg)) => {
                            let dd = d_in.data_mut();
                            for (o, &at) in arg.iter().enumerate() {
                                dd[at] += delta.data()[o];
                            }
                        }
                        (PoolMode::Average, _) => {
                            let (oh, ow, c) = (
                                delta.shape()[0],
                                delta.shape()[1],
                                delta.shape()[2],
                            );
                            let w = input.shape()[1];
                            let (wh, ww) = l.window;
                            let share = 1.0 / (wh * ww) as f64;
                            let dd = d_in.data_mut();
                            for m in 0..oh {
                                for n in 0..ow {
                                    for ch in 0..c {
                                        let d = delta.data()[(m * ow + n) * c + ch] * share;
                                        for u in 0..wh {
                                            for v in 0..ww {
                                                dd[((m * l.stride + u) * w
                                                    + (n * l.stride + v))
                                                    * c
                                                    + ch] += d;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                        (PoolMode::Max, _) => {
                            return Err(Error::InvalidState(
                                "cache missing max-pool argmax data".into(),
                            ))
                        }
                    }
                    delta = d_in;
                }
                Layer::Dropout { .. } => {
                    if let Extra::Mask(mask) = &cache.extras[i] {
                        let data: Vec<f64> = delta
                            .data()
                            .iter()
                            .zip(mask)
                            .map(|(&d, &m)| d * m)
                            .collect();
                        delta = Tensor::from_vec(delta.shape(), data)?;
                    }
                }
                Layer::GlobalAveragePool => {
                    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
                    let share = 1.0 / (h * w) as f64;
                    let mut d_in = Tensor::zeros(input.shape())?;
                    let dd = d_in.data_mut();
                    for m in 0..h {
                        for n in 0..w {
                            let base = (m * w + n) * c;
                            for ch in 0..c {
                                dd[base + ch] = delta.data()[ch] * share;
                            }
                        }
                    }
                    delta = d_in;
                }
                Layer::Flatten => {
                    delta = delta.reshape(input.shape())?;
                }
                Layer::Dense(l) => {
                    let (units, inf) = (l.units(), l.in_features());
                    let mut dw = vec![0.0; units * inf];
                    let mut db = vec![0.0; units];
                    let mut d_in = vec![0.0; inf];
                    let wd = l.weights.data();
                    for u in 0..units {
                        let d = delta.data()[u];
                        db[u] = d + 2.0 * l.l2 * l.bias.data()[u];
                        for j in 0..inf {
                            dw[u * inf + j] = d * input.data()[j] + 2.0 * l.l2 * wd[u * inf + j];
                            d_in[j] += d * wd[u * inf + j];
                        }
                    }
                    grads[i] = Some(ParamGrads {
                        weights: Tensor::from_vec(&[units, inf], dw)?,
                        bias: Tensor::from_vec(&[units], db)?,
                    });
                    delta = Tensor::from_vec(&[inf], d_in)?;
                }
                Layer::Softmax => {
                    return Err(Error::InvalidArchitecture(
                        "softmax must be the terminal layer".into(),
                    ))
                }
            }
        }
        Ok(Gradients { layers: grads })
    }

    /// One SGD step: parameter -= learning_rate * gradient.
    pub fn sgd_step(&mut self, grads: &Gradients, learning_rate: f64) -> Result<()> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive and finite, got {}",
                learning_rate
            )));
        }
        if grads.layers.len() != self.layers().len() {
            return Err(Error::ShapeMismatch(
                "gradients do not match this network's layer count".into(),
            ));
        }
        for (layer, grad) in self.layers_mut().iter_mut().zip(&grads.layers) {
            match (layer, grad) {
                (Layer::Conv(l), Some(g)) => {
                    l.kernels = l.kernels.sub(&g.weights.scale(learning_rate))?;
                    l.bias = l.bias.sub(&g.bias.scale(learning_rate))?;
                }
                (Layer::Dense(l), Some(g)) => {
                    l.weights = l.weights.sub(&g.weights.scale(learning_rate))?;
                    l.bias = l.bias.sub(&g.bias.scale(learning_rate))?;
                }
                (Layer::Conv(_), None) | (Layer::Dense(_), None) => {
                    return Err(Error::ShapeMismatch(
                        "missing gradient for a parameterized layer".into(),
                    ))
                }
                (_, Some(_)) => {
                    return Err(Error::ShapeMismatch(
                        "gradient present for a parameterless layer".into(),
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

impl Tensor {
    /// delta * 1[input > 0], the ReLU gate. Zero subgradient at exactly 0.
    fn zip_gate(&self, delta: &Tensor) -> Result<Tensor> {
        if self.shape() != delta.shape() {
            return Err(Error::ShapeMismatch("relu gate shape mismatch".into()));
        }
        let data = self
            .data()
            .iter()
            .zip(delta.data())
            .map(|(&x, &d)| if x > 0.0 { d } else { 0.0 })
            .collect();
        Tensor::from_vec(self.shape(), data)
    }
}

/// Conv gradients: bias sums the deltas per filter, kernel gradients
/// correlate deltas with the padded input, and the input delta scatters
/// kernel-weighted deltas back (padding region cropped off afterwards).
fn conv_backward(input: &Tensor, layer: &ConvLayer, delta: &Tensor) -> Result<(Tensor, ParamGrads)> {
    let out_shape = layer.output_shape(input.shape())?;
    if delta.shape() != out_shape {
        return Err(Error::ShapeMismatch(format!(
            "conv delta {:?} does not match output shape {:?}",
            delta.shape(),
            out_shape
        )));
    }
    let (oh, ow, f_out) = (out_shape[0], out_shape[1], out_shape[2]);
    let (kh, kw) = (layer.kernels.shape()[1], layer.kernels.shape()[2]);
    let c = layer.in_channels();
    let (ph, pw) = layer.pad();
    let s = layer.stride;
    let (h, w) = (input.shape()[0], input.shape()[1]);
    let wp = w + 2 * pw;

    let padded = pad_spatial(input, ph, pw);
    let pd = padded.data();
    let kd = layer.kernels.data();
    let dd = delta.data();

    let mut dk = vec![0.0; layer.kernels.len()];
    let mut db = vec![0.0; f_out];
    let mut dpad = vec![0.0; padded.len()];
    for m in 0..oh {
        for n in 0..ow {
            for f in 0..f_out {
                let d = dd[(m * ow + n) * f_out + f];
                db[f] += d;
                let kbase = f * kh * kw * c;
                for u in 0..kh {
                    let prow = ((m * s + u) * wp + n * s) * c;
                    let krow = kbase + u * kw * c;
                    for v in 0..kw {
                        let p = prow + v * c;
                        let k = krow + v * c;
                        for ch in 0..c {
                            dk[k + ch] += d * pd[p + ch];
                            dpad[p + ch] += d * kd[k + ch];
                        }
                    }
                }
            }
        }
    }

    // Crop the padding ring off the input delta.
    let mut d_in = vec![0.0; h * w * c];
    for m in 0..h {
        let src = ((m + ph) * wp + pw) * c;
        let dst = m * w * c;
        d_in[dst..dst + w * c].copy_from_slice(&dpad[src..src + w * c]);
    }
    Ok((
        Tensor::from_vec(&[h, w, c], d_in)?,
        ParamGrads {
            weights: Tensor::from_vec(layer.kernels.shape(), dk)?,
            bias: Tensor::from_vec(&[f_out], db)?,
        },
    ))
}
