//! Forward operations. Every op validates its input shape and returns a
//! fresh tensor; none mutate their inputs.

use super::{expect_rank3, ConvLayer, DenseLayer, PoolLayer, PoolMode};
use crate::error::{Error, Result};
use crate::tensor::{softmax_slice, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Loss floor guard: cross-entropy uses ln(p + EPSILON) clamped to ln(1).
pub(crate) const CE_EPSILON: f64 = 1e-12;

/// Zero-pads the two spatial dims of a `[h, w, c]` tensor by (ph, pw) on
/// each side.
pub(crate) fn pad_spatial(input: &Tensor, ph: usize, pw: usize) -> Tensor {
    if ph == 0 && pw == 0 {
        return input.clone();
    }
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (hp, wp) = (h + 2 * ph, w + 2 * pw);
    let mut out = Tensor::zeros(&[hp, wp, c]).expect("padded shape is valid");
    let src = input.data();
    let dst = out.data_mut();
    for m in 0..h {
        let src_row = m * w * c;
        let dst_row = ((m + ph) * wp + pw) * c;
        dst[dst_row..dst_row + w * c].copy_from_slice(&src[src_row..src_row + w * c]);
    }
    out
}

/// 2-D convolution of a channels-last image with a bank of kernels.
///
/// out[m][n][f] = bias[f] + sum_{u,v,c} kernels[f][u][v][c] *
/// padded[m*stride + u][n*stride + v][c].
pub fn conv_forward(input: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    let out_shape = layer.output_shape(input.shape())?;
    let (oh, ow, f_out) = (out_shape[0], out_shape[1], out_shape[2]);
    let (kh, kw) = (layer.kernels.shape()[1], layer.kernels.shape()[2]);
    let c = layer.in_channels();
    let (ph, pw) = layer.pad();
    let s = layer.stride;

    let padded = pad_spatial(input, ph, pw);
    let wp = input.shape()[1] + 2 * pw;
    let pd = padded.data();
    let kd = layer.kernels.data();
    let bd = layer.bias.data();

    let mut out = vec![0.0; oh * ow * f_out];
    for m in 0..oh {
        for n in 0..ow {
            for f in 0..f_out {
                let mut acc = bd[f];
                let kbase = f * kh * kw * c;
                for u in 0..kh {
                    let prow = ((m * s + u) * wp + n * s) * c;
                    let krow = kbase + u * kw * c;
                    for v in 0..kw {
                        let p = prow + v * c;
                        let k = krow + v * c;
                        for ch in 0..c {
                            acc += kd[k + ch] * pd[p + ch];
                        }
                    }
                }
                out[(m * ow + n) * f_out + f] = acc;
            }
        }
    }
    Tensor::from_vec(&out_shape, out)
}

/// Elementwise max(0, x).
pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// 2-D max or average pooling over each channel independently.
pub fn pool_forward(input: &Tensor, layer: &PoolLayer) -> Result<Tensor> {
    Ok(pool_forward_cached(input, layer)?.0)
}

/// Pooling that also reports, for max mode, the flat input offset of each
/// selected maximum (first maximum in row-major scan order on ties). The
/// offsets drive gradient routing in the backward pass.
pub(crate) fn pool_forward_cached(
    input: &Tensor,
    layer: &PoolLayer,
) -> Result<(Tensor, Vec<usize>)> {
    let out_shape = layer.output_shape(input.shape())?;
    let (oh, ow, c) = (out_shape[0], out_shape[1], out_shape[2]);
    let w = input.shape()[1];
    let (wh, ww) = layer.window;
    let s = layer.stride;
    let d = input.data();

    let mut out = vec![0.0; oh * ow * c];
    let mut arg = match layer.mode {
        PoolMode::Max => vec![0usize; oh * ow * c],
        PoolMode::Average => Vec::new(),
    };
    for m in 0..oh {
        for n in 0..ow {
            for ch in 0..c {
                let o = (m * ow + n) * c + ch;
                match layer.mode {
                    PoolMode::Max => {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_at = 0;
                        for u in 0..wh {
                            for v in 0..ww {
                                let at = ((m * s + u) * w + (n * s + v)) * c + ch;
                                if d[at] > best {
                                    best = d[at];
                                    best_at = at;
                                }
                            }
                        }
                        out[o] = best;
                        arg[o] = best_at;
                    }
                    PoolMode::Average => {
                        let mut acc = 0.0;
                        for u in 0..wh {
                            for v in 0..ww {
                                acc += d[((m * s + u) * w + (n * s + v)) * c + ch];
                            }
                        }
                        out[o] = acc / (wh * ww) as f64;
                    }
                }
            }
        }
    }
    Ok((Tensor::from_vec(&out_shape, out)?, arg))
}

/// Mean over both spatial dims: `[h, w, c]` -> `[c]`.
pub fn global_average_pool(input: &Tensor) -> Result<Tensor> {
    let (h, w, c) = expect_rank3(input.shape(), "global average pool input")?;
    let d = input.data();
    let mut out = vec![0.0; c];
    for m in 0..h {
        for n in 0..w {
            let base = (m * w + n) * c;
            for ch in 0..c {
                out[ch] += d[base + ch];
            }
        }
    }
    let scale = 1.0 / (h * w) as f64;
    for v in &mut out {
        *v *= scale;
    }
    Tensor::from_vec(&[c], out)
}

/// Affine map W x + b for a rank-1 input.
pub fn dense_forward(input: &Tensor, layer: &DenseLayer) -> Result<Tensor> {
    if input.rank() != 1 || input.shape()[0] != layer.in_features() {
        return Err(Error::ShapeMismatch(format!(
            "dense expects rank-1 input of {} features, got {:?}",
            layer.in_features(),
            input.shape()
        )));
    }
    layer.weights.matvec(input)?.add(&layer.bias)
}

/// Numerically stable softmax over a rank-1 tensor of width >= 2.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.rank() != 1 || logits.shape()[0] < 2 {
        return Err(Error::InvalidShape(format!(
            "softmax needs a rank-1 tensor of width >= 2, got {:?}",
            logits.shape()
        )));
    }
    Tensor::from_vec(logits.shape(), softmax_slice(logits.data()))
}

/// Categorical cross-entropy: -ln(p_true + 1e-12), clamped so a saturated
/// p_true of exactly 1 yields 0 rather than a tiny negative value.
///
/// `one_hot` must contain exactly one 1.0 and zeros elsewhere; `probs` must
/// be the same shape with entries in [0, 1] summing to 1 within 1e-6.
pub fn cross_entropy(probs: &Tensor, one_hot: &Tensor) -> Result<f64> {
    if probs.shape() != one_hot.shape() || probs.rank() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "cross entropy on {:?} vs {:?}",
            probs.shape(),
            one_hot.shape()
        )));
    }
    let label = one_hot_label(one_hot)?;
    let mut sum = 0.0;
    for &p in probs.data() {
        if !(-1e-9..=1.0 + 1e-9).contains(&p) {
            return Err(Error::InvalidData(format!("probability {} outside [0, 1]", p)));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidData(format!(
            "probabilities sum to {}, expected 1",
            sum
        )));
    }
    Ok(-(probs.data()[label] + CE_EPSILON).min(1.0).ln())
}

/// Index of the single 1.0 in a one-hot vector; anything else is rejected.
pub(crate) fn one_hot_label(one_hot: &Tensor) -> Result<usize> {
    let mut label = None;
    for (i, &v) in one_hot.data().iter().enumerate() {
        if v == 1.0 {
            if label.is_some() {
                return Err(Error::InvalidLabel("one-hot vector has multiple ones".into()));
            }
            label = Some(i);
        } else if v != 0.0 {
            return Err(Error::InvalidLabel(format!(
                "one-hot entries must be 0 or 1, got {}",
                v
            )));
        }
    }
    label.ok_or_else(|| Error::InvalidLabel("one-hot vector has no 1.0 entry".into()))
}

/// Inverted dropout. Training mode zeroes each element with probability
/// `rate` and scales survivors by 1/(1-rate); inference mode is identity.
pub fn dropout(input: &Tensor, rate: f64, rng: &mut ChaCha8Rng, training: bool) -> Result<Tensor> {
    let (out, _) = dropout_masked(input, rate, rng, training)?;
    Ok(out)
}

/// Dropout that also returns the applied mask (entries 0 or 1/(1-rate));
/// an empty mask means identity was applied.
pub(crate) fn dropout_masked(
    input: &Tensor,
    rate: f64,
    rng: &mut ChaCha8Rng,
    training: bool,
) -> Result<(Tensor, Vec<f64>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!(
            "dropout rate must be in [0, 1), got {}",
            rate
        )));
    }
    if !training || rate == 0.0 {
        return Ok((input.clone(), Vec::new()));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..input.len())
        .map(|_| {
            if rng.gen::<f64>() < rate {
                0.0
            } else {
                keep_scale
            }
        })
        .collect();
    let data: Vec<f64> = input
        .data()
        .iter()
        .zip(&mask)
        .map(|(&v, &m)| v * m)
        .collect();
    Ok((Tensor::from_vec(input.shape(), data)?, mask))
}
