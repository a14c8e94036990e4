//! Minibatch SGD training loop with per-epoch history.

use super::{argmax, cross_entropy, Gradients, Layer, Network, TrainConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const HISTORY_CSV_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc,lr";

/// End-of-epoch snapshot; losses include the L2 penalty and are measured in
/// inference mode after the epoch's updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    /// CSV rendering with the pinned [`HISTORY_CSV_HEADER`] column order.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(HISTORY_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.lr
            ));
        }
        out
    }
}

/// Trains `net` in place on `train`, reporting per-epoch metrics on both
/// sets. Labels are class indices.
///
/// Each epoch shuffles the training set (ChaCha8 stream from `cfg.seed`),
/// walks it in batches of `cfg.batch_size` (final short batch included),
/// averages single-sample gradients over the batch, and applies one SGD
/// step per batch. Per-sample dropout streams are seeded from the shuffle
/// stream before batch samples run in parallel, so results do not depend on
/// thread count.
pub fn fit(
    net: &mut Network,
    train: &[(Tensor, usize)],
    val: &[(Tensor, usize)],
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    let class_count = net.class_count()?;
    check_samples(net, train, class_count, "training")?;
    check_samples(net, val, class_count, "validation")?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = TrainHistory::default();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let sample_seeds: Vec<u64> = batch.iter().map(|_| rng.gen()).collect();
            let frozen: &Network = net;
            let per_sample: Result<Vec<Gradients>> = batch
                .par_iter()
                .zip(&sample_seeds)
                .map(|(&i, &seed)| {
                    let (x, y) = &train[i];
                    let mut sample_rng = ChaCha8Rng::seed_from_u64(seed);
                    let (_, cache) = frozen.forward(x, Some(&mut sample_rng))?;
                    frozen.backward(&cache, &one_hot(*y, class_count)?)
                })
                .collect();
            let per_sample = per_sample?;
            let mut summed: Option<Gradients> = None;
            for g in per_sample {
                match &mut summed {
                    None => summed = Some(g),
                    Some(acc) => acc.add_assign(&g)?,
                }
            }
            let mut grads = summed.expect("batches are non-empty");
            grads.scale(1.0 / batch.len() as f64);
            net.sgd_step(&grads, cfg.learning_rate)?;
        }
        let (train_loss, train_acc) = evaluate(net, train)?;
        let (val_loss, val_acc) = evaluate(net, val)?;
        history.records.push(EpochRecord {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
            lr: cfg.learning_rate,
        });
    }
    Ok(history)
}

/// Inference-mode mean loss (cross-entropy plus the network's L2 penalty)
/// and accuracy over `samples`.
pub fn evaluate(net: &Network, samples: &[(Tensor, usize)]) -> Result<(f64, f64)> {
    let class_count = net.class_count()?;
    check_samples(net, samples, class_count, "evaluation")?;
    let scored: Result<Vec<(f64, bool)>> = samples
        .par_iter()
        .map(|(x, y)| {
            let probs = net.infer(x)?;
            let loss = cross_entropy(&probs, &one_hot(*y, class_count)?)?;
            Ok((loss, argmax(probs.data()) == *y))
        })
        .collect();
    let scored = scored?;
    let n = scored.len() as f64;
    let penalty = l2_penalty(net);
    let mean_loss = scored.iter().map(|(l, _)| l).sum::<f64>() / n + penalty;
    let acc = scored.iter().filter(|(_, ok)| *ok).count() as f64 / n;
    Ok((mean_loss, acc))
}

/// L2 term of the training objective: sum over dense layers of
/// l2 * (|W|^2 + |b|^2).
fn l2_penalty(net: &Network) -> f64 {
    net.layers()
        .iter()
        .map(|l| match l {
            Layer::Dense(d) => d.l2 * (d.weights.sq_sum() + d.bias.sq_sum()),
            _ => 0.0,
        })
        .sum()
}

fn one_hot(label: usize, class_count: usize) -> Result<Tensor> {
    let mut data = vec![0.0; class_count];
    data[label] = 1.0;
    Tensor::from_vec(&[class_count], data)
}

fn check_samples(
    net: &Network,
    samples: &[(Tensor, usize)],
    class_count: usize,
    what: &str,
) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InvalidData(format!("{} set is empty", what)));
    }
    for (i, (x, y)) in samples.iter().enumerate() {
        if x.shape() != net.input_shape() {
            return Err(Error::ShapeMismatch(format!(
                "{} sample {} has shape {:?}, network expects {:?}",
                what,
                i,
                x.shape(),
                net.input_shape()
            )));
        }
        if *y >= class_count {
            return Err(Error::InvalidLabel(format!(
                "{} sample {} has label {}, class count is {}",
                what, i, y, class_count
            )));
        }
    }
    Ok(())
}
