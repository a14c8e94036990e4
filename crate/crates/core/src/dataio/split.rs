//! Stratified train/test splitting and label encoding.

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Splits `ds` into disjoint (train, test) datasets, stratified by class.
///
/// The total test size is ceil(test_fraction * N), allocated to classes by
/// largest remainder on the per-class quotas fraction * class_size (ties
/// favor the lower class index), so every class's test share is within one
/// sample of its exact quota. Which samples land in test is drawn from a
/// ChaCha8 stream seeded with `seed`; both outputs preserve the original
/// dataset order.
pub fn train_test_split(
    ds: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) || !test_fraction.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "test_fraction must be in (0, 1), got {}",
            test_fraction
        )));
    }
    if ds.is_empty() {
        return Err(Error::InvalidData("cannot split an empty dataset".into()));
    }
    let counts = ds.per_class_counts();
    let per_class_test = allocate_test_counts(&counts, test_fraction);
    let total_test: usize = per_class_test.iter().sum();
    if total_test == 0 || total_test == ds.len() {
        return Err(Error::InvalidConfig(format!(
            "test_fraction {} leaves an empty side ({} of {} samples in test)",
            test_fraction,
            total_test,
            ds.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_marks = vec![false; ds.len()];
    for (class, mut indices) in ds.indices_by_class().into_iter().enumerate() {
        indices.shuffle(&mut rng);
        for &i in indices.iter().take(per_class_test[class]) {
            test_marks[i] = true;
        }
    }
    let test_indices: Vec<usize> = (0..ds.len()).filter(|&i| test_marks[i]).collect();
    let train_indices: Vec<usize> = (0..ds.len()).filter(|&i| !test_marks[i]).collect();
    Ok((ds.select(&train_indices), ds.select(&test_indices)))
}

/// Largest-remainder allocation of ceil(fraction * N) test slots across
/// classes with quotas fraction * count.
fn allocate_test_counts(counts: &[usize], fraction: f64) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    let total = (fraction * n as f64).ceil() as usize;
    let quotas: Vec<f64> = counts.iter().map(|&c| fraction * c as f64).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let base: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    // Descending fractional remainder, ties to the lower class index.
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &class in order.iter().take(total.saturating_sub(base)) {
        alloc[class] += 1;
    }
    alloc
}

/// One-hot encodes `labels` as an `[N, C]` matrix.
pub fn to_one_hot(labels: &[usize], class_count: usize) -> Result<Tensor> {
    if class_count == 0 {
        return Err(Error::InvalidConfig("class_count must be >= 1".into()));
    }
    let mut data = vec![0.0; labels.len() * class_count];
    for (i, &label) in labels.iter().enumerate() {
        if label >= class_count {
            return Err(Error::InvalidLabel(format!(
                "label {} at row {} exceeds class count {}",
                label, i, class_count
            )));
        }
        data[i * class_count + label] = 1.0;
    }
    Tensor::from_vec(&[labels.len(), class_count], data)
}
