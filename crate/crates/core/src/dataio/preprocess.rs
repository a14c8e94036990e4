//! Raw sample to network input: scale, resize, replicate, standardize.

use super::ImageSample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const STD_EPSILON: f64 = 1e-8;

/// Converts one sample into the `[S, S, 3]` tensor the network consumes:
/// divide by 255, bilinear-resize to S x S, replicate the gray channel three
/// times, subtract the per-image mean, divide by the per-image std with an
/// epsilon guard (a constant image maps to all zeros instead of dividing by
/// zero).
pub fn preprocess(sample: &ImageSample, target_side: usize) -> Result<Tensor> {
    if target_side < 8 {
        return Err(Error::InvalidConfig(format!(
            "target_side must be >= 8, got {}",
            target_side
        )));
    }
    let (h, w) = sample.dims();
    let scaled: Vec<f64> = sample.pixels().data().iter().map(|v| v / 255.0).collect();
    let resized = resize_bilinear(&scaled, h, w, target_side);

    let n = resized.len() as f64;
    let mean = resized.iter().sum::<f64>() / n;
    let var = resized.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + STD_EPSILON;

    let mut data = Vec::with_capacity(target_side * target_side * 3);
    for v in resized {
        let z = (v - mean) / denom;
        data.extend_from_slice(&[z, z, z]);
    }
    Tensor::from_vec(&[target_side, target_side, 3], data)
}

/// Bilinear resample to `s` x `s` using half-pixel-aligned sample centers
/// clamped to the source grid.
fn resize_bilinear(src: &[f64], h: usize, w: usize, s: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(s * s);
    for dy in 0..s {
        let sy = ((dy as f64 + 0.5) * h as f64 / s as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for dx in 0..s {
            let sx = ((dx as f64 + 0.5) * w as f64 / s as f64 - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(h: usize, w: usize, data: Vec<f64>) -> ImageSample {
        ImageSample::new("t".into(), Tensor::from_vec(&[h, w], data).unwrap(), 0).unwrap()
    }

    #[test]
    fn constant_image_maps_to_zeros() {
        let s = sample(4, 4, vec![255.0; 16]);
        let out = preprocess(&s, 8).unwrap();
        assert_eq!(out.shape(), &[8, 8, 3]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channels_are_replicated() {
        let s = sample(16, 16, (0..256).map(|i| (i % 251) as f64).collect());
        let out = preprocess(&s, 8).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let a = out.get(&[y, x, 0]);
                assert_eq!(a, out.get(&[y, x, 1]));
                assert_eq!(a, out.get(&[y, x, 2]));
            }
        }
    }

    #[test]
    fn hand_computed_two_by_two() {
        // [[0,255],[0,255]] at S=2: resize is identity, scaled values
        // {0,1,0,1}, mean 0.5, std 0.5 -> z = +-0.5/(0.5 + 1e-8).
        let s = sample(2, 2, vec![0.0, 255.0, 0.0, 255.0]);
        // target_side >= 8, so check the math through an 8x8 resize of the
        // same pattern instead: columns 0-3 come from source column 0 and
        // columns 4-7 from column 1 only at the outer edges; verify the
        // standardization against a direct recomputation of the resized grid.
        let out = preprocess(&s, 8).unwrap();
        let scaled: Vec<f64> = s.pixels().data().iter().map(|v| v / 255.0).collect();
        let resized = resize_bilinear(&scaled, 2, 2, 8);
        let mean = resized.iter().sum::<f64>() / 64.0;
        let var = resized.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 64.0;
        let denom = var.sqrt() + 1e-8;
        for (i, &want_raw) in resized.iter().enumerate() {
            let want = (want_raw - mean) / denom;
            let y = i / 8;
            let x = i % 8;
            assert!((out.get(&[y, x, 0]) - want).abs() < 1e-15);
        }
        // The resized mean must still be the source mean: the pattern is
        // column-symmetric, so interpolation cannot shift it.
        assert!((mean - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identity_resize_standardizes_exactly() {
        // 8x8 source, S=8: resize is the identity, so the hand formula
        // applies directly to the scaled pixels.
        let data: Vec<f64> = (0..64).map(|i| if i % 2 == 0 { 0.0 } else { 255.0 }).collect();
        let s = sample(8, 8, data);
        let out = preprocess(&s, 8).unwrap();
        let expected = 0.5 / (0.5 + 1e-8);
        for (i, v) in out.data().chunks(3).enumerate() {
            let want = if i % 2 == 0 { -expected } else { expected };
            assert!((v[0] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn small_target_side_rejected() {
        let s = sample(4, 4, vec![0.0; 16]);
        assert!(matches!(preprocess(&s, 7), Err(Error::InvalidConfig(_))));
    }

    proptest! {
        #[test]
        fn output_is_standardized(
            seed in 0u64..1000,
            h in 8usize..24,
            w in 8usize..24,
            s in 8usize..20,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.0..=255.0)).collect();
            let sm = sample(h, w, data);
            let out = preprocess(&sm, s).unwrap();
            prop_assert_eq!(out.shape(), &[s, s, 3]);
            let n = out.len() as f64;
            let mean = out.data().iter().sum::<f64>() / n;
            let var = out.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-6, "mean {}", mean);
            prop_assert!((var.sqrt() - 1.0).abs() < 1e-3, "std {}", var.sqrt());
        }
    }
}
