//! Randomized augmentation: flips, small rotations, and shifts.

use super::{Dataset, ImageSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const MAX_ROTATION_DEGREES: f64 = 15.0;
const MAX_SHIFT_FRACTION: f64 = 0.1;

/// Augmentation settings. Each copy composes, drawn independently:
/// horizontal flip (p=0.5), vertical flip (p=0.5), rotation uniform in
/// +-15 degrees, and per-axis shift uniform within +-10% of that axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub copies_per_image: usize,
    /// Keep each source sample alongside its copies.
    pub keep_originals: bool,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            copies_per_image: 3,
            keep_originals: true,
            seed: 0,
        }
    }
}

/// Expands `ds` sample by sample: the original (when kept) followed by its
/// transformed copies with ids `{id}_aug{j}`, all carrying the source
/// label. Deterministic under the config seed.
pub fn augment(ds: &Dataset, cfg: &AugmentConfig) -> Result<Dataset> {
    if cfg.copies_per_image == 0 && !cfg.keep_originals {
        return Err(Error::InvalidConfig(
            "augment with copies_per_image 0 and originals dropped would empty the dataset"
                .into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples =
        Vec::with_capacity(ds.len() * (cfg.copies_per_image + usize::from(cfg.keep_originals)));
    for s in ds.samples() {
        if cfg.keep_originals {
            samples.push(s.clone());
        }
        for j in 1..=cfg.copies_per_image {
            let (h, w) = s.dims();
            let hflip = rng.gen::<f64>() < 0.5;
            let vflip = rng.gen::<f64>() < 0.5;
            let angle = rng.gen_range(-MAX_ROTATION_DEGREES..MAX_ROTATION_DEGREES);
            let dx = rng.gen_range(-MAX_SHIFT_FRACTION..MAX_SHIFT_FRACTION) * w as f64;
            let dy = rng.gen_range(-MAX_SHIFT_FRACTION..MAX_SHIFT_FRACTION) * h as f64;
            let pixels = transform_image(s.pixels(), hflip, vflip, angle, dx, dy)?;
            samples.push(ImageSample::new(
                format!("{}_aug{}", s.id(), j),
                pixels,
                s.label(),
            )?);
        }
    }
    Dataset::new(samples, ds.class_names().to_vec())
}

/// Applies flips about the image center, then rotation by `angle_deg`, then
/// a (dx, dy) shift, resampling bilinearly; out-of-bounds sources read 0.
/// Output values stay within [0, 255] (interpolation is convex).
fn transform_image(
    pixels: &Tensor,
    hflip: bool,
    vflip: bool,
    angle_deg: f64,
    dx: f64,
    dy: f64,
) -> Result<Tensor> {
    let (h, w) = (pixels.shape()[0], pixels.shape()[1]);
    let src = pixels.data();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let theta = angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();

    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            // Invert the output transform: un-shift, un-rotate, un-flip.
            let vy = y as f64 - cy - dy;
            let vx = x as f64 - cx - dx;
            let ry = -sin * vx + cos * vy;
            let rx = cos * vx + sin * vy;
            let sy = if vflip { -ry } else { ry } + cy;
            let sx = if hflip { -rx } else { rx } + cx;
            out.push(sample_bilinear(src, h, w, sy, sx));
        }
    }
    Tensor::from_vec(&[h, w], out)
}

fn sample_bilinear(src: &[f64], h: usize, w: usize, sy: f64, sx: f64) -> f64 {
    if sy < 0.0 || sx < 0.0 || sy > (h - 1) as f64 || sx > (w - 1) as f64 {
        return 0.0;
    }
    let y0 = sy.floor() as usize;
    let x0 = sx.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = sy - y0 as f64;
    let fx = sx - x0 as f64;
    let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
    let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}
