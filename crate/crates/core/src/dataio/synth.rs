//! Synthetic dataset generator for desk-scale runs.
//!
//! Class c draws a bright geometric primitive (disc, square, or bar,
//! cycling by class) at a class-dependent position over a dark background,
//! with per-image position and brightness jitter plus Gaussian pixel noise.
//! Classes therefore differ in primitive shape, covered area, and position,
//! so both pixel statistics and pooled conv features separate them.

use super::{Dataset, ImageSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const BACKGROUND: f64 = 25.0;
const FOREGROUND: f64 = 220.0;
const NOISE_STDDEV: f64 = 10.0;

#[derive(Clone, Copy)]
enum Shape {
    Disc,
    Square,
    Bar,
}

/// Per-class geometry: what to draw, how large, and where.
struct ClassGeometry {
    shape: Shape,
    /// (cy, cx) as fractions of the side.
    center: (f64, f64),
    /// Multiplier on the base primitive size.
    size: f64,
}

fn class_geometry(c: usize) -> ClassGeometry {
    let shape = match c % 3 {
        0 => Shape::Disc,
        1 => Shape::Square,
        _ => Shape::Bar,
    };
    let quadrants = [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)];
    ClassGeometry {
        shape,
        center: if c == 4 { (0.5, 0.5) } else { quadrants[c % 4] },
        size: if c >= 3 { 1.35 } else { 1.0 },
    }
}

/// Generates `class_count * n_per_class` images of `side`x`side` pixels,
/// class-major with ids `class{c}_s{i}`. Deterministic for a fixed seed;
/// all pixel values are integral, so saving as PGM is lossless.
pub fn synthesize_dataset(
    seed: u64,
    n_per_class: usize,
    class_count: usize,
    side: usize,
) -> Result<Dataset> {
    if !(2..=5).contains(&class_count) {
        return Err(Error::InvalidConfig(format!(
            "class_count must be in [2, 5], got {}",
            class_count
        )));
    }
    if side < 16 {
        return Err(Error::InvalidConfig(format!(
            "side must be >= 16, got {}",
            side
        )));
    }
    if n_per_class < 1 {
        return Err(Error::InvalidConfig("n_per_class must be >= 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, NOISE_STDDEV).expect("valid stddev");
    let s = side as f64;
    let jitter = s / 16.0;
    let mut samples = Vec::with_capacity(class_count * n_per_class);
    for c in 0..class_count {
        let geom = class_geometry(c);
        for i in 0..n_per_class {
            let cy = geom.center.0 * s + rng.gen_range(-jitter..jitter);
            let cx = geom.center.1 * s + rng.gen_range(-jitter..jitter);
            let brightness = FOREGROUND + rng.gen_range(-20.0..20.0);
            let mut data = Vec::with_capacity(side * side);
            for y in 0..side {
                for x in 0..side {
                    let inside = contains(&geom.shape, geom.size, s, cy, cx, y as f64, x as f64);
                    let base = if inside { brightness } else { BACKGROUND };
                    let v = (base + noise.sample(&mut rng)).round().clamp(0.0, 255.0);
                    data.push(v);
                }
            }
            samples.push(ImageSample::new(
                format!("class{}_s{}", c, i),
                Tensor::from_vec(&[side, side], data)?,
                c,
            )?);
        }
    }
    let class_names = (0..class_count).map(|c| format!("class{}", c)).collect();
    Dataset::new(samples, class_names)
}

fn contains(shape: &Shape, size: f64, s: f64, cy: f64, cx: f64, y: f64, x: f64) -> bool {
    let (dy, dx) = (y - cy, x - cx);
    match shape {
        Shape::Disc => {
            let r = 0.18 * s * size;
            dy * dy + dx * dx <= r * r
        }
        Shape::Square => {
            let half = 0.13 * s * size;
            dy.abs() <= half && dx.abs() <= half
        }
        Shape::Bar => dy.abs() <= 0.04 * s * size && dx.abs() <= 0.30 * s * size,
    }
}
