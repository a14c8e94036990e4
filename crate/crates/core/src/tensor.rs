//! Dense row-major f64 tensor.
//!
//! The single home for shaped numeric data in this crate. Data is stored
//! flat in row-major order; `data.len()` always equals the product of the
//! shape, every dimension is at least 1, and construction rejects non-finite
//! elements.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// All-zero tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Result<Tensor> {
        validate_shape(shape)?;
        let len = shape.iter().product();
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        })
    }

    /// Builds a tensor from flat row-major data.
    ///
    /// Errors if the length does not match the shape product or any element
    /// is non-finite.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        validate_shape(shape)?;
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::InvalidShape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "element {} is {} in tensor of shape {:?}",
                i, data[i], shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Flat row-major offset of a multi-index. Panics on rank mismatch or an
    /// out-of-bounds coordinate; indexing bugs are programmer errors.
    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(
            index.len(),
            self.shape.len(),
            "index rank {} != tensor rank {}",
            index.len(),
            self.shape.len()
        );
        let mut off = 0;
        for (d, (&i, &n)) in index.iter().zip(&self.shape).enumerate() {
            assert!(i < n, "index {} out of bounds for dim {} of size {}", i, d, n);
            off = off * n + i;
        }
        off
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Same data, new shape; the element count must match.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        validate_shape(shape)?;
        let expect: usize = shape.iter().product();
        if expect != self.data.len() {
            return Err(Error::InvalidShape(format!(
                "cannot reshape {:?} ({} elements) to {:?} ({} elements)",
                self.shape,
                self.data.len(),
                shape,
                expect
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    /// Elementwise a + b. Shapes must match exactly.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a + b)
    }

    /// Elementwise a - b.
    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a - b)
    }

    /// Elementwise a * b (Hadamard product).
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a * b)
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "elementwise op on {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Matrix-vector product: [r, c] x [c] -> [r].
    pub fn matvec(&self, x: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || x.rank() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "matvec needs rank-2 x rank-1, got {:?} x {:?}",
                self.shape, x.shape
            )));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        if c != x.shape[0] {
            return Err(Error::ShapeMismatch(format!(
                "matvec inner dims differ: {:?} x {:?}",
                self.shape, x.shape
            )));
        }
        let mut out = vec![0.0; r];
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            let mut acc = 0.0;
            for (w, v) in row.iter().zip(&x.data) {
                acc += w * v;
            }
            out[i] = acc;
        }
        Ok(Tensor {
            shape: vec![r],
            data: out,
        })
    }

    /// Sum of squared elements. Used for L2 penalties.
    pub fn sq_sum(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Errors if any element is non-finite. Cheap guard for post-op checks.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{}: element {} is {}",
                what, i, self.data[i]
            )));
        }
        Ok(())
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::InvalidShape("shape must have rank >= 1".into()));
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape(format!(
            "all dimensions must be >= 1, got {:?}",
            shape
        )));
    }
    Ok(())
}

/// Numerically stable softmax over a flat slice: subtracts the max before
/// exponentiating, then normalizes. Used by both the convnet head and the
/// boosted ensemble.
pub(crate) fn softmax_slice(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}
