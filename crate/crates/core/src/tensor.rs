//! Shaped, finite, row-major real arrays.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A shaped array of finite `f64` values stored in row-major order.
///
/// Construction rejects NaN and infinities, so every `TensorF` in
/// circulation is finite. Images use `[height, width]` or
/// `[height, width, channels]` (channel-last).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor", into = "RawTensor")]
pub struct TensorF {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl TryFrom<RawTensor> for TensorF {
    type Error = Error;
    fn try_from(raw: RawTensor) -> Result<Self> {
        TensorF::new(raw.shape, raw.values)
    }
}

impl From<TensorF> for RawTensor {
    fn from(t: TensorF) -> Self {
        RawTensor {
            shape: t.shape,
            values: t.values,
        }
    }
}

impl TensorF {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidTensor(format!(
                "dimensions must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} needs {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "tensor value {} at flat index {i}",
                values[i]
            )));
        }
        Ok(Self { shape, values })
    }

    /// One-dimensional tensor.
    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        Self::new(vec![values.len()], values)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        assert!(value.is_finite(), "fill value must be finite");
        let n: usize = shape.iter().product();
        assert!(n > 0, "shape must be non-empty");
        Self {
            shape: shape.to_vec(),
            values: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// New tensor with this tensor's shape and the given values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.shape.clone(), values)
    }

    /// Same values viewed under a different shape with equal element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.values.clone())
    }

    pub fn check_same_shape(&self, other: &TensorF) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &TensorF) -> Result<Self> {
        self.check_same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        self.with_values(values)
    }

    /// Elementwise product.
    pub fn mul(&self, other: &TensorF) -> Result<Self> {
        self.check_same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .collect();
        self.with_values(values)
    }

    pub fn scale(&self, factor: f64) -> Result<Self> {
        self.with_values(self.values.iter().map(|v| v * factor).collect())
    }

    /// Euclidean distance between two equally shaped tensors.
    pub fn l2_distance(&self, other: &TensorF) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

/// Closed interval `[lo, hi]` of admissible input values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub lo: f64,
    pub hi: f64,
}

impl Default for ValueRange {
    fn default() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }
}

impl ValueRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "value range must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn clip_value(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    pub fn clip(&self, t: &TensorF) -> TensorF {
        TensorF {
            shape: t.shape.clone(),
            values: t.values.iter().map(|&v| self.clip_value(v)).collect(),
        }
    }

    pub fn contains(&self, t: &TensorF) -> bool {
        t.values.iter().all(|&v| v >= self.lo && v <= self.hi)
    }
}
