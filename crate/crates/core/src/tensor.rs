//! Dense row-major tensors of `f64`.
//!
//! Everything in the crate computes in `f64`: the attack is
//! gradient-verified against finite differences and central differences in
//! `f32` would drown in rounding noise. Shapes are dynamic (`Vec<usize>`);
//! videos use the layout `(T, H, W, C)` with `H` indexing rows.

use crate::{Error, Result};
use rand::Rng;

/// A dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Number of elements implied by a shape (empty shape = scalar = 1).
pub fn elem_count(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// All-zero tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor { shape: shape.to_vec(), data: vec![0.0; elem_count(shape)] }
    }

    /// Tensor filled with a constant.
    pub fn filled(shape: &[usize], value: f64) -> Tensor {
        Tensor { shape: shape.to_vec(), data: vec![value; elem_count(shape)] }
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(value: f64) -> Tensor {
        Tensor { shape: Vec::new(), data: vec![value] }
    }

    /// Build from raw data; the length must match the shape.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if data.len() != elem_count(shape) {
            return Err(Error::InvalidArgument(format!(
                "tensor shape {:?} needs {} elements, got {}",
                shape,
                elem_count(shape),
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    /// Tensor with elements drawn independently from `U[lo, hi)`.
    pub fn uniform<R: Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Tensor {
        let data = (0..elem_count(shape)).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The single value of a scalar (or one-element) tensor.
    pub fn scalar_value(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::InvalidArgument(format!(
                "expected scalar tensor, got shape {:?}",
                self.shape
            )))
        }
    }

    /// Flat offset of a rank-4 index `(a, b, c, d)`.
    #[inline]
    pub fn offset4(&self, a: usize, b: usize, c: usize, d: usize) -> usize {
        debug_assert_eq!(self.rank(), 4);
        ((a * self.shape[1] + b) * self.shape[2] + c) * self.shape[3] + d
    }

    /// Value at a rank-4 index.
    #[inline]
    pub fn at4(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        self.data[self.offset4(a, b, c, d)]
    }

    /// Flat offset of a rank-3 index `(a, b, c)`.
    #[inline]
    pub fn offset3(&self, a: usize, b: usize, c: usize) -> usize {
        debug_assert_eq!(self.rank(), 3);
        (a * self.shape[1] + b) * self.shape[2] + c
    }

    /// Apply a function elementwise.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Combine two same-shaped tensors elementwise.
    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    /// Elementwise sum.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    /// Elementwise difference `self - other`.
    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    /// Largest absolute elementwise difference between two tensors.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "max_abs_diff",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// True when every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy of frame `t` of a `(T, H, W, C)` video, shaped `(H, W, C)`.
    pub fn frame(&self, t: usize) -> Result<Tensor> {
        if self.rank() != 4 {
            return Err(Error::InvalidArgument(format!(
                "frame() needs a rank-4 video, got shape {:?}",
                self.shape
            )));
        }
        if t >= self.shape[0] {
            return Err(Error::InvalidArgument(format!(
                "frame index {t} out of range for {} frames",
                self.shape[0]
            )));
        }
        let frame_len = self.data.len() / self.shape[0];
        let data = self.data[t * frame_len..(t + 1) * frame_len].to_vec();
        Ok(Tensor { shape: self.shape[1..].to_vec(), data })
    }
}
