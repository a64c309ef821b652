//! Minimal numerical engine: rank-4 tensors, convolution, activations,
//! losses and the Adam optimizer.
//!
//! Everything is generic over [`Real`], implemented for `f32` (production)
//! and `f64` (verification). Every reduction has a fixed, documented order
//! and every multiply-accumulate is a fused `mul_add`, so results are
//! bitwise reproducible regardless of the SIMD path or thread count.

mod adam;
mod conv;
pub(crate) mod gemm;
mod kernel;
mod ops;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

pub use adam::{adam_step, AdamParams, AdamState};
pub(crate) use conv::backward as conv_backward;
pub use conv::{conv2d_backward, conv2d_forward, Activation, ConvGrads, ConvLayer};
pub use kernel::KernelKind;
pub use ops::{bce_with_logits, mse_loss, relu, sigmoid, sigmoid_scalar};

use crate::error::{shape_err, Result};

/// Floating-point element type of the engine.
pub trait Real: Float + Default + Debug + Display + Sum + Send + Sync + 'static + kernel::KernelSet {
    /// Lossless for f64, round-to-nearest for f32.
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense `(batch, channels, height, width)` tensor in row-major order.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor").field("shape", &self.shape).field("len", &self.data.len()).finish()
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(shape_err!("tensor dimensions must be >= 1, got {shape:?}"));
        }
        let len = shape.iter().product::<usize>();
        if data.len() != len {
            return Err(shape_err!("shape {shape:?} needs {len} elements, got {}", data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Result<Self> {
        Self::new(shape, vec![T::zero(); shape.iter().product()])
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut(usize) -> T) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(shape, (0..len).map(&mut f).collect())
    }

    /// Single-channel batch-of-one tensor from a `height × width` plane.
    pub fn from_plane(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        Self::new([1, 1, height, width], data)
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }
    #[inline]
    pub fn batch(&self) -> usize {
        self.shape[0]
    }
    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[1]
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.shape[2]
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.shape[3]
    }
    /// Elements per batch item.
    #[inline]
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        let [_, cs, hs, ws] = self.shape;
        self.data[((b * cs + c) * hs + y) * ws + x]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts element type (f32 <-> f64) through `f64`.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape, data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect() }
    }
}
