//! Dense row-major tensors and the hand-written layer primitives used by the
//! network: convolution (with dilation), transposed convolution, max pooling,
//! fully-connected layers, ReLU, channel concatenation and bilinear resizing.
//!
//! Every primitive has an explicit backward pass; [`gradcheck`] compares those
//! against central finite differences.

mod conv;
mod gemm;
pub mod gradcheck;
mod ops;
mod pool;

pub(crate) use conv::conv2d_backward_opt;
pub use conv::{conv2d, conv2d_backward, deconv2d, deconv2d_backward, ConvGrads, ConvParams};
pub use gradcheck::{gradcheck, rel_error, Checkable, FnObjective, GradCheckReport, DEFAULT_STEP};
pub use ops::{
    bilinear_resize, concat_channels, fc_backward, fully_connected, relu, relu_backward,
    split_channels, FcGrads,
};
pub use pool::{maxpool2d, maxpool2d_backward, PoolOutput};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 4 || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(
                "tensor",
                format!("extents must be positive with order 1..=4, got {shape:?}"),
            ));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {expected} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![value; n]).expect("valid shape")
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(&mut f).collect()).expect("valid shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Interprets the tensor as N×C×H×W, left-padding lower-order shapes with 1s.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        let mut d = [1usize; 4];
        let off = 4 - self.shape.len();
        d[off..].copy_from_slice(&self.shape);
        (d[0], d[1], d[2], d[3])
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.is_empty() || shape.len() > 4 {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Inner product of two equally shaped tensors.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "dot",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Channel plane `c` of batch item `n` of a 4-D tensor.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let (_, cc, h, w) = self.dims4();
        let start = (n * cc + c) * h * w;
        &self.data[start..start + h * w]
    }
}
