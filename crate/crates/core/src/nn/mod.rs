//! Minimal dense-tensor neural network layers with hand-written backward
//! passes.
//!
//! Layers are generic over [`Scalar`] so the same code runs in `f32` for
//! training and `f64` for finite-difference gradient verification. All
//! reductions accumulate in a fixed order, which keeps whole training runs
//! bitwise reproducible for a given seed.
//!
//! Video activations are laid out `(N, T, C, H, W)` so that per-frame 2D
//! operations are plain reshapes; image activations are `(N, C, H, W)`.

pub mod batchnorm;
pub mod conv2d;
pub mod conv3d;
pub mod dropout;
pub mod init;
pub mod linear;
pub mod ops;
pub mod pool;

#[cfg(test)]
mod tests;

use std::collections::HashMap;

use ndarray::{ArrayD, NdFloat};
use num_traits::FromPrimitive;

use crate::error::{Error, Result};

pub use batchnorm::BatchNorm;
pub use conv2d::{Conv2d, ConvTranspose2d};
pub use conv3d::Conv3d;
pub use dropout::Dropout;
pub use linear::Linear;
pub use pool::{GlobalAvgPool2d, GlobalAvgPool3d, MaxPool2d};

/// Element type of all network tensors.
pub trait Scalar: NdFloat + FromPrimitive + Default {
    const DTYPE: &'static str;

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts")
    }

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    fn as_f64(self) -> f64 {
        self
    }
}

/// A learnable tensor and its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<F: Scalar> {
    pub name: String,
    pub value: ArrayD<F>,
    pub grad: ArrayD<F>,
    /// Whether weight decay applies (false for biases and norm parameters).
    pub decay: bool,
}

impl<F: Scalar> Param<F> {
    pub fn new(name: impl Into<String>, value: ArrayD<F>, decay: bool) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param {
            name: name.into(),
            value,
            grad,
            decay,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }
}

/// Named tensors of a module: parameters plus non-learnable buffers
/// (batch-norm running statistics). Used for checkpointing.
pub trait State<F: Scalar> {
    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<F>>);

    /// Clones every parameter and buffer into `out` under its full name.
    fn export_state(&self, out: &mut Vec<(String, ArrayD<F>)>);

    /// Loads parameters and buffers from `map`, checking shapes.
    fn import_state(&mut self, map: &HashMap<String, ArrayD<F>>) -> Result<()>;
}

pub(crate) fn take_tensor<F: Scalar>(
    map: &HashMap<String, ArrayD<F>>,
    name: &str,
    expected: &[usize],
) -> Result<ArrayD<F>> {
    let t = map
        .get(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
    if t.shape() != expected {
        return Err(Error::ShapeMismatch {
            name: name.to_string(),
            expected: expected.to_vec(),
            got: t.shape().to_vec(),
        });
    }
    Ok(t.clone())
}

pub(crate) fn import_param<F: Scalar>(
    map: &HashMap<String, ArrayD<F>>,
    p: &mut Param<F>,
) -> Result<()> {
    p.value = take_tensor(map, &p.name, p.value.shape())?;
    Ok(())
}
