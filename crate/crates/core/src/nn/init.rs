//! Seeded weight initialization.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Scalar;

/// Gaussian init with the given standard deviation.
pub fn normal<F: Scalar, R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> ArrayD<F> {
    let dist = Normal::new(0.0, std).expect("valid std");
    let n: usize = shape.iter().product();
    let data: Vec<F> = (0..n).map(|_| F::of(dist.sample(rng))).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches data")
}

/// He initialization for layers followed by ReLU: std = sqrt(2 / fan_in).
pub fn he_normal<F: Scalar, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> ArrayD<F> {
    normal(rng, shape, (2.0 / fan_in as f64).sqrt())
}

pub fn zeros<F: Scalar>(shape: &[usize]) -> ArrayD<F> {
    ArrayD::zeros(IxDyn(shape))
}

pub fn ones<F: Scalar>(shape: &[usize]) -> ArrayD<F> {
    ArrayD::from_elem(IxDyn(shape), F::one())
}
