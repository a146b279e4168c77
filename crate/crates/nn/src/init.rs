//! Deterministic weight initialisers.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::Float;

/// He-normal initialisation for layers followed by rectifiers.
pub fn kaiming_normal<F: Float, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> ArrayD<F> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    normal(rng, shape, std)
}

pub fn normal<F: Float, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> ArrayD<F> {
    let dist = Normal::new(0.0, std).expect("finite std");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| F::c(dist.sample(rng))).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape")
}

/// `U(-bound, bound)`.
pub fn uniform<F: Float, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> ArrayD<F> {
    let n: usize = shape.iter().product();
    if bound == 0.0 {
        return ArrayD::zeros(IxDyn(shape));
    }
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid range");
    let data = (0..n).map(|_| F::c(dist.sample(rng))).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape")
}

pub fn zeros<F: Float>(shape: &[usize]) -> ArrayD<F> {
    ArrayD::zeros(IxDyn(shape))
}

pub fn ones<F: Float>(shape: &[usize]) -> ArrayD<F> {
    ArrayD::from_elem(IxDyn(shape), F::one())
}
