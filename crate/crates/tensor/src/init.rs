//! Weight initialisers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Dims, Tensor};

/// He (Kaiming) normal initialisation with the given fan-in.
pub fn he_normal<R: Rng + ?Sized>(dims: Dims, fan_in: usize, rng: &mut R) -> Tensor {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    normal(dims, std, rng)
}

pub fn normal<R: Rng + ?Sized>(dims: Dims, std: f64, rng: &mut R) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite standard deviation");
    let len = dims.iter().product();
    Tensor::from_vec(dims, (0..len).map(|_| dist.sample(rng)).collect())
}

pub fn uniform<R: Rng + ?Sized>(dims: Dims, lo: f64, hi: f64, rng: &mut R) -> Tensor {
    let len = dims.iter().product();
    Tensor::from_vec(dims, (0..len).map(|_| rng.random_range(lo..hi)).collect())
}
