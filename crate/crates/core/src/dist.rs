//! Small wrappers over `rand_distr` with the degenerate cases handled.

use rand::Rng as _;
use rand_distr::{Beta, Distribution, Gamma, Poisson, StandardNormal};

use crate::rng::Rng;

pub fn poisson(rng: &mut Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let d = Poisson::new(mean).expect("finite Poisson mean");
    d.sample(rng) as u64
}

/// Gamma variable with the given shape and scale; zero when the shape is zero.
pub fn gamma(rng: &mut Rng, shape: f64, scale: f64) -> f64 {
    if shape <= 0.0 {
        return 0.0;
    }
    Gamma::new(shape, scale).expect("valid gamma parameters").sample(rng)
}

pub fn beta(rng: &mut Rng, a: f64, b: f64) -> f64 {
    Beta::new(a, b).expect("valid beta parameters").sample(rng)
}

pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Uniform on (0, 1].
pub fn unit_open(rng: &mut Rng) -> f64 {
    1.0 - rng.random::<f64>()
}

pub fn bernoulli(rng: &mut Rng, p: f64) -> bool {
    rng.random::<f64>() < p
}

/// Uniform random permutation of `0..n`.
pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}
