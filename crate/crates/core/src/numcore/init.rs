use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use super::tensor::Tensor2;

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Xavier-uniform weights for a (fan_in, fan_out) matrix.
pub fn xavier_uniform<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor2 {
    let b = xavier_bound(fan_in, fan_out);
    let dist = Uniform::new_inclusive(-b, b);
    let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
    Tensor2::from_vec(fan_in, fan_out, data).expect("shape")
}

pub fn zero_bias(width: usize) -> Tensor2 {
    Tensor2::zeros(1, width)
}
