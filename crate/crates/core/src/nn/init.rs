//! Weight initialization, deterministic under the run seed.

use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Kaiming-uniform for layers followed by ReLU: U(-b, b), b = sqrt(6/fan_in).
pub fn kaiming_uniform(rng: &mut ChaCha8Rng, len: usize, fan_in: usize) -> Vec<f32> {
    let bound = libm::sqrtf(6.0 / fan_in.max(1) as f32);
    (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Xavier-uniform for linear output layers: U(-b, b), b = sqrt(6/(fan_in+fan_out)).
pub fn xavier_uniform(rng: &mut ChaCha8Rng, len: usize, fan_in: usize, fan_out: usize) -> Vec<f32> {
    let bound = libm::sqrtf(6.0 / (fan_in + fan_out).max(1) as f32);
    (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
}
