//! Activations and dropout.

use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// ReLU in place; returns the pre-activation sign pattern for backward.
pub fn relu_inplace(data: &mut [f32]) -> Vec<bool> {
    let mut active = Vec::with_capacity(data.len());
    for v in data.iter_mut() {
        let pass = *v > 0.0;
        active.push(pass);
        if !pass {
            *v = 0.0;
        }
    }
    active
}

/// Zero gradients where the forward pass clipped.
pub fn relu_backward_inplace(grad: &mut [f32], active: &[bool]) {
    for (g, &a) in grad.iter_mut().zip(active) {
        if !a {
            *g = 0.0;
        }
    }
}

/// Numerically safe logistic sigmoid in place.
pub fn sigmoid_inplace(data: &mut [f32]) {
    for v in data.iter_mut() {
        *v = sigmoid(*v);
    }
}

/// Clamped to the open interval (0, 1): saturated f32 exponentials would
/// otherwise return exactly 0.0 or 1.0 for |z| beyond ~17.
#[inline]
pub fn sigmoid(z: f32) -> f32 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + libm::expf(-z))
    } else {
        let e = libm::expf(z);
        e / (1.0 + e)
    };
    s.clamp(1e-12, 1.0 - 1e-7)
}

/// Swish / SiLU: `x * sigmoid(x)`.
#[inline]
pub fn swish(z: f32) -> f32 {
    z * sigmoid(z)
}

/// Row-wise softmax in place (stable: subtracts the row max).
pub fn softmax_rows_inplace(data: &mut [f32], cols: usize) {
    debug_assert_eq!(data.len() % cols, 0);
    for row in data.chunks_mut(cols) {
        let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::expf(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Inverted dropout. Active only in training mode; inference is the
/// identity, which makes eval passes deterministic.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f32,
    mask: Option<Vec<f32>>,
}

impl Dropout {
    pub fn new(rate: f32) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1)");
        Self { rate, mask: None }
    }

    pub fn forward(&mut self, data: &mut [f32], train: bool, rng: &mut ChaCha8Rng) {
        if !train || self.rate == 0.0 {
            self.mask = None;
            return;
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mask: Vec<f32> = (0..data.len())
            .map(|_| {
                if rng.gen::<f32>() < keep {
                    scale
                } else {
                    0.0
                }
            })
            .collect();
        for (v, &m) in data.iter_mut().zip(&mask) {
            *v *= m;
        }
        self.mask = Some(mask);
    }

    pub fn backward(&mut self, grad: &mut [f32]) {
        if let Some(mask) = self.mask.take() {
            for (g, &m) in grad.iter_mut().zip(&mask) {
                *g *= m;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn relu_roundtrip() {
        let mut data = alloc::vec![-1.0, 0.0, 2.0];
        let active = relu_inplace(&mut data);
        assert_eq!(data, alloc::vec![0.0, 0.0, 2.0]);
        let mut grad = alloc::vec![5.0, 5.0, 5.0];
        relu_backward_inplace(&mut grad, &active);
        assert_eq!(grad, alloc::vec![0.0, 0.0, 5.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut data = alloc::vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0];
        softmax_rows_inplace(&mut data, 3);
        for row in data.chunks(3) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn sigmoid_is_bounded_and_symmetric() {
        for z in [-80.0, -5.0, 0.0, 5.0, 80.0] {
            let s = sigmoid(z);
            assert!(s > 0.0 && s < 1.0, "sigmoid({z}) = {s}");
            assert!((s + sigmoid(-z) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn dropout_scales_and_is_identity_in_eval() {
        let mut d = Dropout::new(0.5);
        let mut rng = seeded(11);
        let mut data = alloc::vec![1.0; 1000];
        d.forward(&mut data, true, &mut rng);
        let kept = data.iter().filter(|&&v| v > 0.0).count();
        assert!(kept > 350 && kept < 650, "kept {kept}");
        assert!(data.iter().all(|&v| v == 0.0 || (v - 2.0).abs() < 1e-6));

        let mut data = alloc::vec![1.0; 8];
        d.forward(&mut data, false, &mut rng);
        assert_eq!(data, alloc::vec![1.0; 8]);
    }
}
