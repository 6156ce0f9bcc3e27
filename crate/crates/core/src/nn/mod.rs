//! Neural-network building blocks with explicit forward/backward passes.
//!
//! Layers own their parameters, gradients, and forward caches. There is no
//! autograd: each model wires its own backward pass as the mirror image of
//! its forward pass. Convolutions run as im2col + GEMM.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod init;
pub mod loss;
pub mod pool;

pub use activation::{relu_backward_inplace, relu_inplace, sigmoid_inplace, Dropout};
pub use batchnorm::BatchNorm2d;
pub use conv::{Conv2d, ConvTranspose2d};
pub use dense::Dense;
pub use pool::{GlobalAvgPool, MaxPool2d};

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// One learnable tensor: values, accumulated gradients, shape, and a stable
/// name used by checkpoints and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    /// Frozen parameters are visited for checkpointing but skipped by the
    /// optimizer.
    pub trainable: bool,
}

impl Param {
    pub fn new(name: String, shape: Vec<usize>, value: Vec<f32>) -> Self {
        let len = value.len();
        debug_assert_eq!(len, shape.iter().product::<usize>());
        Self {
            name,
            shape,
            value,
            grad: vec![0.0; len],
            trainable: true,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Visitor over a model's learnable parameters, in a stable order.
pub trait VisitParams {
    fn visit_params(&self, f: &mut dyn FnMut(&Param));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param));

    /// Non-learnable state that still belongs in checkpoints (batch-norm
    /// running statistics). Implementations with none can skip this.
    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
        let _ = f;
    }

    fn load_buffer(&mut self, name: &str, data: &[f32]) -> bool {
        let _ = (name, data);
        false
    }
}

/// Count parameters: `(total, trainable)`.
pub fn param_counts(model: &dyn VisitParams) -> (usize, usize) {
    let mut total = 0;
    let mut trainable = 0;
    model.visit_params(&mut |p| {
        total += p.len();
        if p.trainable {
            trainable += p.len();
        }
    });
    (total, trainable)
}

/// Zero every parameter gradient.
pub fn zero_grads(model: &mut dyn VisitParams) {
    model.visit_params_mut(&mut |p| p.zero_grad());
}

/// Bit-exact checksum over parameter values, in visitation order.
pub fn params_checksum(model: &dyn VisitParams) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    model.visit_params(&mut |p| {
        h ^= crate::rng::checksum_f32(&p.value);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    });
    h
}

/// Snapshot all parameter values, in visitation order.
pub fn snapshot_params(model: &dyn VisitParams) -> Vec<Vec<f32>> {
    let mut out = Vec::new();
    model.visit_params(&mut |p| out.push(p.value.clone()));
    out
}

/// Restore a snapshot taken with [`snapshot_params`].
pub fn restore_params(model: &mut dyn VisitParams, snapshot: &[Vec<f32>]) {
    let mut i = 0;
    model.visit_params_mut(&mut |p| {
        p.value.copy_from_slice(&snapshot[i]);
        i += 1;
    });
    debug_assert_eq!(i, snapshot.len());
}
