//! Small from-scratch convolutional backbone for desk-scale runs and tests.
//!
//! Three conv/bn/relu blocks, each followed by 2x2 max pooling, so the input
//! side length must be divisible by 8. Output is a 32-channel feature map.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::nn::{
    relu_backward_inplace, relu_inplace, BatchNorm2d, Conv2d, MaxPool2d, Param,
};
use crate::tensor::Tensor4;

pub const TINY_CNN_CHANNELS: usize = 32;
pub const TINY_CNN_DOWNSCALE: usize = 8;

#[derive(Debug, Clone)]
struct Block {
    conv: Conv2d,
    bn: BatchNorm2d,
    pool: MaxPool2d,
    relu_mask: Option<Vec<bool>>,
}

impl Block {
    fn new(name: &str, in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: Conv2d::same(&alloc::format!("{name}.conv"), in_ch, out_ch, 3, false, rng),
            bn: BatchNorm2d::new(&alloc::format!("{name}.bn"), out_ch),
            pool: MaxPool2d::new(2),
            relu_mask: None,
        }
    }

    fn forward(&mut self, x: &Tensor4, train: bool) -> Tensor4 {
        let mut y = self.bn.forward(&self.conv.forward(x, train), train);
        let mask = relu_inplace(&mut y.data);
        self.relu_mask = train.then_some(mask);
        self.pool.forward(&y, train)
    }

    fn backward(&mut self, grad: &Tensor4) -> Tensor4 {
        let mut g = self.pool.backward(grad);
        let mask = self.relu_mask.take().expect("block backward before forward");
        relu_backward_inplace(&mut g.data, &mask);
        self.conv.backward(&self.bn.backward(&g))
    }
}

#[derive(Debug, Clone)]
pub struct TinyCnn {
    blocks: [Block; 3],
}

impl TinyCnn {
    pub fn new(seed_rng: &mut ChaCha8Rng) -> Self {
        Self {
            blocks: [
                Block::new("backbone.block1", 1, 8, seed_rng),
                Block::new("backbone.block2", 8, 16, seed_rng),
                Block::new("backbone.block3", 16, 32, seed_rng),
            ],
        }
    }

    pub fn out_channels(&self) -> usize {
        TINY_CNN_CHANNELS
    }

    /// `train` here means "update batch statistics and keep caches"; a
    /// frozen backbone is always run with `train = false`.
    pub fn forward(&mut self, x: &Tensor4, train: bool) -> Tensor4 {
        let mut y = self.blocks[0].forward(x, train);
        y = self.blocks[1].forward(&y, train);
        self.blocks[2].forward(&y, train)
    }

    pub fn backward(&mut self, grad: &Tensor4) -> Tensor4 {
        let g = self.blocks[2].backward(grad);
        let g = self.blocks[1].backward(&g);
        self.blocks[0].backward(&g)
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Param)) {
        for b in &self.blocks {
            b.conv.visit(f);
            b.bn.visit(f);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for b in &mut self.blocks {
            b.conv.visit_mut(f);
            b.bn.visit_mut(f);
        }
    }

    pub fn visit_buffers(&self, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
        for b in &self.blocks {
            b.bn.visit_buffers(f);
        }
    }

    pub fn load_buffer(&mut self, name: &str, data: &[f32]) -> bool {
        self.blocks.iter_mut().any(|b| b.bn.load_buffer(name, data))
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        for b in &mut self.blocks {
            b.conv.set_trainable(trainable);
            b.bn.set_trainable(trainable);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init;
    use crate::rng::seeded;

    #[test]
    fn shapes_and_determinism() {
        let mut rng = seeded(4);
        let mut net = TinyCnn::new(&mut rng);
        let x = Tensor4::from_vec(2, 1, 32, 32, init::kaiming_uniform(&mut rng, 2048, 1));
        let a = net.forward(&x, false);
        assert_eq!(a.shape(), (2, 32, 4, 4));
        let b = net.forward(&x, false);
        assert_eq!(a, b);
    }
}
