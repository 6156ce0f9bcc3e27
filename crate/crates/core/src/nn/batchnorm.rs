//! Batch normalization over NCHW tensors.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::nn::Param;
use crate::tensor::Tensor4;

const BN_EPS: f32 = 1e-5;
const BN_MOMENTUM: f32 = 0.1;

/// Per-channel batch normalization with learnable scale and shift.
///
/// Training mode normalizes with biased batch statistics and updates the
/// running estimates; eval mode normalizes with the running estimates.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    name: String,
    channels: usize,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Tensor4,
    inv_std: Vec<f32>,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), vec![channels], vec![1.0; channels]),
            beta: Param::new(format!("{name}.beta"), vec![channels], vec![0.0; channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            name: String::from(name),
            channels,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor4, train: bool) -> Tensor4 {
        assert_eq!(x.c, self.channels, "batchnorm channels");
        let m = (x.n * x.h * x.w) as f32;
        let plane = x.h * x.w;
        let mut out = Tensor4::zeros(x.n, x.c, x.h, x.w);

        if train {
            let mut xhat = Tensor4::zeros(x.n, x.c, x.h, x.w);
            let mut inv_std = vec![0.0f32; self.channels];
            for c in 0..self.channels {
                let mut sum = 0.0f64;
                let mut sq = 0.0f64;
                for n in 0..x.n {
                    let base = (n * x.c + c) * plane;
                    for &v in &x.data[base..base + plane] {
                        sum += v as f64;
                        sq += (v as f64) * (v as f64);
                    }
                }
                let mean = (sum / m as f64) as f32;
                let var = ((sq / m as f64) - (sum / m as f64) * (sum / m as f64)).max(0.0) as f32;
                let istd = 1.0 / libm::sqrtf(var + BN_EPS);
                inv_std[c] = istd;
                self.running_mean[c] =
                    (1.0 - BN_MOMENTUM) * self.running_mean[c] + BN_MOMENTUM * mean;
                self.running_var[c] =
                    (1.0 - BN_MOMENTUM) * self.running_var[c] + BN_MOMENTUM * var;
                let (g, b) = (self.gamma.value[c], self.beta.value[c]);
                for n in 0..x.n {
                    let base = (n * x.c + c) * plane;
                    for i in base..base + plane {
                        let xh = (x.data[i] - mean) * istd;
                        xhat.data[i] = xh;
                        out.data[i] = g * xh + b;
                    }
                }
            }
            self.cache = Some(BnCache { xhat, inv_std });
        } else {
            for c in 0..self.channels {
                let istd = 1.0 / libm::sqrtf(self.running_var[c] + BN_EPS);
                let mean = self.running_mean[c];
                let (g, b) = (self.gamma.value[c], self.beta.value[c]);
                for n in 0..x.n {
                    let base = (n * x.c + c) * plane;
                    for i in base..base + plane {
                        out.data[i] = g * (x.data[i] - mean) * istd + b;
                    }
                }
            }
        }
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor4) -> Tensor4 {
        let cache = self
            .cache
            .take()
            .expect("batchnorm backward without training forward");
        let xhat = &cache.xhat;
        let m = (grad_out.n * grad_out.h * grad_out.w) as f32;
        let plane = grad_out.h * grad_out.w;
        let mut dx = Tensor4::zeros(grad_out.n, grad_out.c, grad_out.h, grad_out.w);

        for c in 0..self.channels {
            let mut sum_dy = 0.0f64;
            let mut sum_dy_xhat = 0.0f64;
            for n in 0..grad_out.n {
                let base = (n * grad_out.c + c) * plane;
                for i in base..base + plane {
                    sum_dy += grad_out.data[i] as f64;
                    sum_dy_xhat += (grad_out.data[i] * xhat.data[i]) as f64;
                }
            }
            self.beta.grad[c] += sum_dy as f32;
            self.gamma.grad[c] += sum_dy_xhat as f32;

            let g = self.gamma.value[c];
            let istd = cache.inv_std[c];
            let k = g * istd / m;
            let (sdy, sdyx) = (sum_dy as f32, sum_dy_xhat as f32);
            for n in 0..grad_out.n {
                let base = (n * grad_out.c + c) * plane;
                for i in base..base + plane {
                    dx.data[i] = k * (m * grad_out.data[i] - sdy - xhat.data[i] * sdyx);
                }
            }
        }
        dx
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.gamma);
        f(&self.beta);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }

    pub fn visit_buffers(&self, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
        f(
            &format!("{}.running_mean", self.name),
            &[self.channels],
            &self.running_mean,
        );
        f(
            &format!("{}.running_var", self.name),
            &[self.channels],
            &self.running_var,
        );
    }

    pub fn load_buffer(&mut self, name: &str, data: &[f32]) -> bool {
        if name == format!("{}.running_mean", self.name) {
            self.running_mean.copy_from_slice(data);
            true
        } else if name == format!("{}.running_var", self.name) {
            self.running_var.copy_from_slice(data);
            true
        } else {
            false
        }
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.gamma.trainable = trainable;
        self.beta.trainable = trainable;
    }
}
