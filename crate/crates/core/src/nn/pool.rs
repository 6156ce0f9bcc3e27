//! Spatial pooling layers.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{Matrix, Tensor4};

/// Non-overlapping max pooling (kernel == stride).
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub size: usize,
    argmax: Option<Vec<u32>>,
    in_shape: (usize, usize, usize, usize),
}

impl MaxPool2d {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            argmax: None,
            in_shape: (0, 0, 0, 0),
        }
    }

    pub fn forward(&mut self, x: &Tensor4, train: bool) -> Tensor4 {
        let s = self.size;
        assert!(x.h % s == 0 && x.w % s == 0, "pool input must be divisible");
        let (h_out, w_out) = (x.h / s, x.w / s);
        let mut out = Tensor4::zeros(x.n, x.c, h_out, w_out);
        let mut argmax = train.then(|| vec![0u32; out.numel()]);
        for n in 0..x.n {
            for c in 0..x.c {
                let plane = &x.data[((n * x.c + c) * x.h) * x.w..((n * x.c + c + 1) * x.h) * x.w];
                for oy in 0..h_out {
                    for ox in 0..w_out {
                        let mut best = f32::NEG_INFINITY;
                        let mut best_idx = 0u32;
                        for ky in 0..s {
                            let iy = oy * s + ky;
                            for kx in 0..s {
                                let ix = ox * s + kx;
                                let v = plane[iy * x.w + ix];
                                if v > best {
                                    best = v;
                                    best_idx = (iy * x.w + ix) as u32;
                                }
                            }
                        }
                        let oi = ((n * x.c + c) * h_out + oy) * w_out + ox;
                        out.data[oi] = best;
                        if let Some(a) = &mut argmax {
                            a[oi] = best_idx;
                        }
                    }
                }
            }
        }
        self.argmax = argmax;
        self.in_shape = x.shape();
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor4) -> Tensor4 {
        let argmax = self
            .argmax
            .take()
            .expect("pool backward without training forward");
        let (n_, c_, h, w) = self.in_shape;
        let mut dx = Tensor4::zeros(n_, c_, h, w);
        for n in 0..grad_out.n {
            for c in 0..grad_out.c {
                let plane_base = (n * c_ + c) * h * w;
                for i in 0..grad_out.plane_len() {
                    let oi = (n * grad_out.c + c) * grad_out.plane_len() + i;
                    dx.data[plane_base + argmax[oi] as usize] += grad_out.data[oi];
                }
            }
        }
        dx
    }
}

/// Spatial mean per channel: (N, C, H, W) -> (N, C).
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    in_shape: (usize, usize, usize, usize),
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Tensor4) -> Matrix {
        let plane = x.plane_len();
        let mut out = Matrix::zeros(x.n, x.c);
        for n in 0..x.n {
            for c in 0..x.c {
                let base = (n * x.c + c) * plane;
                let sum: f32 = x.data[base..base + plane].iter().sum();
                out.set(n, c, sum / plane as f32);
            }
        }
        self.in_shape = x.shape();
        out
    }

    pub fn backward(&self, grad_out: &Matrix) -> Tensor4 {
        let (n_, c_, h, w) = self.in_shape;
        let plane = h * w;
        let mut dx = Tensor4::zeros(n_, c_, h, w);
        for n in 0..n_ {
            for c in 0..c_ {
                let g = grad_out.at(n, c) / plane as f32;
                let base = (n * c_ + c) * plane;
                dx.data[base..base + plane].iter_mut().for_each(|v| *v = g);
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxpool_picks_max_and_routes_gradient() {
        let mut pool = MaxPool2d::new(2);
        let x = Tensor4::from_vec(
            1,
            1,
            4,
            4,
            vec![
                1.0, 2.0, 5.0, 6.0, //
                3.0, 4.0, 7.0, 8.0, //
                9.0, 10.0, 13.0, 14.0, //
                11.0, 12.0, 15.0, 16.0,
            ],
        );
        let out = pool.forward(&x, true);
        assert_eq!(out.data, vec![4.0, 8.0, 12.0, 16.0]);

        let grad = Tensor4::from_vec(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let dx = pool.backward(&grad);
        assert_eq!(dx.at(0, 0, 1, 1), 1.0);
        assert_eq!(dx.at(0, 0, 1, 3), 2.0);
        assert_eq!(dx.at(0, 0, 3, 1), 3.0);
        assert_eq!(dx.at(0, 0, 3, 3), 4.0);
        assert_eq!(dx.data.iter().sum::<f32>(), 10.0);
    }

    #[test]
    fn gap_means_and_spreads() {
        let mut gap = GlobalAvgPool::new();
        let x = Tensor4::from_vec(1, 2, 2, 2, vec![1.0, 2.0, 3.0, 4.0, 10.0, 10.0, 10.0, 10.0]);
        let out = gap.forward(&x);
        assert_eq!(out.data, vec![2.5, 10.0]);
        let grad = Matrix::from_vec(1, 2, vec![4.0, 8.0]);
        let dx = gap.backward(&grad);
        assert_eq!(dx.data, vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
    }
}
