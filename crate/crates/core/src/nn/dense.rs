//! Fully connected layer on row-major matrices.

use alloc::format;
use alloc::vec;

use rand_chacha::ChaCha8Rng;

use crate::nn::{init, Param};
use crate::tensor::{gemm_acc, Matrix};

/// `y = x . W^T + b`, weight layout `[out, in]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    pub in_features: usize,
    pub out_features: usize,
    cached_input: Option<Matrix>,
}

impl Dense {
    pub fn new(
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                vec![out_features, in_features],
                init::xavier_uniform(rng, out_features * in_features, in_features, out_features),
            ),
            bias: Param::new(format!("{name}.bias"), vec![out_features], vec![0.0; out_features]),
            in_features,
            out_features,
            cached_input: None,
        }
    }

    pub fn forward(&mut self, x: &Matrix, train: bool) -> Matrix {
        assert_eq!(x.cols, self.in_features, "dense input width");
        let mut out = Matrix::zeros(x.rows, self.out_features);
        // out = x . W^T
        gemm_acc(
            x.rows,
            self.in_features,
            self.out_features,
            &x.data,
            false,
            &self.weight.value,
            true,
            &mut out.data,
        );
        for r in 0..out.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&self.bias.value) {
                *o += b;
            }
        }
        self.cached_input = train.then(|| x.clone());
        out
    }

    pub fn backward(&mut self, grad_out: &Matrix) -> Matrix {
        let x = self
            .cached_input
            .take()
            .expect("dense backward without cached forward");
        // dW += dY^T . x
        gemm_acc(
            self.out_features,
            x.rows,
            self.in_features,
            &grad_out.data,
            true,
            &x.data,
            false,
            &mut self.weight.grad,
        );
        for r in 0..grad_out.rows {
            for (g, b) in grad_out.row(r).iter().zip(self.bias.grad.iter_mut()) {
                *b += g;
            }
        }
        // dX = dY . W
        let mut dx = Matrix::zeros(x.rows, self.in_features);
        gemm_acc(
            x.rows,
            self.out_features,
            self.in_features,
            &grad_out.data,
            false,
            &self.weight.value,
            false,
            &mut dx.data,
        );
        dx
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn forward_known_values() {
        let mut rng = seeded(0);
        let mut layer = Dense::new("d", 2, 2, &mut rng);
        layer.weight.value = vec![1.0, 2.0, 3.0, 4.0]; // [[1,2],[3,4]]
        layer.bias.value = vec![0.5, -0.5];
        let x = Matrix::from_vec(1, 2, vec![1.0, 1.0]);
        let y = layer.forward(&x, false);
        assert_eq!(y.data, vec![3.5, 6.5]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded(5);
        let mut layer = Dense::new("d", 3, 2, &mut rng);
        let x = Matrix::from_vec(2, 3, init::xavier_uniform(&mut rng, 6, 3, 2));
        let coefs = init::xavier_uniform(&mut rng, 4, 1, 1);
        let loss = |y: &Matrix| -> f32 { y.data.iter().zip(&coefs).map(|(a, b)| a * b).sum() };

        let y = layer.forward(&x, true);
        let mut grad = y.clone();
        grad.data.copy_from_slice(&coefs);
        let dx = layer.backward(&grad);

        let h = 1e-3f32;
        for i in 0..x.data.len() {
            let mut probe = x.clone();
            probe.data[i] += h;
            let up = loss(&layer.forward(&probe, false));
            probe.data[i] -= 2.0 * h;
            let down = loss(&layer.forward(&probe, false));
            let fd = (up - down) / (2.0 * h);
            assert!((fd - dx.data[i]).abs() < 1e-2 * dx.data[i].abs().max(0.5));
        }
        for i in 0..layer.weight.len() {
            let orig = layer.weight.value[i];
            layer.weight.value[i] = orig + h;
            let up = loss(&layer.forward(&x, false));
            layer.weight.value[i] = orig - h;
            let down = loss(&layer.forward(&x, false));
            layer.weight.value[i] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - layer.weight.grad[i]).abs() < 1e-2);
        }
    }
}
