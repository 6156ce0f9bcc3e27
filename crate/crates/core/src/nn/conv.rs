//! 2-D convolution and transposed convolution via im2col + GEMM.

use alloc::format;
use alloc::string::String;
use alloc::vec;

use rand_chacha::ChaCha8Rng;

use crate::nn::init;
use crate::nn::Param;
use crate::tensor::{gemm_acc, Tensor4};

/// Fill `cols` (`cin*k*k` rows by `h_out*w_out` columns) from one image.
#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f32],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
    cols: &mut [f32],
) {
    let hw_out = h_out * w_out;
    debug_assert_eq!(cols.len(), cin * k * k * hw_out);
    for c in 0..cin {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * hw_out;
                for oy in 0..h_out {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst = &mut cols[row + oy * w_out..row + (oy + 1) * w_out];
                    if iy < 0 || iy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add the column gradient back onto the input image.
#[allow(clippy::too_many_arguments)]
fn col2im_acc(
    cols: &[f32],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
    dx: &mut [f32],
) {
    let hw_out = h_out * w_out;
    for c in 0..cin {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * hw_out;
                for oy in 0..h_out {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * w_out..row + (oy + 1) * w_out];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Standard convolution. Weight layout `[c_out, c_in, k, k]`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    cached_input: Option<Tensor4>,
}

impl Conv2d {
    /// Same-padding constructor for odd kernels when `stride == 1`.
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let weight = Param::new(
            format!("{name}.weight"),
            vec![out_ch, in_ch, kernel, kernel],
            init::kaiming_uniform(rng, out_ch * fan_in, fan_in),
        );
        let bias = bias.then(|| {
            Param::new(
                format!("{name}.bias"),
                vec![out_ch],
                vec![0.0; out_ch],
            )
        });
        Self {
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            cached_input: None,
        }
    }

    pub fn same(name: &str, in_ch: usize, out_ch: usize, kernel: usize, bias: bool, rng: &mut ChaCha8Rng) -> Self {
        Self::new(name, in_ch, out_ch, kernel, 1, kernel / 2, bias, rng)
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let h_out = (h + 2 * self.pad - self.kernel) / self.stride + 1;
        let w_out = (w + 2 * self.pad - self.kernel) / self.stride + 1;
        (h_out, w_out)
    }

    pub fn forward(&mut self, x: &Tensor4, train: bool) -> Tensor4 {
        assert_eq!(x.c, self.in_ch, "conv input channels");
        let (h_out, w_out) = self.out_size(x.h, x.w);
        let hw_out = h_out * w_out;
        let ckk = self.in_ch * self.kernel * self.kernel;
        let mut out = Tensor4::zeros(x.n, self.out_ch, h_out, w_out);
        let mut cols = vec![0.0f32; ckk * hw_out];
        for n in 0..x.n {
            im2col(
                x.image(n),
                self.in_ch,
                x.h,
                x.w,
                self.kernel,
                self.stride,
                self.pad,
                h_out,
                w_out,
                &mut cols,
            );
            gemm_acc(
                self.out_ch,
                ckk,
                hw_out,
                &self.weight.value,
                false,
                &cols,
                false,
                out.image_mut(n),
            );
            if let Some(b) = &self.bias {
                let img = out.image_mut(n);
                for c in 0..self.out_ch {
                    let bv = b.value[c];
                    img[c * hw_out..(c + 1) * hw_out]
                        .iter_mut()
                        .for_each(|v| *v += bv);
                }
            }
        }
        self.cached_input = train.then(|| x.clone());
        out
    }

    /// Accumulate parameter gradients and return the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor4) -> Tensor4 {
        let x = self
            .cached_input
            .take()
            .expect("conv backward without cached forward");
        let (h_out, w_out) = self.out_size(x.h, x.w);
        let hw_out = h_out * w_out;
        let ckk = self.in_ch * self.kernel * self.kernel;
        debug_assert_eq!(grad_out.shape(), (x.n, self.out_ch, h_out, w_out));

        let mut dx = Tensor4::zeros(x.n, x.c, x.h, x.w);
        let mut cols = vec![0.0f32; ckk * hw_out];
        let mut dcols = vec![0.0f32; ckk * hw_out];
        for n in 0..x.n {
            im2col(
                x.image(n),
                self.in_ch,
                x.h,
                x.w,
                self.kernel,
                self.stride,
                self.pad,
                h_out,
                w_out,
                &mut cols,
            );
            let go = grad_out.image(n);
            // dW += dOut . cols^T
            gemm_acc(
                self.out_ch,
                hw_out,
                ckk,
                go,
                false,
                &cols,
                true,
                &mut self.weight.grad,
            );
            if let Some(b) = &mut self.bias {
                for c in 0..self.out_ch {
                    b.grad[c] += go[c * hw_out..(c + 1) * hw_out].iter().sum::<f32>();
                }
            }
            // dcols = W^T . dOut
            dcols.iter_mut().for_each(|v| *v = 0.0);
            gemm_acc(
                ckk,
                self.out_ch,
                hw_out,
                &self.weight.value,
                true,
                go,
                false,
                &mut dcols,
            );
            col2im_acc(
                &dcols,
                self.in_ch,
                x.h,
                x.w,
                self.kernel,
                self.stride,
                self.pad,
                h_out,
                w_out,
                dx.image_mut(n),
            );
        }
        dx
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.visit_mut(&mut |p| p.trainable = trainable);
    }
}

/// Transposed convolution (fractionally strided). Weight layout
/// `[c_in, c_out, k, k]`; output spatial size is `(in - 1) * stride + k`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    cached_input: Option<Tensor4>,
}

impl ConvTranspose2d {
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let weight = Param::new(
            format!("{name}.weight"),
            vec![in_ch, out_ch, kernel, kernel],
            init::kaiming_uniform(rng, in_ch * out_ch * kernel * kernel, fan_in),
        );
        let bias = bias.then(|| {
            Param::new(
                format!("{name}.bias"),
                vec![out_ch],
                vec![0.0; out_ch],
            )
        });
        Self {
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
            stride,
            cached_input: None,
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h - 1) * self.stride + self.kernel,
            (w - 1) * self.stride + self.kernel,
        )
    }

    pub fn forward(&mut self, x: &Tensor4, train: bool) -> Tensor4 {
        assert_eq!(x.c, self.in_ch, "transposed-conv input channels");
        let (h_out, w_out) = self.out_size(x.h, x.w);
        let hw_in = x.h * x.w;
        let okk = self.out_ch * self.kernel * self.kernel;
        let mut out = Tensor4::zeros(x.n, self.out_ch, h_out, w_out);
        let mut tmp = vec![0.0f32; okk * hw_in];
        for n in 0..x.n {
            // tmp = W^T . x, rows indexed by (c_out, ky, kx)
            tmp.iter_mut().for_each(|v| *v = 0.0);
            gemm_acc(
                okk,
                self.in_ch,
                hw_in,
                &self.weight.value,
                true,
                x.image(n),
                false,
                &mut tmp,
            );
            let img = out.image_mut(n);
            for c in 0..self.out_ch {
                for ky in 0..self.kernel {
                    for kx in 0..self.kernel {
                        let row = ((c * self.kernel + ky) * self.kernel + kx) * hw_in;
                        for iy in 0..x.h {
                            let oy = iy * self.stride + ky;
                            let dst_base = (c * h_out + oy) * w_out + kx;
                            let src = &tmp[row + iy * x.w..row + (iy + 1) * x.w];
                            for (ix, &v) in src.iter().enumerate() {
                                img[dst_base + ix * self.stride] += v;
                            }
                        }
                    }
                }
                if let Some(b) = &self.bias {
                    let bv = b.value[c];
                    img[c * h_out * w_out..(c + 1) * h_out * w_out]
                        .iter_mut()
                        .for_each(|v| *v += bv);
                }
            }
        }
        self.cached_input = train.then(|| x.clone());
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor4) -> Tensor4 {
        let x = self
            .cached_input
            .take()
            .expect("transposed-conv backward without cached forward");
        let (h_out, w_out) = self.out_size(x.h, x.w);
        debug_assert_eq!(grad_out.shape(), (x.n, self.out_ch, h_out, w_out));
        let hw_in = x.h * x.w;
        let okk = self.out_ch * self.kernel * self.kernel;

        let mut dx = Tensor4::zeros(x.n, x.c, x.h, x.w);
        let mut dtmp = vec![0.0f32; okk * hw_in];
        for n in 0..x.n {
            let go = grad_out.image(n);
            // Gather: each tmp cell contributed to exactly one output cell.
            for c in 0..self.out_ch {
                for ky in 0..self.kernel {
                    for kx in 0..self.kernel {
                        let row = ((c * self.kernel + ky) * self.kernel + kx) * hw_in;
                        for iy in 0..x.h {
                            let oy = iy * self.stride + ky;
                            let src_base = (c * h_out + oy) * w_out + kx;
                            let dst = &mut dtmp[row + iy * x.w..row + (iy + 1) * x.w];
                            for (ix, d) in dst.iter_mut().enumerate() {
                                *d = go[src_base + ix * self.stride];
                            }
                        }
                    }
                }
                if let Some(b) = &mut self.bias {
                    b.grad[c] += go[c * h_out * w_out..(c + 1) * h_out * w_out]
                        .iter()
                        .sum::<f32>();
                }
            }
            // dW += x . dtmp^T  ([c_in, hw] . [hw, okk])
            gemm_acc(
                self.in_ch,
                hw_in,
                okk,
                x.image(n),
                false,
                &dtmp,
                true,
                &mut self.weight.grad,
            );
            // dX = W . dtmp  ([c_in, okk] . [okk, hw])
            gemm_acc(
                self.in_ch,
                okk,
                hw_in,
                &self.weight.value,
                false,
                &dtmp,
                false,
                dx.image_mut(n),
            );
        }
        dx
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.visit_mut(&mut |p| p.trainable = trainable);
    }
}

/// Stable full name of a layer parameter, for checkpoints.
pub fn scoped(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}
