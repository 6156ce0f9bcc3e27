//! Forward-only EfficientNet-B1 feature extractor.
//!
//! The B1 trunk is the paper configuration's backbone. It is always frozen:
//! this implementation provides the inference graph (stem, MBConv stages
//! with squeeze-excitation, head conv) and loads weights from a checkpoint
//! in the artifact's own named-tensor format. Randomly initialized instances
//! are valid for shape and wiring tests; real pretrained weights must be
//! converted into the checkpoint format externally.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::nn::activation::{sigmoid, swish};
use crate::nn::{init, Param};
use crate::tensor::{gemm_acc, Tensor4};

pub const B1_OUT_CHANNELS: usize = 1280;

/// (expand_ratio, out_channels, repeats, stride, kernel) per stage; repeats
/// already carry B1's depth multiplier (ceil(1.1 * B0)).
const B1_STAGES: [(usize, usize, usize, usize, usize); 7] = [
    (1, 16, 2, 1, 3),
    (6, 24, 3, 2, 3),
    (6, 40, 3, 2, 5),
    (6, 80, 4, 2, 3),
    (6, 112, 4, 1, 5),
    (6, 192, 5, 2, 5),
    (6, 320, 2, 1, 3),
];

/// Inference-only convolution: full or depthwise, stride 1 or 2, same
/// padding. Weight layout `[c_out, c_in/groups, k, k]`.
#[derive(Debug, Clone)]
struct FrozenConv {
    weight: Param,
    groups: usize,
    stride: usize,
    kernel: usize,
    in_ch: usize,
    out_ch: usize,
}

impl FrozenConv {
    fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let cpg = in_ch / groups;
        let fan_in = cpg * kernel * kernel;
        let mut weight = Param::new(
            format!("{name}.weight"),
            vec![out_ch, cpg, kernel, kernel],
            init::kaiming_uniform(rng, out_ch * cpg * kernel * kernel, fan_in),
        );
        weight.trainable = false;
        Self {
            weight,
            groups,
            stride,
            kernel,
            in_ch,
            out_ch,
        }
    }

    fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let pad = self.kernel / 2;
        (
            (h + 2 * pad - self.kernel) / self.stride + 1,
            (w + 2 * pad - self.kernel) / self.stride + 1,
        )
    }

    fn forward(&self, x: &Tensor4) -> Tensor4 {
        debug_assert_eq!(x.c, self.in_ch);
        let (h_out, w_out) = self.out_size(x.h, x.w);
        let pad = self.kernel / 2;
        let mut out = Tensor4::zeros(x.n, self.out_ch, h_out, w_out);

        if self.groups == 1 {
            // im2col + GEMM, as in the trainable conv.
            let ckk = self.in_ch * self.kernel * self.kernel;
            let hw_out = h_out * w_out;
            let mut cols = vec![0.0f32; ckk * hw_out];
            for n in 0..x.n {
                cols.iter_mut().for_each(|v| *v = 0.0);
                let img = x.image(n);
                for c in 0..self.in_ch {
                    for ky in 0..self.kernel {
                        for kx in 0..self.kernel {
                            let row = ((c * self.kernel + ky) * self.kernel + kx) * hw_out;
                            for oy in 0..h_out {
                                let iy = (oy * self.stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= x.h as isize {
                                    continue;
                                }
                                for ox in 0..w_out {
                                    let ix = (ox * self.stride + kx) as isize - pad as isize;
                                    if ix >= 0 && ix < x.w as isize {
                                        cols[row + oy * w_out + ox] =
                                            img[(c * x.h + iy as usize) * x.w + ix as usize];
                                    }
                                }
                            }
                        }
                    }
                }
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
            }
        } else {
            // Depthwise: groups == channels.
            debug_assert_eq!(self.groups, self.in_ch);
            debug_assert_eq!(self.in_ch, self.out_ch);
            let kk = self.kernel * self.kernel;
            for n in 0..x.n {
                for c in 0..self.in_ch {
                    let plane = &x.image(n)[c * x.h * x.w..(c + 1) * x.h * x.w];
                    let wbase = &self.weight.value[c * kk..(c + 1) * kk];
                    let obase = (n * self.out_ch + c) * h_out * w_out;
                    for oy in 0..h_out {
                        for ox in 0..w_out {
                            let mut acc = 0.0;
                            for ky in 0..self.kernel {
                                let iy = (oy * self.stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= x.h as isize {
                                    continue;
                                }
                                for kx in 0..self.kernel {
                                    let ix = (ox * self.stride + kx) as isize - pad as isize;
                                    if ix >= 0 && ix < x.w as isize {
                                        acc += wbase[ky * self.kernel + kx]
                                            * plane[iy as usize * x.w + ix as usize];
                                    }
                                }
                            }
                            out.data[obase + oy * w_out + ox] = acc;
                        }
                    }
                }
            }
        }
        out
    }
}

/// Inference-only batch norm folded over loaded statistics.
#[derive(Debug, Clone)]
struct FrozenBn {
    gamma: Param,
    beta: Param,
    running_mean: Vec<f32>,
    running_var: Vec<f32>,
    name: String,
}

impl FrozenBn {
    fn new(name: &str, ch: usize) -> Self {
        let mut gamma = Param::new(format!("{name}.gamma"), vec![ch], vec![1.0; ch]);
        let mut beta = Param::new(format!("{name}.beta"), vec![ch], vec![0.0; ch]);
        gamma.trainable = false;
        beta.trainable = false;
        Self {
            gamma,
            beta,
            running_mean: vec![0.0; ch],
            running_var: vec![1.0; ch],
            name: String::from(name),
        }
    }

    fn forward(&self, x: &mut Tensor4) {
        let plane = x.plane_len();
        for n in 0..x.n {
            for c in 0..x.c {
                let scale =
                    self.gamma.value[c] / libm::sqrtf(self.running_var[c] + 1e-3);
                let shift = self.beta.value[c] - self.running_mean[c] * scale;
                let base = (n * x.c + c) * plane;
                for v in &mut x.data[base..base + plane] {
                    *v = *v * scale + shift;
                }
            }
        }
    }
}

/// Squeeze-and-excitation: global pool, bottleneck MLP, sigmoid gate.
#[derive(Debug, Clone)]
struct SqueezeExcite {
    reduce_w: Param,
    reduce_b: Param,
    expand_w: Param,
    expand_b: Param,
    channels: usize,
    reduced: usize,
}

impl SqueezeExcite {
    fn new(name: &str, channels: usize, se_from: usize, rng: &mut ChaCha8Rng) -> Self {
        let reduced = (se_from / 4).max(1);
        let p = |n: String, shape: Vec<usize>, v: Vec<f32>| {
            let mut p = Param::new(n, shape, v);
            p.trainable = false;
            p
        };
        Self {
            reduce_w: p(
                format!("{name}.reduce.weight"),
                vec![reduced, channels],
                init::xavier_uniform(rng, reduced * channels, channels, reduced),
            ),
            reduce_b: p(format!("{name}.reduce.bias"), vec![reduced], vec![0.0; reduced]),
            expand_w: p(
                format!("{name}.expand.weight"),
                vec![channels, reduced],
                init::xavier_uniform(rng, channels * reduced, reduced, channels),
            ),
            expand_b: p(format!("{name}.expand.bias"), vec![channels], vec![0.0; channels]),
            channels,
            reduced,
        }
    }

    fn forward(&self, x: &mut Tensor4) {
        let plane = x.plane_len();
        for n in 0..x.n {
            let img = x.image_mut(n);
            let mut pooled = vec![0.0f32; self.channels];
            for (c, p) in pooled.iter_mut().enumerate() {
                *p = img[c * plane..(c + 1) * plane].iter().sum::<f32>() / plane as f32;
            }
            let mut mid = vec![0.0f32; self.reduced];
            for (r, m) in mid.iter_mut().enumerate() {
                let row = &self.reduce_w.value[r * self.channels..(r + 1) * self.channels];
                *m = swish(
                    row.iter().zip(&pooled).map(|(w, p)| w * p).sum::<f32>() + self.reduce_b.value[r],
                );
            }
            for c in 0..self.channels {
                let row = &self.expand_w.value[c * self.reduced..(c + 1) * self.reduced];
                let gate = sigmoid(
                    row.iter().zip(&mid).map(|(w, m)| w * m).sum::<f32>() + self.expand_b.value[c],
                );
                img[c * plane..(c + 1) * plane]
                    .iter_mut()
                    .for_each(|v| *v *= gate);
            }
        }
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.reduce_w);
        f(&self.reduce_b);
        f(&self.expand_w);
        f(&self.expand_b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.reduce_w);
        f(&mut self.reduce_b);
        f(&mut self.expand_w);
        f(&mut self.expand_b);
    }
}

#[derive(Debug, Clone)]
struct MbConv {
    expand: Option<(FrozenConv, FrozenBn)>,
    depthwise: FrozenConv,
    dw_bn: FrozenBn,
    se: SqueezeExcite,
    project: FrozenConv,
    proj_bn: FrozenBn,
    residual: bool,
}

impl MbConv {
    #[allow(clippy::too_many_arguments)]
    fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        expand_ratio: usize,
        kernel: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mid = in_ch * expand_ratio;
        let expand = (expand_ratio != 1).then(|| {
            (
                FrozenConv::new(&format!("{name}.expand"), in_ch, mid, 1, 1, 1, rng),
                FrozenBn::new(&format!("{name}.expand_bn"), mid),
            )
        });
        Self {
            expand,
            depthwise: FrozenConv::new(&format!("{name}.dw"), mid, mid, kernel, stride, mid, rng),
            dw_bn: FrozenBn::new(&format!("{name}.dw_bn"), mid),
            se: SqueezeExcite::new(&format!("{name}.se"), mid, in_ch, rng),
            project: FrozenConv::new(&format!("{name}.project"), mid, out_ch, 1, 1, 1, rng),
            proj_bn: FrozenBn::new(&format!("{name}.project_bn"), out_ch),
            residual: stride == 1 && in_ch == out_ch,
        }
    }

    fn forward(&self, x: &Tensor4) -> Tensor4 {
        let mut y = match &self.expand {
            Some((conv, bn)) => {
                let mut y = conv.forward(x);
                bn.forward(&mut y);
                y.data.iter_mut().for_each(|v| *v = swish(*v));
                y
            }
            None => x.clone(),
        };
        y = self.depthwise.forward(&y);
        self.dw_bn.forward(&mut y);
        y.data.iter_mut().for_each(|v| *v = swish(*v));
        self.se.forward(&mut y);
        let mut y = self.project.forward(&y);
        self.proj_bn.forward(&mut y);
        if self.residual {
            for (o, &i) in y.data.iter_mut().zip(&x.data) {
                *o += i;
            }
        }
        y
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        if let Some((conv, bn)) = &self.expand {
            f(&conv.weight);
            f(&bn.gamma);
            f(&bn.beta);
        }
        f(&self.depthwise.weight);
        f(&self.dw_bn.gamma);
        f(&self.dw_bn.beta);
        self.se.visit(f);
        f(&self.project.weight);
        f(&self.proj_bn.gamma);
        f(&self.proj_bn.beta);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        if let Some((conv, bn)) = &mut self.expand {
            f(&mut conv.weight);
            f(&mut bn.gamma);
            f(&mut bn.beta);
        }
        f(&mut self.depthwise.weight);
        f(&mut self.dw_bn.gamma);
        f(&mut self.dw_bn.beta);
        self.se.visit_mut(f);
        f(&mut self.project.weight);
        f(&mut self.proj_bn.gamma);
        f(&mut self.proj_bn.beta);
    }

}

#[derive(Debug, Clone)]
pub struct EfficientNetB1 {
    stem: FrozenConv,
    stem_bn: FrozenBn,
    blocks: Vec<MbConv>,
    head: FrozenConv,
    head_bn: FrozenBn,
}

impl EfficientNetB1 {
    /// Randomly initialized trunk (shape/wiring tests, checkpoint loading
    /// target). Pretrained weights are loaded over this by name.
    pub fn random(seed_rng: &mut ChaCha8Rng) -> Self {
        let stem_ch = 32;
        let stem = FrozenConv::new("backbone.stem", 3, stem_ch, 3, 2, 1, seed_rng);
        let stem_bn = FrozenBn::new("backbone.stem_bn", stem_ch);
        let mut blocks = Vec::new();
        let mut in_ch = stem_ch;
        for (si, &(expand, out_ch, repeats, stride, kernel)) in B1_STAGES.iter().enumerate() {
            for r in 0..repeats {
                let s = if r == 0 { stride } else { 1 };
                blocks.push(MbConv::new(
                    &format!("backbone.stage{}.block{}", si + 1, r),
                    in_ch,
                    out_ch,
                    expand,
                    kernel,
                    s,
                    seed_rng,
                ));
                in_ch = out_ch;
            }
        }
        let head = FrozenConv::new("backbone.head", in_ch, B1_OUT_CHANNELS, 1, 1, 1, seed_rng);
        let head_bn = FrozenBn::new("backbone.head_bn", B1_OUT_CHANNELS);
        Self {
            stem,
            stem_bn,
            blocks,
            head,
            head_bn,
        }
    }

    pub fn out_channels(&self) -> usize {
        B1_OUT_CHANNELS
    }

    /// Expects an RGB input `(N, 3, H, W)`; grayscale callers replicate the
    /// channel first.
    pub fn forward(&self, x: &Tensor4) -> Tensor4 {
        let mut y = self.stem.forward(x);
        self.stem_bn.forward(&mut y);
        y.data.iter_mut().for_each(|v| *v = swish(*v));
        for block in &self.blocks {
            y = block.forward(&y);
        }
        let mut y = self.head.forward(&y);
        self.head_bn.forward(&mut y);
        y.data.iter_mut().for_each(|v| *v = swish(*v));
        y
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.stem.weight);
        f(&self.stem_bn.gamma);
        f(&self.stem_bn.beta);
        for b in &self.blocks {
            b.visit(f);
        }
        f(&self.head.weight);
        f(&self.head_bn.gamma);
        f(&self.head_bn.beta);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.stem.weight);
        f(&mut self.stem_bn.gamma);
        f(&mut self.stem_bn.beta);
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
        f(&mut self.head.weight);
        f(&mut self.head_bn.gamma);
        f(&mut self.head_bn.beta);
    }

    pub fn visit_buffers(&self, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
        let mut emit = |bn: &FrozenBn| {
            f(
                &format!("{}.running_mean", bn.name),
                &[bn.running_mean.len()],
                &bn.running_mean,
            );
            f(
                &format!("{}.running_var", bn.name),
                &[bn.running_var.len()],
                &bn.running_var,
            );
        };
        emit(&self.stem_bn);
        for b in &self.blocks {
            if let Some((_, bn)) = &b.expand {
                emit(bn);
            }
            emit(&b.dw_bn);
            emit(&b.proj_bn);
        }
        emit(&self.head_bn);
    }

    pub fn load_buffer(&mut self, name: &str, data: &[f32]) -> bool {
        let try_load = |bn: &mut FrozenBn| -> bool {
            if name == format!("{}.running_mean", bn.name) {
                bn.running_mean.copy_from_slice(data);
                true
            } else if name == format!("{}.running_var", bn.name) {
                bn.running_var.copy_from_slice(data);
                true
            } else {
                false
            }
        };
        if try_load(&mut self.stem_bn) || try_load(&mut self.head_bn) {
            return true;
        }
        for b in &mut self.blocks {
            if let Some((_, bn)) = &mut b.expand {
                if try_load(bn) {
                    return true;
                }
            }
            if try_load(&mut b.dw_bn) || try_load(&mut b.proj_bn) {
                return true;
            }
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn b1_shapes_and_block_count() {
        let net = EfficientNetB1::random(&mut seeded(0));
        // B1 repeats: 2+3+3+4+4+5+2 = 23 MBConv blocks.
        assert_eq!(net.blocks.len(), 23);
        let x = Tensor4::zeros(1, 3, 64, 64);
        let y = net.forward(&x);
        // Five stride-2 reductions: 64 -> 2.
        assert_eq!(y.shape(), (1, 1280, 2, 2));
    }

    #[test]
    fn b1_params_are_frozen() {
        let net = EfficientNetB1::random(&mut seeded(1));
        let mut trainable = 0usize;
        let mut total = 0usize;
        net.visit(&mut |p| {
            total += p.len();
            if p.trainable {
                trainable += p.len();
            }
        });
        assert_eq!(trainable, 0);
        // B1 trunk is ~6.5M parameters without the classification head.
        assert!(total > 6_000_000 && total < 8_000_000, "total {total}");
    }
}
