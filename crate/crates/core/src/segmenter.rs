//! Residual U-Net for binary tumor segmentation.
//!
//! Encoder-decoder with skip connections, residual blocks, and batch
//! normalization. The default shape has a 1024-filter bottleneck and counts
//! exactly 23 convolutional layers in 10 residual blocks:
//!
//! * stem conv (1)
//! * 4 encoder residual blocks, 2 convs each, followed by 2x2 max pooling (8)
//! * bottleneck entry conv doubling the channels (1)
//! * bottleneck residual block (2)
//! * 4 decoder residual blocks after transposed-conv upsampling and skip
//!   concatenation (8)
//! * pre-output residual block at base width (2)
//! * 1x1 output conv with sigmoid (1)
//!
//! The audit counts forward convolutions on the main path; 1x1 shortcut
//! projections and the transposed upsampling convs are reported separately,
//! following the usual ResNet/U-Net depth-counting conventions.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageTensor, Mask};
use crate::nn::activation::{relu_backward_inplace, relu_inplace, sigmoid};
use crate::nn::loss::SegLoss;
use crate::nn::{BatchNorm2d, Conv2d, ConvTranspose2d, MaxPool2d, Param, VisitParams};
use crate::rng;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmenterSpec {
    /// Number of encoder levels (pooling steps).
    pub depth: usize,
    pub base_filters: usize,
    /// Must equal `base_filters * 2^depth` under the doubling scheme.
    pub bottleneck_filters: usize,
    pub filter_size: usize,
    /// Total residual blocks; equals `2 * depth + 2` for this arrangement.
    pub residual_blocks: usize,
    pub use_batch_norm: bool,
    /// Side length the model expects after preprocessing.
    pub input_size: usize,
}

impl Default for SegmenterSpec {
    fn default() -> Self {
        Self {
            depth: 4,
            base_filters: 64,
            bottleneck_filters: 1024,
            filter_size: 3,
            residual_blocks: 10,
            use_batch_norm: true,
            input_size: 256,
        }
    }
}

impl SegmenterSpec {
    /// Paper shape at reduced width for desk-scale training.
    pub fn reduced(base_filters: usize, input_size: usize) -> Self {
        Self {
            base_filters,
            bottleneck_filters: base_filters << 4,
            input_size,
            ..Self::default()
        }
    }

    /// Arbitrary small shape for tests.
    pub fn small(depth: usize, base_filters: usize, input_size: usize) -> Self {
        Self {
            depth,
            base_filters,
            bottleneck_filters: base_filters << depth,
            filter_size: 3,
            residual_blocks: 2 * depth + 2,
            use_batch_norm: true,
            input_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_filters == 0 {
            return Err(Error::InvalidSpec("depth and base_filters must be positive".into()));
        }
        if self.bottleneck_filters != self.base_filters << self.depth {
            return Err(Error::InvalidSpec(format!(
                "bottleneck_filters must be base_filters * 2^depth = {}",
                self.base_filters << self.depth
            )));
        }
        if self.filter_size % 2 == 0 || self.filter_size == 0 {
            return Err(Error::InvalidSpec("filter_size must be odd".into()));
        }
        if self.residual_blocks != 2 * self.depth + 2 {
            return Err(Error::InvalidSpec(format!(
                "residual_blocks must be 2 * depth + 2 = {}",
                2 * self.depth + 2
            )));
        }
        let div = 1usize << self.depth;
        if self.input_size == 0 || self.input_size % div != 0 {
            return Err(Error::ResolutionNotDivisible {
                side: "input_size",
                value: self.input_size,
                divisor: div,
            });
        }
        Ok(())
    }
}

/// Binary mask produced by thresholding the sigmoid output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationMask {
    pub mask: Mask,
    pub threshold_used: f64,
}

/// Two convolutions with batch norm and an identity or projected shortcut.
#[derive(Debug, Clone)]
struct ResidualBlock {
    conv1: Conv2d,
    bn1: Option<BatchNorm2d>,
    conv2: Conv2d,
    bn2: Option<BatchNorm2d>,
    proj: Option<(Conv2d, Option<BatchNorm2d>)>,
    mask1: Option<Vec<bool>>,
    mask_out: Option<Vec<bool>>,
}

impl ResidualBlock {
    fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        use_bn: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bn = |suffix: &str, ch: usize| use_bn.then(|| BatchNorm2d::new(&format!("{name}.{suffix}"), ch));
        let proj = (in_ch != out_ch).then(|| {
            (
                Conv2d::new(&format!("{name}.proj"), in_ch, out_ch, 1, 1, 0, !use_bn, rng),
                bn("proj_bn", out_ch),
            )
        });
        Self {
            conv1: Conv2d::same(&format!("{name}.conv1"), in_ch, out_ch, k, !use_bn, rng),
            bn1: bn("bn1", out_ch),
            conv2: Conv2d::same(&format!("{name}.conv2"), out_ch, out_ch, k, !use_bn, rng),
            bn2: bn("bn2", out_ch),
            proj,
            mask1: None,
            mask_out: None,
        }
    }

    fn forward(&mut self, x: &Tensor4, train: bool) -> Tensor4 {
        let mut y = self.conv1.forward(x, train);
        if let Some(bn) = &mut self.bn1 {
            y = bn.forward(&y, train);
        }
        let m1 = relu_inplace(&mut y.data);
        let mut y = self.conv2.forward(&y, train);
        if let Some(bn) = &mut self.bn2 {
            y = bn.forward(&y, train);
        }
        let shortcut = match &mut self.proj {
            Some((conv, bn)) => {
                let mut s = conv.forward(x, train);
                if let Some(bn) = bn {
                    s = bn.forward(&s, train);
                }
                s
            }
            None => x.clone(),
        };
        for (o, &s) in y.data.iter_mut().zip(&shortcut.data) {
            *o += s;
        }
        let mout = relu_inplace(&mut y.data);
        self.mask1 = train.then_some(m1);
        self.mask_out = train.then_some(mout);
        y
    }

    fn backward(&mut self, grad_out: &Tensor4) -> Tensor4 {
        let mut g = grad_out.clone();
        relu_backward_inplace(&mut g.data, &self.mask_out.take().expect("forward first"));

        // Shortcut branch.
        let mut dx_short = match &mut self.proj {
            Some((conv, bn)) => {
                let gs = match bn {
                    Some(bn) => bn.backward(&g),
                    None => g.clone(),
                };
                conv.backward(&gs)
            }
            None => g.clone(),
        };

        // Main branch.
        let mut gm = match &mut self.bn2 {
            Some(bn) => bn.backward(&g),
            None => g,
        };
        gm = self.conv2.backward(&gm);
        relu_backward_inplace(&mut gm.data, &self.mask1.take().expect("forward first"));
        if let Some(bn) = &mut self.bn1 {
            gm = bn.backward(&gm);
        }
        let dx_main = self.conv1.backward(&gm);

        for (s, &m) in dx_short.data.iter_mut().zip(&dx_main.data) {
            *s += m;
        }
        dx_short
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.conv1.visit(f);
        if let Some(bn) = &self.bn1 {
            bn.visit(f);
        }
        self.conv2.visit(f);
        if let Some(bn) = &self.bn2 {
            bn.visit(f);
        }
        if let Some((conv, bn)) = &self.proj {
            conv.visit(f);
            if let Some(bn) = bn {
                bn.visit(f);
            }
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv1.visit_mut(f);
        if let Some(bn) = &mut self.bn1 {
            bn.visit_mut(f);
        }
        self.conv2.visit_mut(f);
        if let Some(bn) = &mut self.bn2 {
            bn.visit_mut(f);
        }
        if let Some((conv, bn)) = &mut self.proj {
            conv.visit_mut(f);
            if let Some(bn) = bn {
                bn.visit_mut(f);
            }
        }
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
        for bn in [&self.bn1, &self.bn2].into_iter().flatten() {
            bn.visit_buffers(f);
        }
        if let Some((_, Some(bn))) = &self.proj {
            bn.visit_buffers(f);
        }
    }

    fn load_buffer(&mut self, name: &str, data: &[f32]) -> bool {
        for bn in [&mut self.bn1, &mut self.bn2].into_iter().flatten() {
            if bn.load_buffer(name, data) {
                return true;
            }
        }
        if let Some((_, Some(bn))) = &mut self.proj {
            if bn.load_buffer(name, data) {
                return true;
            }
        }
        false
    }

    fn has_projection(&self) -> bool {
        self.proj.is_some()
    }
}

/// Architecture audit of a built model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmenterAudit {
    /// Forward convolutions on the main path (stem, block convs, bottleneck
    /// entry, output).
    pub conv_layers: usize,
    pub residual_blocks: usize,
    /// 1x1 shortcut projection convs, excluded from `conv_layers`.
    pub shortcut_projections: usize,
    /// Transposed upsampling convs, excluded from `conv_layers`.
    pub transposed_convs: usize,
    pub params_total: usize,
    pub params_trainable: usize,
}

#[derive(Debug, Clone)]
pub struct ResUNet {
    pub spec: SegmenterSpec,
    stem: Conv2d,
    stem_bn: Option<BatchNorm2d>,
    stem_mask: Option<Vec<bool>>,
    enc: Vec<(ResidualBlock, MaxPool2d)>,
    entry: Conv2d,
    entry_bn: Option<BatchNorm2d>,
    entry_mask: Option<Vec<bool>>,
    bottleneck: ResidualBlock,
    dec: Vec<(ConvTranspose2d, ResidualBlock)>,
    pre_out: ResidualBlock,
    out_conv: Conv2d,
    /// Test hook: zeroes the numbered skip (0 = shallowest encoder level)
    /// before concatenation.
    pub skip_ablation: Option<usize>,
}

pub fn build_segmenter(spec: &SegmenterSpec, seed: u64) -> Result<ResUNet> {
    spec.validate()?;
    let mut rng = rng::seeded(rng::mix(seed, 0x5E6_AE17));
    let k = spec.filter_size;
    let use_bn = spec.use_batch_norm;
    let bn = |name: &str, ch: usize| use_bn.then(|| BatchNorm2d::new(name, ch));

    let base = spec.base_filters;
    let stem = Conv2d::same("stem.conv", 1, base, k, !use_bn, &mut rng);
    let stem_bn = bn("stem.bn", base);

    let mut enc = Vec::with_capacity(spec.depth);
    let mut ch = base;
    for i in 0..spec.depth {
        let out = base << i;
        enc.push((
            ResidualBlock::new(&format!("enc{}", i + 1), ch, out, k, use_bn, &mut rng),
            MaxPool2d::new(2),
        ));
        ch = out;
    }

    let bneck = spec.bottleneck_filters;
    let entry = Conv2d::same("bottleneck.entry", ch, bneck, k, !use_bn, &mut rng);
    let entry_bn = bn("bottleneck.entry_bn", bneck);
    let bottleneck = ResidualBlock::new("bottleneck.block", bneck, bneck, k, use_bn, &mut rng);

    let mut dec = Vec::with_capacity(spec.depth);
    let mut up_in = bneck;
    for i in 0..spec.depth {
        let out = up_in / 2; // matches the skip width at this level
        let up = ConvTranspose2d::new(&format!("dec{}.up", i + 1), up_in, out, 2, 2, true, &mut rng);
        let block = ResidualBlock::new(&format!("dec{}.block", i + 1), out * 2, out, k, use_bn, &mut rng);
        dec.push((up, block));
        up_in = out;
    }

    let pre_out = ResidualBlock::new("pre_out", base, base, k, use_bn, &mut rng);
    let out_conv = Conv2d::new("out.conv", base, 1, 1, 1, 0, true, &mut rng);

    let net = ResUNet {
        spec: *spec,
        stem,
        stem_bn,
        stem_mask: None,
        enc,
        entry,
        entry_bn,
        entry_mask: None,
        bottleneck,
        dec,
        pre_out,
        out_conv,
        skip_ablation: None,
    };
    let audit = net.audit();
    debug_assert_eq!(audit.conv_layers, 4 * spec.depth + 7);
    debug_assert_eq!(audit.residual_blocks, spec.residual_blocks);
    Ok(net)
}

impl ResUNet {
    pub fn audit(&self) -> SegmenterAudit {
        let blocks: Vec<&ResidualBlock> = self
            .enc
            .iter()
            .map(|(b, _)| b)
            .chain(core::iter::once(&self.bottleneck))
            .chain(self.dec.iter().map(|(_, b)| b))
            .chain(core::iter::once(&self.pre_out))
            .collect();
        let conv_layers = 1 /* stem */ + 2 * blocks.len() + 1 /* entry */ + 1 /* out */;
        let shortcut_projections = blocks.iter().filter(|b| b.has_projection()).count();
        let (params_total, params_trainable) = crate::nn::param_counts(self);
        SegmenterAudit {
            conv_layers,
            residual_blocks: blocks.len(),
            shortcut_projections,
            transposed_convs: self.dec.len(),
            params_total,
            params_trainable,
        }
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        let div = 1usize << self.spec.depth;
        if x.c != 1 {
            return Err(Error::ShapeMismatch {
                context: "segmenter input",
                expected: "single channel".into(),
                got: format!("{} channels", x.c),
            });
        }
        for (side, value) in [("height", x.h), ("width", x.w)] {
            if value == 0 || value % div != 0 {
                return Err(Error::ResolutionNotDivisible {
                    side,
                    value,
                    divisor: div,
                });
            }
        }
        Ok(())
    }

    /// Forward pass to per-pixel logits, shape-preserving.
    pub fn forward_logits(&mut self, x: &Tensor4, train: bool) -> Result<Tensor4> {
        self.check_input(x)?;
        let mut h = self.stem.forward(x, train);
        if let Some(bn) = &mut self.stem_bn {
            h = bn.forward(&h, train);
        }
        let sm = relu_inplace(&mut h.data);
        self.stem_mask = train.then_some(sm);

        let mut skips: Vec<Tensor4> = Vec::with_capacity(self.enc.len());
        for (block, pool) in &mut self.enc {
            let b = block.forward(&h, train);
            h = pool.forward(&b, train);
            skips.push(b);
        }

        let mut h = self.entry.forward(&h, train);
        if let Some(bn) = &mut self.entry_bn {
            h = bn.forward(&h, train);
        }
        let em = relu_inplace(&mut h.data);
        self.entry_mask = train.then_some(em);
        let mut h = self.bottleneck.forward(&h, train);

        for (level, (up, block)) in self.dec.iter_mut().enumerate() {
            let u = up.forward(&h, train);
            let skip_index = self.enc.len() - 1 - level;
            let mut skip = skips[skip_index].clone();
            if self.skip_ablation == Some(skip_index) {
                skip.data.iter_mut().for_each(|v| *v = 0.0);
            }
            debug_assert_eq!((u.h, u.w), (skip.h, skip.w), "skip resolution");
            let mut cat = Tensor4::zeros(u.n, u.c + skip.c, u.h, u.w);
            let plane = u.plane_len();
            for n in 0..u.n {
                let dst = cat.image_mut(n);
                dst[..u.c * plane].copy_from_slice(u.image(n));
                dst[u.c * plane..].copy_from_slice(skip.image(n));
            }
            h = block.forward(&cat, train);
        }

        let h = self.pre_out.forward(&h, train);
        Ok(self.out_conv.forward(&h, train))
    }

    /// Sigmoid probabilities in the open interval (0, 1).
    pub fn forward_probs(&mut self, x: &Tensor4) -> Result<Tensor4> {
        Ok(self
            .forward_logits(x, false)?
            .map(sigmoid))
    }

    /// One training step's backward pass from the logit gradient.
    pub fn backward(&mut self, grad_logits: &Tensor4) {
        let g = self.out_conv.backward(grad_logits);
        let mut g = self.pre_out.backward(&g);

        let mut skip_grads: Vec<Option<Tensor4>> = (0..self.enc.len()).map(|_| None).collect();
        for (level, (up, block)) in self.dec.iter_mut().enumerate().rev() {
            let dcat = block.backward(&g);
            let up_c = up.out_ch;
            let skip_index = self.enc.len() - 1 - level;
            let plane = dcat.plane_len();
            let skip_c = dcat.c - up_c;
            let mut du = Tensor4::zeros(dcat.n, up_c, dcat.h, dcat.w);
            let mut dskip = Tensor4::zeros(dcat.n, skip_c, dcat.h, dcat.w);
            for n in 0..dcat.n {
                let src = dcat.image(n);
                du.image_mut(n).copy_from_slice(&src[..up_c * plane]);
                dskip.image_mut(n).copy_from_slice(&src[up_c * plane..]);
            }
            if self.skip_ablation != Some(skip_index) {
                skip_grads[skip_index] = Some(dskip);
            }
            g = up.backward(&du);
        }

        let mut g = self.bottleneck.backward(&g);
        relu_backward_inplace(&mut g.data, &self.entry_mask.take().expect("forward first"));
        if let Some(bn) = &mut self.entry_bn {
            g = bn.backward(&g);
        }
        let mut g = self.entry.backward(&g);

        for (i, (block, pool)) in self.enc.iter_mut().enumerate().rev() {
            let mut dblock = pool.backward(&g);
            if let Some(extra) = skip_grads[i].take() {
                for (d, &e) in dblock.data.iter_mut().zip(&extra.data) {
                    *d += e;
                }
            }
            g = block.backward(&dblock);
        }

        relu_backward_inplace(&mut g.data, &self.stem_mask.take().expect("forward first"));
        if let Some(bn) = &mut self.stem_bn {
            g = bn.backward(&g);
        }
        self.stem.backward(&g);
    }

    /// One training forward/backward pass; gradients accumulate. `targets`
    /// is the (N, 1, H, W) mask tensor in {0, 1}.
    pub fn train_step(&mut self, x: &Tensor4, targets: &Tensor4, loss: SegLoss) -> Result<f32> {
        let logits = self.forward_logits(x, true)?;
        let (loss_value, grad_flat) = loss.loss_and_grad(&logits.data, &targets.data);
        let grad = Tensor4::from_vec(logits.n, logits.c, logits.h, logits.w, grad_flat);
        self.backward(&grad);
        Ok(loss_value)
    }

    /// Summed evaluation loss and hard Dice (threshold 0.5) for a batch.
    pub fn evaluate(&mut self, x: &Tensor4, targets: &Tensor4, loss: SegLoss) -> Result<(f64, f64)> {
        let logits = self.forward_logits(x, false)?;
        let (loss_value, _) = loss.loss_and_grad(&logits.data, &targets.data);
        let mut dice_sum = 0.0;
        let plane = logits.plane_len();
        for n in 0..logits.n {
            let pred = Mask::new(
                logits.h,
                logits.w,
                logits.image(n)[..plane]
                    .iter()
                    .map(|&z| (sigmoid(z) >= 0.5) as u8)
                    .collect(),
            );
            let truth = Mask::new(
                logits.h,
                logits.w,
                targets.image(n)[..plane].iter().map(|&t| (t >= 0.5) as u8).collect(),
            );
            dice_sum += crate::metrics::dice_masks(&pred, &truth)?;
        }
        Ok((loss_value as f64 * logits.n as f64, dice_sum))
    }
}

/// Threshold the sigmoid output into a binary mask.
pub fn predict_mask(model: &mut ResUNet, img: &ImageTensor, threshold: f64) -> Result<SegmentationMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidThreshold(threshold));
    }
    let x = Tensor4::from_images(core::slice::from_ref(img));
    let probs = model.forward_probs(&x)?;
    let mask = Mask::new(
        probs.h,
        probs.w,
        probs
            .data
            .iter()
            .map(|&p| (p as f64 >= threshold) as u8)
            .collect(),
    );
    Ok(SegmentationMask {
        mask,
        threshold_used: threshold,
    })
}

impl VisitParams for ResUNet {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.stem.visit(f);
        if let Some(bn) = &self.stem_bn {
            bn.visit(f);
        }
        for (block, _) in &self.enc {
            block.visit(f);
        }
        self.entry.visit(f);
        if let Some(bn) = &self.entry_bn {
            bn.visit(f);
        }
        self.bottleneck.visit(f);
        for (up, block) in &self.dec {
            up.visit(f);
            block.visit(f);
        }
        self.pre_out.visit(f);
        self.out_conv.visit(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.stem.visit_mut(f);
        if let Some(bn) = &mut self.stem_bn {
            bn.visit_mut(f);
        }
        for (block, _) in &mut self.enc {
            block.visit_mut(f);
        }
        self.entry.visit_mut(f);
        if let Some(bn) = &mut self.entry_bn {
            bn.visit_mut(f);
        }
        self.bottleneck.visit_mut(f);
        for (up, block) in &mut self.dec {
            up.visit_mut(f);
            block.visit_mut(f);
        }
        self.pre_out.visit_mut(f);
        self.out_conv.visit_mut(f);
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
        if let Some(bn) = &self.stem_bn {
            bn.visit_buffers(f);
        }
        for (block, _) in &self.enc {
            block.visit_buffers(f);
        }
        if let Some(bn) = &self.entry_bn {
            bn.visit_buffers(f);
        }
        self.bottleneck.visit_buffers(f);
        for (_, block) in &self.dec {
            block.visit_buffers(f);
        }
        self.pre_out.visit_buffers(f);
    }

    fn load_buffer(&mut self, name: &str, data: &[f32]) -> bool {
        if let Some(bn) = &mut self.stem_bn {
            if bn.load_buffer(name, data) {
                return true;
            }
        }
        for (block, _) in &mut self.enc {
            if block.load_buffer(name, data) {
                return true;
            }
        }
        if let Some(bn) = &mut self.entry_bn {
            if bn.load_buffer(name, data) {
                return true;
            }
        }
        if self.bottleneck.load_buffer(name, data) {
            return true;
        }
        for (_, block) in &mut self.dec {
            if block.load_buffer(name, data) {
                return true;
            }
        }
        self.pre_out.load_buffer(name, data)
    }
}

/// Convenience: borrow a boxed model mutably across trainer generics.
pub type BoxedResUNet = Box<ResUNet>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn random_input(n: usize, size: usize, seed: u64) -> Tensor4 {
        let mut rng = seeded(seed);
        Tensor4::from_vec(
            n,
            1,
            size,
            size,
            (0..n * size * size).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
    }

    #[test]
    fn small_shape_and_bottleneck_width() {
        let spec = SegmenterSpec::small(2, 8, 64);
        assert_eq!(spec.bottleneck_filters, 32);
        let mut net = build_segmenter(&spec, 1).unwrap();
        let x = random_input(1, 64, 2);
        let y = net.forward_probs(&x).unwrap();
        assert_eq!(y.shape(), (1, 1, 64, 64));
        assert!(y.data.iter().all(|&p| p > 0.0 && p < 1.0));
        let audit = net.audit();
        assert_eq!(audit.residual_blocks, 6);
        assert_eq!(audit.conv_layers, 15);
    }

    #[test]
    fn default_audit_counts_match_paper() {
        // Construct-only at paper defaults: 23 conv layers, 10 blocks.
        let net = build_segmenter(&SegmenterSpec::default(), 0).unwrap();
        let audit = net.audit();
        assert_eq!(audit.conv_layers, 23);
        assert_eq!(audit.residual_blocks, 10);
        assert_eq!(audit.transposed_convs, 4);
        assert_eq!(audit.shortcut_projections, 7);
    }

    #[test]
    fn indivisible_input_rejected() {
        let spec = SegmenterSpec::small(2, 4, 64);
        let mut net = build_segmenter(&spec, 3).unwrap();
        let x = random_input(1, 62, 4);
        assert!(matches!(
            net.forward_probs(&x),
            Err(Error::ResolutionNotDivisible { .. })
        ));
        let bad_spec = SegmenterSpec {
            input_size: 62,
            ..SegmenterSpec::small(2, 4, 64)
        };
        assert!(bad_spec.validate().is_err());
    }

    #[test]
    fn threshold_semantics() {
        let spec = SegmenterSpec::small(1, 4, 32);
        let mut net = build_segmenter(&spec, 5).unwrap();
        let img = ImageTensor::new(32, 32, random_input(1, 32, 6).data);

        assert!(matches!(
            predict_mask(&mut net, &img, 0.0),
            Err(Error::InvalidThreshold(_))
        ));
        assert!(matches!(
            predict_mask(&mut net, &img, 1.0),
            Err(Error::InvalidThreshold(_))
        ));

        let a = predict_mask(&mut net, &img, 0.5).unwrap();
        let b = predict_mask(&mut net, &img, 0.5).unwrap();
        assert_eq!(a, b, "prediction must be deterministic");
        assert_eq!(a.threshold_used, 0.5);

        // Raising the threshold never adds foreground pixels.
        let mut prev = a.mask.foreground_count();
        for t in [0.6, 0.7, 0.8, 0.9] {
            let m = predict_mask(&mut net, &img, t).unwrap();
            let fg = m.mask.foreground_count();
            assert!(fg <= prev, "threshold {t} added pixels");
            prev = fg;
        }
    }

    #[test]
    fn skip_ablation_changes_output() {
        let spec = SegmenterSpec::small(2, 4, 32);
        let mut net = build_segmenter(&spec, 7).unwrap();
        let x = random_input(1, 32, 8);
        let base = net.forward_probs(&x).unwrap();
        for skip in 0..2 {
            net.skip_ablation = Some(skip);
            let ablated = net.forward_probs(&x).unwrap();
            assert_ne!(base, ablated, "skip {skip} appears to be dead wiring");
        }
        net.skip_ablation = None;
        assert_eq!(net.forward_probs(&x).unwrap(), base);
    }

    #[test]
    fn gradients_flow_everywhere() {
        let spec = SegmenterSpec::small(2, 4, 16);
        let mut net = build_segmenter(&spec, 9).unwrap();
        let x = random_input(2, 16, 10);
        let mut targets = Tensor4::zeros(2, 1, 16, 16);
        targets.data.iter_mut().enumerate().for_each(|(i, v)| {
            *v = ((i / 3) % 2) as f32;
        });
        crate::nn::zero_grads(&mut net);
        let loss = net.train_step(&x, &targets, SegLoss::default()).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        let mut zero_grad_params = alloc::vec::Vec::new();
        net.visit_params(&mut |p| {
            if p.grad.iter().all(|&g| g == 0.0) {
                zero_grad_params.push(p.name.clone());
            }
        });
        assert!(
            zero_grad_params.is_empty(),
            "params with zero gradient: {zero_grad_params:?}"
        );
    }

    #[test]
    fn overfits_single_phantom() {
        // Memorization fixture: a slim net must reach Dice >= 0.99 on one
        // phantom it trains on.
        use crate::metrics::dice_masks;
        use crate::phantom::{generate_phantoms, ClassMix};

        let phantoms = generate_phantoms(4, 32, 77, ClassMix([1.0, 0.0, 0.0, 0.0])).unwrap();
        let p = &phantoms[0];
        let truth = p.mask.clone().unwrap();
        let x = Tensor4::from_images(core::slice::from_ref(&p.pixels));
        let mut targets = Tensor4::zeros(1, 1, 32, 32);
        for (t, &m) in targets.data.iter_mut().zip(&truth.data) {
            *t = m as f32;
        }

        let spec = SegmenterSpec::small(2, 8, 32);
        let mut net = build_segmenter(&spec, 11).unwrap();
        let mut opt = crate::training::Adam::new(1e-2, 0.0);
        for _ in 0..120 {
            crate::nn::zero_grads(&mut net);
            net.train_step(&x, &targets, SegLoss::default()).unwrap();
            opt.step(&mut net).unwrap();
        }
        let pred = predict_mask(&mut net, &p.pixels, 0.5).unwrap();
        let dice = dice_masks(&pred.mask, &truth).unwrap();
        assert!(dice >= 0.99, "memorization dice {dice}");
    }
}
