//! 4-class tumor classifier: a frozen feature-extractor backbone, global
//! average pooling, a hidden dense layer with dropout, and a softmax head.

mod efficientnet;
mod tiny_cnn;

pub use efficientnet::{EfficientNetB1, B1_OUT_CHANNELS};
pub use tiny_cnn::{TinyCnn, TINY_CNN_CHANNELS, TINY_CNN_DOWNSCALE};

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::nn::activation::{relu_backward_inplace, relu_inplace, softmax_rows_inplace};
use crate::nn::loss::softmax_cce_with_logits;
use crate::nn::{Dense, Dropout, GlobalAvgPool, Param, VisitParams};
use crate::rng;
use crate::tensor::{Matrix, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    PretrainedB1,
    TinyCnn,
}

impl BackboneKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pretrained_b1" | "efficientnet_b1" | "b1" => Ok(BackboneKind::PretrainedB1),
            "tiny_cnn" | "tiny" => Ok(BackboneKind::TinyCnn),
            other => Err(Error::UnknownBackbone(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BackboneKind::PretrainedB1 => "pretrained_b1",
            BackboneKind::TinyCnn => "tiny_cnn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub backbone: BackboneKind,
    pub freeze_backbone: bool,
    pub hidden_units: usize,
    pub num_classes: usize,
    pub dropout_rate: f32,
    /// Side length the model expects after preprocessing.
    pub input_size: usize,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self {
            backbone: BackboneKind::TinyCnn,
            freeze_backbone: true,
            hidden_units: 512,
            num_classes: Label::COUNT,
            dropout_rate: 0.4,
            input_size: 224,
        }
    }
}

impl ClassifierSpec {
    /// The paper configuration: frozen pretrained backbone, 512-unit hidden
    /// layer, dropout 0.4, 4 classes.
    pub fn paper() -> Self {
        Self {
            backbone: BackboneKind::PretrainedB1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidSpec("num_classes must be at least 2".into()));
        }
        if self.hidden_units == 0 {
            return Err(Error::InvalidSpec("hidden_units must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidSpec("dropout_rate must lie in [0, 1)".into()));
        }
        match self.backbone {
            BackboneKind::TinyCnn => {
                if self.input_size % TINY_CNN_DOWNSCALE != 0 || self.input_size == 0 {
                    return Err(Error::InvalidSpec(format!(
                        "tiny_cnn input_size must be a positive multiple of {TINY_CNN_DOWNSCALE}"
                    )));
                }
            }
            BackboneKind::PretrainedB1 => {
                if self.input_size < 32 {
                    return Err(Error::InvalidSpec(
                        "pretrained_b1 input_size must be at least 32".into(),
                    ));
                }
                if !self.freeze_backbone {
                    return Err(Error::BackboneNotTrainable);
                }
            }
        }
        Ok(())
    }
}

/// Length-`num_classes` probability vector; entries sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProbabilities {
    pub probs: Vec<f32>,
}

impl ClassProbabilities {
    /// Fixed reporting order of the four classes.
    pub fn class_order() -> [Label; 4] {
        Label::ALL
    }

    pub fn argmax_index(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Predicted label; valid for the standard 4-class configuration.
    pub fn argmax_label(&self) -> Label {
        Label::from_index(self.argmax_index()).expect("4-class probabilities")
    }
}

#[derive(Debug, Clone)]
pub enum Backbone {
    TinyCnn(TinyCnn),
    PretrainedB1(alloc::boxed::Box<EfficientNetB1>),
}

impl Backbone {
    fn out_channels(&self) -> usize {
        match self {
            Backbone::TinyCnn(b) => b.out_channels(),
            Backbone::PretrainedB1(b) => b.out_channels(),
        }
    }
}

/// The assembled classifier.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub spec: ClassifierSpec,
    backbone: Backbone,
    gap: GlobalAvgPool,
    dense1: Dense,
    dropout: Dropout,
    dense2: Dense,
    relu_mask: Option<Vec<bool>>,
}

pub fn build_classifier(spec: &ClassifierSpec, seed: u64) -> Result<Classifier> {
    spec.validate()?;
    match spec.backbone {
        BackboneKind::TinyCnn => Classifier::assemble(spec, seed, None),
        // Pretrained weights are not bundled; loading a checkpoint through
        // `build_for_weights` is the only way to obtain a usable B1 model.
        BackboneKind::PretrainedB1 => Err(Error::BackboneWeightsUnavailable("pretrained_b1")),
    }
}

impl Classifier {
    /// Construct the model for weight loading or wiring tests. A B1 backbone
    /// starts from random weights here; callers overwrite them from a
    /// checkpoint.
    pub fn build_for_weights(spec: &ClassifierSpec, seed: u64) -> Result<Classifier> {
        spec.validate()?;
        Classifier::assemble(spec, seed, None)
    }

    fn assemble(
        spec: &ClassifierSpec,
        seed: u64,
        backbone: Option<Backbone>,
    ) -> Result<Classifier> {
        let mut init_rng = rng::seeded(rng::mix(seed, 0x17EA_C1A5));
        let mut backbone = match backbone {
            Some(b) => b,
            None => match spec.backbone {
                BackboneKind::TinyCnn => Backbone::TinyCnn(TinyCnn::new(&mut init_rng)),
                BackboneKind::PretrainedB1 => Backbone::PretrainedB1(alloc::boxed::Box::new(
                    EfficientNetB1::random(&mut init_rng),
                )),
            },
        };
        if let Backbone::TinyCnn(t) = &mut backbone {
            t.set_trainable(!spec.freeze_backbone);
        }
        let channels = backbone.out_channels();
        Ok(Classifier {
            spec: *spec,
            backbone,
            gap: GlobalAvgPool::new(),
            dense1: Dense::new("head.dense1", channels, spec.hidden_units, &mut init_rng),
            dropout: Dropout::new(spec.dropout_rate),
            dense2: Dense::new(
                "head.dense2",
                spec.hidden_units,
                spec.num_classes,
                &mut init_rng,
            ),
            relu_mask: None,
        })
    }

    pub fn backbone_out_channels(&self) -> usize {
        self.backbone.out_channels()
    }

    /// Head layer widths `(hidden, classes)`, read from the built layers.
    pub fn head_widths(&self) -> (usize, usize) {
        (self.dense1.out_features, self.dense2.out_features)
    }

    fn backbone_trains(&self, train: bool) -> bool {
        train && !self.spec.freeze_backbone && matches!(self.backbone, Backbone::TinyCnn(_))
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        if x.h != self.spec.input_size || x.w != self.spec.input_size || x.c != 1 {
            return Err(Error::ShapeMismatch {
                context: "classifier input",
                expected: format!("(N, 1, {0}, {0})", self.spec.input_size),
                got: format!("({}, {}, {}, {})", x.n, x.c, x.h, x.w),
            });
        }
        Ok(())
    }

    /// Forward to logits. `rng` drives dropout and is only consumed when
    /// `train` is set.
    pub fn forward_logits(
        &mut self,
        x: &Tensor4,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Matrix> {
        self.check_input(x)?;
        let backbone_train = self.backbone_trains(train);
        let feats = match &mut self.backbone {
            Backbone::TinyCnn(b) => b.forward(x, backbone_train),
            Backbone::PretrainedB1(b) => {
                // Grayscale replicated onto the three RGB channels.
                let mut rgb = Tensor4::zeros(x.n, 3, x.h, x.w);
                for n in 0..x.n {
                    let src = x.image(n);
                    let dst = rgb.image_mut(n);
                    for c in 0..3 {
                        dst[c * x.h * x.w..(c + 1) * x.h * x.w].copy_from_slice(src);
                    }
                }
                b.forward(&rgb)
            }
        };
        let pooled = self.gap.forward(&feats);
        let mut hidden = self.dense1.forward(&pooled, train);
        let mask = relu_inplace(&mut hidden.data);
        self.relu_mask = train.then_some(mask);
        self.dropout.forward(&mut hidden.data, train, rng);
        Ok(self.dense2.forward(&hidden, train))
    }

    /// One training forward/backward pass; gradients accumulate into the
    /// parameters. Returns the batch loss.
    pub fn train_step(
        &mut self,
        x: &Tensor4,
        labels: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<f32> {
        let logits = self.forward_logits(x, true, rng)?;
        let (loss, dlogits) = softmax_cce_with_logits(&logits, labels);
        let mut dhidden = self.dense2.backward(&dlogits);
        self.dropout.backward(&mut dhidden.data);
        let mask = self.relu_mask.take().expect("train forward caches relu mask");
        relu_backward_inplace(&mut dhidden.data, &mask);
        let dpooled = self.dense1.backward(&dhidden);
        if self.backbone_trains(true) {
            let dfeats = self.gap.backward(&dpooled);
            if let Backbone::TinyCnn(b) = &mut self.backbone {
                b.backward(&dfeats);
            }
        }
        Ok(loss)
    }

    /// Deterministic inference probabilities for a batch.
    pub fn predict_batch(&mut self, x: &Tensor4) -> Result<Matrix> {
        let mut scratch = rng::seeded(0);
        let mut logits = self.forward_logits(x, false, &mut scratch)?;
        softmax_rows_inplace(&mut logits.data, logits.cols);
        Ok(logits)
    }

    /// Summed evaluation loss and correct-prediction count for a batch.
    pub fn evaluate(&mut self, x: &Tensor4, labels: &[usize]) -> Result<(f64, usize)> {
        let probs = self.predict_batch(x)?;
        let mut loss = 0.0f64;
        let mut correct = 0usize;
        for (r, &label) in labels.iter().enumerate() {
            let row = probs.row(r);
            let p = row[label].max(1e-7);
            loss -= libm::log(p as f64);
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if argmax == label {
                correct += 1;
            }
        }
        Ok((loss, correct))
    }
}

/// Deterministic inference on a single preprocessed image.
pub fn predict_class(model: &mut Classifier, img: &ImageTensor) -> Result<ClassProbabilities> {
    let x = Tensor4::from_images(core::slice::from_ref(img));
    let probs = model.predict_batch(&x)?;
    Ok(ClassProbabilities {
        probs: probs.row(0).to_vec(),
    })
}

impl VisitParams for Classifier {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        match &self.backbone {
            Backbone::TinyCnn(b) => b.visit(f),
            Backbone::PretrainedB1(b) => b.visit(f),
        }
        self.dense1.visit(f);
        self.dense2.visit(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        match &mut self.backbone {
            Backbone::TinyCnn(b) => b.visit_mut(f),
            Backbone::PretrainedB1(b) => b.visit_mut(f),
        }
        self.dense1.visit_mut(f);
        self.dense2.visit_mut(f);
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
        match &self.backbone {
            Backbone::TinyCnn(b) => b.visit_buffers(f),
            Backbone::PretrainedB1(b) => b.visit_buffers(f),
        }
    }

    fn load_buffer(&mut self, name: &str, data: &[f32]) -> bool {
        match &mut self.backbone {
            Backbone::TinyCnn(b) => b.load_buffer(name, data),
            Backbone::PretrainedB1(b) => b.load_buffer(name, data),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{param_counts, params_checksum, zero_grads};
    use crate::rng::seeded;

    fn small_spec() -> ClassifierSpec {
        ClassifierSpec {
            backbone: BackboneKind::TinyCnn,
            input_size: 32,
            ..ClassifierSpec::default()
        }
    }

    fn random_batch(n: usize, size: usize, seed: u64) -> Tensor4 {
        use rand::Rng;
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
    fn output_rows_are_probability_vectors() {
        let mut model = build_classifier(&small_spec(), 1).unwrap();
        let x = random_batch(2, 32, 5);
        let probs = model.predict_batch(&x).unwrap();
        assert_eq!((probs.rows, probs.cols), (2, 4));
        for r in 0..2 {
            let sum: f32 = probs.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(probs.row(r).iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn inference_is_deterministic_and_training_dropout_is_not() {
        let mut model = build_classifier(&small_spec(), 2).unwrap();
        let x = random_batch(1, 32, 6);
        let a = model.predict_batch(&x).unwrap();
        let b = model.predict_batch(&x).unwrap();
        assert_eq!(a, b);

        let la = model
            .forward_logits(&x, true, &mut seeded(100))
            .unwrap();
        let lb = model
            .forward_logits(&x, true, &mut seeded(101))
            .unwrap();
        assert_ne!(la, lb, "different dropout seeds must differ");
        let lc = model
            .forward_logits(&x, true, &mut seeded(100))
            .unwrap();
        assert_eq!(la, lc, "same dropout seed must agree");
    }

    #[test]
    fn frozen_backbone_param_count_is_head_only() {
        let model = build_classifier(&small_spec(), 3).unwrap();
        let (_, trainable) = param_counts(&model);
        let c = TINY_CNN_CHANNELS;
        assert_eq!(trainable, c * 512 + 512 + 512 * 4 + 4);
        assert_eq!(model.head_widths(), (512, 4));
    }

    #[test]
    fn training_updates_head_but_not_frozen_backbone() {
        let mut model = build_classifier(&small_spec(), 4).unwrap();
        let x = random_batch(4, 32, 7);
        let labels = [0usize, 1, 2, 3];

        let mut backbone_before = Vec::new();
        let mut head_before = Vec::new();
        model.visit_params(&mut |p| {
            if p.trainable {
                head_before.push(p.value.clone());
            } else {
                backbone_before.push(p.value.clone());
            }
        });

        zero_grads(&mut model);
        model.train_step(&x, &labels, &mut seeded(8)).unwrap();
        // Apply a plain gradient step to trainable params only.
        model.visit_params_mut(&mut |p| {
            if p.trainable {
                for (v, g) in p.value.iter_mut().zip(&p.grad) {
                    *v -= 0.1 * g;
                }
            }
        });

        let mut backbone_after = Vec::new();
        let mut head_after = Vec::new();
        model.visit_params(&mut |p| {
            if p.trainable {
                head_after.push(p.value.clone());
            } else {
                backbone_after.push(p.value.clone());
            }
        });
        assert_eq!(backbone_before, backbone_after, "backbone must stay bit-identical");
        assert_ne!(head_before, head_after, "head must move");
    }

    #[test]
    fn unfrozen_backbone_receives_gradients() {
        let spec = ClassifierSpec {
            freeze_backbone: false,
            ..small_spec()
        };
        let mut model = build_classifier(&spec, 4).unwrap();
        let before = params_checksum(&model);
        let x = random_batch(2, 32, 9);
        zero_grads(&mut model);
        model.train_step(&x, &[0, 1], &mut seeded(10)).unwrap();
        let mut any_backbone_grad = false;
        model.visit_params(&mut |p| {
            if p.name.starts_with("backbone") && p.grad.iter().any(|&g| g != 0.0) {
                any_backbone_grad = true;
            }
        });
        assert!(any_backbone_grad);
        assert_eq!(before, params_checksum(&model), "grads must not touch values");
    }

    #[test]
    fn permuting_output_rows_permutes_probabilities() {
        let mut model = build_classifier(&small_spec(), 11).unwrap();
        let x = random_batch(1, 32, 12);
        let base = model.predict_batch(&x).unwrap();

        // Swap output units 0 and 3 (weights and biases).
        let perm = [3usize, 1, 2, 0];
        model.visit_params_mut(&mut |p| {
            if p.name == "head.dense2.weight" {
                let cols = p.value.len() / 4;
                let orig = p.value.clone();
                for (new_row, &old_row) in perm.iter().enumerate() {
                    p.value[new_row * cols..(new_row + 1) * cols]
                        .copy_from_slice(&orig[old_row * cols..(old_row + 1) * cols]);
                }
            } else if p.name == "head.dense2.bias" {
                let orig = p.value.clone();
                for (new_row, &old_row) in perm.iter().enumerate() {
                    p.value[new_row] = orig[old_row];
                }
            }
        });
        let permuted = model.predict_batch(&x).unwrap();
        for (new_row, &old_row) in perm.iter().enumerate() {
            assert!((permuted.at(0, new_row) - base.at(0, old_row)).abs() < 1e-6);
        }
    }

    #[test]
    fn pretrained_b1_requires_weights() {
        let spec = ClassifierSpec {
            backbone: BackboneKind::PretrainedB1,
            input_size: 64,
            ..ClassifierSpec::default()
        };
        assert!(matches!(
            build_classifier(&spec, 0),
            Err(Error::BackboneWeightsUnavailable(_))
        ));
        // But the wiring is constructible for weight loading.
        let mut model = Classifier::build_for_weights(&spec, 0).unwrap();
        assert_eq!(model.backbone_out_channels(), B1_OUT_CHANNELS);
        let x = random_batch(1, 64, 13);
        let probs = model.predict_batch(&x).unwrap();
        let sum: f32 = probs.row(0).iter().sum();
        assert!((sum - 1.0).abs() < 1e-5);
    }

    #[test]
    fn unknown_backbone_and_bad_shapes_error() {
        assert!(matches!(
            BackboneKind::parse("resnet50"),
            Err(Error::UnknownBackbone(_))
        ));
        let mut model = build_classifier(&small_spec(), 1).unwrap();
        let x = random_batch(1, 64, 2);
        assert!(matches!(
            model.predict_batch(&x),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn overfits_single_image() {
        // Memorization fixture: one image labeled glioma; after head-only
        // training the argmax must be glioma.
        let mut model = build_classifier(&small_spec(), 21).unwrap();
        let x = random_batch(1, 32, 22);
        let label = Label::Glioma.index();
        let mut rng = seeded(23);
        for _ in 0..60 {
            zero_grads(&mut model);
            model.train_step(&x, &[label], &mut rng).unwrap();
            model.visit_params_mut(&mut |p| {
                if p.trainable {
                    for (v, g) in p.value.iter_mut().zip(&p.grad) {
                        *v -= 0.05 * g;
                    }
                }
            });
        }
        let img = ImageTensor::new(32, 32, x.data.clone());
        let probs = predict_class(&mut model, &img).unwrap();
        assert_eq!(probs.argmax_label(), Label::Glioma);
        let sum: f32 = probs.probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
}
