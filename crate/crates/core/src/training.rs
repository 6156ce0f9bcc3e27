//! The training engine shared by both models: Adam with L2 weight decay,
//! an epoch loop with seeded shuffling and augmentation, reduce-on-plateau
//! learning-rate scheduling, early stopping, and best-checkpoint retention.
//!
//! Everything is deterministic in `TrainConfig::seed`: data order,
//! augmentation draws, dropout masks, and initialization all derive from it.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{snapshot_params, zero_grads, Param, VisitParams};
use crate::preprocess::AugmentationPolicy;
use crate::rng;

/// Minimum improvement that counts as progress for the scheduler and early
/// stopping; avoids resets from float noise.
pub const IMPROVEMENT_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Segmentation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStopMetric {
    ValAccuracy,
    ValLoss,
}

impl EarlyStopMetric {
    /// Whether larger values are better.
    pub fn maximize(self) -> bool {
        matches!(self, EarlyStopMetric::ValAccuracy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout_rate: f64,
    /// Multiplier applied to the learning rate on plateau.
    pub lr_factor: f64,
    /// Non-improving epochs before the learning rate is reduced.
    pub lr_patience: usize,
    pub early_stop_metric: EarlyStopMetric,
    /// Non-improving epochs before training stops.
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Classification preset: lr 0.001, batch 32, weight decay 0.0001,
    /// dropout 0.4, 50 epochs, reduce by 0.3 after 2 non-improving epochs,
    /// early stopping on validation accuracy.
    pub fn classification_paper() -> Self {
        Self {
            task: Task::Classification,
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            dropout_rate: 0.4,
            lr_factor: 0.3,
            lr_patience: 2,
            early_stop_metric: EarlyStopMetric::ValAccuracy,
            early_stop_patience: 10,
            seed: 0,
        }
    }

    /// Segmentation preset: lr 0.0001, batch 32, weight decay 0.0001,
    /// early stopping on validation loss.
    pub fn segmentation_paper() -> Self {
        Self {
            task: Task::Segmentation,
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            dropout_rate: 0.0,
            lr_factor: 0.3,
            lr_patience: 2,
            early_stop_metric: EarlyStopMetric::ValLoss,
            early_stop_patience: 10,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidConfig(String::from(msg)))
            }
        };
        check(self.epochs >= 1, "epochs must be at least 1")?;
        check(self.batch_size >= 1, "batch_size must be at least 1")?;
        check(self.learning_rate > 0.0, "learning_rate must be positive")?;
        check(self.weight_decay >= 0.0, "weight_decay must be non-negative")?;
        check(
            (0.0..1.0).contains(&self.dropout_rate),
            "dropout_rate must lie in [0, 1)",
        )?;
        check(
            self.lr_factor > 0.0 && self.lr_factor < 1.0,
            "lr_factor must lie in (0, 1)",
        )?;
        check(self.lr_patience >= 1, "lr_patience must be at least 1")?;
        check(
            self.early_stop_patience >= 1,
            "early_stop_patience must be at least 1",
        )
    }
}

/// One epoch's record in the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Validation accuracy (classification) or mean Dice (segmentation).
    pub val_metric: f64,
    pub learning_rate: f64,
}

/// Mutable training-loop state. The scheduler plateau counter is tracked
/// separately from `epochs_since_improvement` so the learning-rate schedule
/// (short patience) and early stopping (long patience) both see the full
/// run of non-improving epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub current_lr: f64,
    pub best_metric: f64,
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
    pub plateau_counter: usize,
    pub history: Vec<EpochRecord>,
    /// Set when training stopped on a non-finite loss; the best checkpoint
    /// up to that point is retained.
    pub aborted: Option<String>,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            epoch: 0,
            current_lr: cfg.learning_rate,
            best_metric: if cfg.early_stop_metric.maximize() {
                f64::NEG_INFINITY
            } else {
                f64::INFINITY
            },
            best_epoch: 0,
            epochs_since_improvement: 0,
            plateau_counter: 0,
            history: Vec::new(),
            aborted: None,
        }
    }
}

/// Record a new validation metric: reset counters on strict improvement,
/// otherwise advance them and reduce the learning rate once the plateau
/// counter reaches `lr_patience`. Returns whether the metric improved.
pub fn step_scheduler(state: &mut TrainState, cfg: &TrainConfig, new_val_metric: f64) -> bool {
    let improved = if cfg.early_stop_metric.maximize() {
        new_val_metric > state.best_metric + IMPROVEMENT_EPS
    } else {
        new_val_metric < state.best_metric - IMPROVEMENT_EPS
    };
    if improved {
        state.best_metric = new_val_metric;
        state.best_epoch = state.epoch;
        state.epochs_since_improvement = 0;
        state.plateau_counter = 0;
    } else {
        state.epochs_since_improvement += 1;
        state.plateau_counter += 1;
        if state.plateau_counter >= cfg.lr_patience {
            state.current_lr *= cfg.lr_factor;
            state.plateau_counter = 0;
        }
    }
    improved
}

/// Stop once the patience window has passed without improvement.
pub fn check_early_stop(state: &TrainState, cfg: &TrainConfig) -> bool {
    state.epochs_since_improvement >= cfg.early_stop_patience
}

/// Standard bias-corrected Adam update for one parameter slice, with weight
/// decay applied as an L2 term added to the gradient. `t` is the 1-based
/// step count.
#[allow(clippy::too_many_arguments)]
pub fn apply_adam_step(
    values: &mut [f32],
    grads: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    t: u64,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let bc1 = 1.0 - libm::pow(BETA1, t as f64);
    let bc2 = 1.0 - libm::pow(BETA2, t as f64);
    for i in 0..values.len() {
        let g = grads[i] as f64 + weight_decay * values[i] as f64;
        if !g.is_finite() {
            return Err(Error::NonFinite {
                what: "gradient",
                epoch: 0,
            });
        }
        let mi = BETA1 * m[i] as f64 + (1.0 - BETA1) * g;
        let vi = BETA2 * v[i] as f64 + (1.0 - BETA2) * g * g;
        m[i] = mi as f32;
        v[i] = vi as f32;
        let mhat = mi / bc1;
        let vhat = vi / bc2;
        values[i] -= (lr * mhat / (libm::sqrt(vhat) + EPS)) as f32;
    }
    Ok(())
}

/// Adam optimizer state for a whole model, keyed by parameter order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Apply one update over every trainable parameter.
    pub fn step(&mut self, model: &mut dyn VisitParams) -> Result<()> {
        if self.m.is_empty() {
            model.visit_params(&mut |p: &Param| {
                self.m.push(alloc::vec![0.0; p.len()]);
                self.v.push(alloc::vec![0.0; p.len()]);
            });
        }
        self.t += 1;
        let (t, lr, wd) = (self.t, self.lr, self.weight_decay);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut idx = 0usize;
        let mut status = Ok(());
        model.visit_params_mut(&mut |p: &mut Param| {
            if status.is_ok() && p.trainable {
                status = apply_adam_step(
                    &mut p.value,
                    &p.grad,
                    &mut m[idx],
                    &mut v[idx],
                    t,
                    lr,
                    wd,
                );
            }
            idx += 1;
        });
        status
    }
}

/// A model the engine can train: batched loss/gradient computation plus
/// batched evaluation.
pub trait Trainable: VisitParams {
    type Item: Clone;

    /// Forward/backward over one batch, accumulating gradients into the
    /// parameters (the engine zeroes them first). Returns the batch loss.
    fn train_batch(&mut self, items: &[Self::Item], rng: &mut ChaCha8Rng) -> Result<f32>;

    /// `(summed loss, summed metric)` over the batch, where the metric is
    /// accuracy for classification and hard Dice for segmentation. Both are
    /// sums so the engine can average across uneven batches.
    fn eval_batch(&mut self, items: &[Self::Item]) -> Result<(f64, f64)>;

    /// Apply the seeded geometric augmentation to one item.
    fn augment_item(
        item: &Self::Item,
        policy: &AugmentationPolicy,
        draw_seed: u64,
    ) -> Result<Self::Item>;
}

/// Outcome of a training run. The model passed to [`train`] is left holding
/// the best-epoch parameters.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// Snapshot of the best-epoch parameters, in visitation order.
    pub best_params: Vec<Vec<f32>>,
}

fn eval_over<M: Trainable>(model: &mut M, items: &[M::Item], batch: usize) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut metric_sum = 0.0;
    for chunk in items.chunks(batch) {
        let (l, m) = model.eval_batch(chunk)?;
        loss_sum += l;
        metric_sum += m;
    }
    let n = items.len() as f64;
    Ok((loss_sum / n, metric_sum / n))
}

/// Run the full training loop.
///
/// Augmentation applies to the training split only; validation sees the
/// items as given. The best checkpoint under the configured metric is
/// restored into the model before returning. A non-finite training loss
/// aborts the run, retaining the best checkpoint so far.
pub fn train<M: Trainable>(
    model: &mut M,
    train_items: &[M::Item],
    val_items: &[M::Item],
    cfg: &TrainConfig,
    augmentation: Option<&AugmentationPolicy>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_items.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if val_items.is_empty() {
        return Err(Error::EmptySplit("val"));
    }
    if let Some(policy) = augmentation {
        policy.validate()?;
    }

    let mut state = TrainState::new(cfg);
    let mut best_params = snapshot_params(model);
    let mut order: Vec<usize> = (0..train_items.len()).collect();
    let mut optimizer = Adam::new(cfg.learning_rate, cfg.weight_decay);

    'epochs: for epoch in 1..=cfg.epochs {
        state.epoch = epoch;
        let mut shuffle_rng = rng::seeded(rng::mix(cfg.seed, 0xE0_0C00 + epoch as u64));
        order.shuffle(&mut shuffle_rng);

        let mut train_loss_sum = 0.0f64;
        let mut seen = 0usize;
        for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut items = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let item = match augmentation {
                    Some(policy) => {
                        let draw = rng::mix(epoch as u64, i as u64);
                        M::augment_item(&train_items[i], policy, draw)?
                    }
                    None => train_items[i].clone(),
                };
                items.push(item);
            }
            let mut step_rng = rng::seeded(rng::mix(
                cfg.seed,
                0xD0_0D00 + (epoch as u64) * 1_000_003 + batch_no as u64,
            ));
            zero_grads(model);
            let loss = model.train_batch(&items, &mut step_rng)?;
            if !loss.is_finite() {
                state.aborted = Some(format!(
                    "non-finite training loss at epoch {epoch}, batch {batch_no}"
                ));
                break 'epochs;
            }
            optimizer.lr = state.current_lr;
            optimizer.step(model)?;
            train_loss_sum += loss as f64 * chunk.len() as f64;
            seen += chunk.len();
        }

        let (val_loss, val_metric) = eval_over(model, val_items, cfg.batch_size)?;
        let sched_metric = match cfg.early_stop_metric {
            EarlyStopMetric::ValAccuracy => val_metric,
            EarlyStopMetric::ValLoss => val_loss,
        };
        let lr_used = state.current_lr;
        let improved = step_scheduler(&mut state, cfg, sched_metric);
        if improved {
            best_params = snapshot_params(model);
        }
        state.history.push(EpochRecord {
            epoch,
            train_loss: train_loss_sum / seen.max(1) as f64,
            val_loss,
            val_metric,
            learning_rate: lr_used,
        });
        if check_early_stop(&state, cfg) {
            break;
        }
    }

    crate::nn::restore_params(model, &best_params);
    Ok(TrainOutcome { state, best_params })
}

/// One labeled classification sample.
#[derive(Debug, Clone)]
pub struct ClsSample {
    pub image: crate::image::ImageTensor,
    pub label: crate::dataset::Label,
}

/// One segmentation sample with its ground-truth mask.
#[derive(Debug, Clone)]
pub struct SegSample {
    pub image: crate::image::ImageTensor,
    pub mask: crate::image::Mask,
}

fn stack_images(images: &[&crate::image::ImageTensor]) -> crate::tensor::Tensor4 {
    let (h, w) = (images[0].h, images[0].w);
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        debug_assert_eq!((img.h, img.w), (h, w));
        data.extend_from_slice(&img.data);
    }
    crate::tensor::Tensor4::from_vec(images.len(), 1, h, w, data)
}

impl Trainable for crate::classifier::Classifier {
    type Item = ClsSample;

    fn train_batch(&mut self, items: &[ClsSample], rng: &mut ChaCha8Rng) -> Result<f32> {
        let images: Vec<&crate::image::ImageTensor> = items.iter().map(|s| &s.image).collect();
        let labels: Vec<usize> = items.iter().map(|s| s.label.index()).collect();
        self.train_step(&stack_images(&images), &labels, rng)
    }

    fn eval_batch(&mut self, items: &[ClsSample]) -> Result<(f64, f64)> {
        let images: Vec<&crate::image::ImageTensor> = items.iter().map(|s| &s.image).collect();
        let labels: Vec<usize> = items.iter().map(|s| s.label.index()).collect();
        let (loss_sum, correct) = self.evaluate(&stack_images(&images), &labels)?;
        Ok((loss_sum, correct as f64))
    }

    fn augment_item(
        item: &ClsSample,
        policy: &AugmentationPolicy,
        draw_seed: u64,
    ) -> Result<ClsSample> {
        let (image, _) = crate::preprocess::augment(&item.image, None, policy, draw_seed)?;
        Ok(ClsSample {
            image,
            label: item.label,
        })
    }
}

/// Segmentation model bundled with its training objective.
#[derive(Debug, Clone)]
pub struct SegTrainer {
    pub model: crate::segmenter::ResUNet,
    pub loss: crate::nn::loss::SegLoss,
}

impl VisitParams for SegTrainer {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.model.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.model.visit_params_mut(f);
    }
    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
        self.model.visit_buffers(f);
    }
    fn load_buffer(&mut self, name: &str, data: &[f32]) -> bool {
        self.model.load_buffer(name, data)
    }
}

fn masks_to_targets(items: &[SegSample]) -> crate::tensor::Tensor4 {
    let (h, w) = (items[0].mask.h, items[0].mask.w);
    let mut data = Vec::with_capacity(items.len() * h * w);
    for s in items {
        data.extend(s.mask.data.iter().map(|&m| m as f32));
    }
    crate::tensor::Tensor4::from_vec(items.len(), 1, h, w, data)
}

impl Trainable for SegTrainer {
    type Item = SegSample;

    fn train_batch(&mut self, items: &[SegSample], _rng: &mut ChaCha8Rng) -> Result<f32> {
        let images: Vec<&crate::image::ImageTensor> = items.iter().map(|s| &s.image).collect();
        self.model
            .train_step(&stack_images(&images), &masks_to_targets(items), self.loss)
    }

    fn eval_batch(&mut self, items: &[SegSample]) -> Result<(f64, f64)> {
        let images: Vec<&crate::image::ImageTensor> = items.iter().map(|s| &s.image).collect();
        self.model
            .evaluate(&stack_images(&images), &masks_to_targets(items), self.loss)
    }

    fn augment_item(
        item: &SegSample,
        policy: &AugmentationPolicy,
        draw_seed: u64,
    ) -> Result<SegSample> {
        let (image, mask) =
            crate::preprocess::augment(&item.image, Some(&item.mask), policy, draw_seed)?;
        Ok(SegSample {
            image,
            mask: mask.expect("mask in, mask out"),
        })
    }
}
