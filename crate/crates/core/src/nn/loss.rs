//! Fused training losses on logits (f32), with gradients.
//!
//! The reference metric definitions live in [`crate::metrics`] in f64; the
//! versions here fold the activation into the loss for numerical stability
//! during optimization and are cross-checked against the references in tests.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::nn::activation::{sigmoid, softmax_rows_inplace};
use crate::tensor::Matrix;

const EPS: f32 = 1e-7;

/// Softmax cross-entropy over logit rows. Returns the mean loss and the
/// gradient with respect to the logits, `(softmax - onehot) / n`.
pub fn softmax_cce_with_logits(logits: &Matrix, labels: &[usize]) -> (f32, Matrix) {
    debug_assert_eq!(logits.rows, labels.len());
    let mut probs = logits.clone();
    softmax_rows_inplace(&mut probs.data, probs.cols);
    let n = logits.rows as f32;
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for (r, &label) in labels.iter().enumerate() {
        let p = probs.at(r, label).max(EPS);
        loss -= libm::logf(p);
        let row = grad.row_mut(r);
        row[label] -= 1.0;
        row.iter_mut().for_each(|v| *v /= n);
    }
    (loss / n, grad)
}

/// Mean binary cross-entropy on logits. The gradient with respect to the
/// logit is `(sigmoid(z) - t) / n`.
pub fn bce_with_logits(logits: &[f32], targets: &[f32]) -> (f32, Vec<f32>) {
    debug_assert_eq!(logits.len(), targets.len());
    let n = logits.len() as f32;
    let mut loss = 0.0f64;
    let mut grad = vec![0.0f32; logits.len()];
    for i in 0..logits.len() {
        let z = logits[i];
        let t = targets[i];
        // log(1 + e^-|z|) + max(z, 0) - z*t, the standard stable form.
        let softplus = libm::logf(1.0 + libm::expf(-z.abs())) + z.max(0.0);
        loss += (softplus - z * t) as f64;
        grad[i] = (sigmoid(z) - t) / n;
    }
    ((loss / n as f64) as f32, grad)
}

/// Soft Dice loss on `sigmoid(logits)`; gradient chained through the sigmoid.
pub fn dice_loss_with_logits(logits: &[f32], targets: &[f32]) -> (f32, Vec<f32>) {
    debug_assert_eq!(logits.len(), targets.len());
    let smooth = 1e-6f64;
    let probs: Vec<f32> = logits.iter().map(|&z| sigmoid(z)).collect();
    let mut inter = 0.0f64;
    let mut psum = 0.0f64;
    let mut tsum = 0.0f64;
    for (&p, &t) in probs.iter().zip(targets) {
        inter += (p * t) as f64;
        psum += p as f64;
        tsum += t as f64;
    }
    let denom = psum + tsum + smooth;
    let numer = 2.0 * inter + smooth;
    let loss = 1.0 - numer / denom;
    let grad = probs
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            let dldp = -((2.0 * t as f64 * denom - numer) / (denom * denom)) as f32;
            dldp * p * (1.0 - p)
        })
        .collect();
    (loss as f32, grad)
}

/// Segmentation training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SegLoss {
    Bce,
    Dice,
    Combined { w_bce: f64, w_dice: f64 },
}

impl Default for SegLoss {
    fn default() -> Self {
        SegLoss::Combined {
            w_bce: 1.0,
            w_dice: 1.0,
        }
    }
}

impl SegLoss {
    pub fn loss_and_grad(&self, logits: &[f32], targets: &[f32]) -> (f32, Vec<f32>) {
        match *self {
            SegLoss::Bce => bce_with_logits(logits, targets),
            SegLoss::Dice => dice_loss_with_logits(logits, targets),
            SegLoss::Combined { w_bce, w_dice } => {
                let (lb, gb) = bce_with_logits(logits, targets);
                let (ld, gd) = dice_loss_with_logits(logits, targets);
                let grad = gb
                    .iter()
                    .zip(&gd)
                    .map(|(&b, &d)| (w_bce as f32) * b + (w_dice as f32) * d)
                    .collect();
                (
                    (w_bce as f32) * lb + (w_dice as f32) * ld,
                    grad,
                )
            }
        }
    }
}
