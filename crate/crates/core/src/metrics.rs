//! Losses and evaluation metrics.
//!
//! Everything here is a pure function in f64: categorical and binary
//! cross-entropy, Dice coefficient/loss and its gradient, IoU, symmetric
//! Hausdorff distance, and the confusion-matrix machinery. The network code
//! uses fused f32 variants of the losses ([`crate::nn::loss`]); these are the
//! reference definitions that evaluation reports and tests rely on.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::image::Mask;

/// Smoothing constant used inside differentiable Dice loss.
pub const LOSS_SMOOTH: f64 = 1e-6;
/// Probabilities are clamped to `[PROB_EPSILON, 1 - PROB_EPSILON]` in
/// cross-entropy losses.
pub const PROB_EPSILON: f64 = 1e-7;

fn check_len(context: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            context,
            expected: a.to_string(),
            got: b.to_string(),
        });
    }
    Ok(())
}

fn check_mask_shapes(context: &'static str, a: &Mask, b: &Mask) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch {
            context,
            expected: alloc::format!("{}x{}", a.h, a.w),
            got: alloc::format!("{}x{}", b.h, b.w),
        });
    }
    Ok(())
}

/// Mean of `-ln p(true class)` over rows, probabilities clamped to
/// `[eps, 1-eps]`. `probs` and `onehot` are row-major `n x classes`.
pub fn categorical_cross_entropy(probs: &[f64], onehot: &[f64], classes: usize) -> Result<f64> {
    check_len("categorical_cross_entropy", probs.len(), onehot.len())?;
    if classes == 0 || probs.is_empty() || probs.len() % classes != 0 {
        return Err(Error::EmptyInput("categorical_cross_entropy"));
    }
    let n = probs.len() / classes;
    let mut total = 0.0;
    for row in 0..n {
        for k in 0..classes {
            let t = onehot[row * classes + k];
            if t > 0.0 {
                let p = probs[row * classes + k].clamp(PROB_EPSILON, 1.0 - PROB_EPSILON);
                total -= t * libm::log(p);
            }
        }
    }
    Ok(total / n as f64)
}

/// Mean binary cross-entropy between a soft prediction map and a binary
/// target, with clamped probabilities.
pub fn binary_cross_entropy(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_len("binary_cross_entropy", pred.len(), truth.len())?;
    if pred.is_empty() {
        return Err(Error::EmptyInput("binary_cross_entropy"));
    }
    let mut total = 0.0;
    for (&p, &t) in pred.iter().zip(truth) {
        let p = p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON);
        total -= t * libm::log(p) + (1.0 - t) * libm::log(1.0 - p);
    }
    Ok(total / pred.len() as f64)
}

/// Gradient of [`binary_cross_entropy`] with respect to `pred`.
/// Zero where the prediction sits in the clamped region.
pub fn binary_cross_entropy_grad(pred: &[f64], truth: &[f64]) -> Result<Vec<f64>> {
    check_len("binary_cross_entropy_grad", pred.len(), truth.len())?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| {
            if p < PROB_EPSILON || p > 1.0 - PROB_EPSILON {
                0.0
            } else {
                (-t / p + (1.0 - t) / (1.0 - p)) / n
            }
        })
        .collect())
}

/// Soft Dice coefficient `(2*sum(p*t) + smooth) / (sum(p) + sum(t) + smooth)`.
///
/// With `smooth == 0` and both operands empty the conventional value 1 is
/// returned.
pub fn dice_coefficient(pred: &[f64], truth: &[f64], smooth: f64) -> Result<f64> {
    check_len("dice_coefficient", pred.len(), truth.len())?;
    let inter: f64 = pred.iter().zip(truth).map(|(&p, &t)| p * t).sum();
    let psum: f64 = pred.iter().sum();
    let tsum: f64 = truth.iter().sum();
    let denom = psum + tsum + smooth;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((2.0 * inter + smooth) / denom)
}

/// Dice coefficient on hard masks, `smooth = 0`, empty-vs-empty = 1.
pub fn dice_masks(pred: &Mask, truth: &Mask) -> Result<f64> {
    check_mask_shapes("dice_masks", pred, truth)?;
    let mut inter = 0u64;
    let mut a = 0u64;
    let mut b = 0u64;
    for (&p, &t) in pred.data.iter().zip(&truth.data) {
        a += p as u64;
        b += t as u64;
        inter += (p & t) as u64;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (a + b) as f64)
}

/// Dice loss `1 - dice(pred, truth, LOSS_SMOOTH)`, differentiable in `pred`.
pub fn dice_loss(pred: &[f64], truth: &[f64]) -> Result<f64> {
    Ok(1.0 - dice_coefficient(pred, truth, LOSS_SMOOTH)?)
}

/// Gradient of [`dice_loss`] with respect to `pred`.
pub fn dice_loss_grad(pred: &[f64], truth: &[f64]) -> Result<Vec<f64>> {
    check_len("dice_loss_grad", pred.len(), truth.len())?;
    let inter: f64 = pred.iter().zip(truth).map(|(&p, &t)| p * t).sum();
    let psum: f64 = pred.iter().sum();
    let tsum: f64 = truth.iter().sum();
    let denom = psum + tsum + LOSS_SMOOTH;
    let numer = 2.0 * inter + LOSS_SMOOTH;
    Ok(truth
        .iter()
        .map(|&t| -(2.0 * t * denom - numer) / (denom * denom))
        .collect())
}

/// Weighted sum `w_bce * BCE + w_dice * dice_loss`. Both weights zero is an
/// error.
pub fn combined_seg_loss(pred: &[f64], truth: &[f64], w_bce: f64, w_dice: f64) -> Result<f64> {
    if w_bce == 0.0 && w_dice == 0.0 {
        return Err(Error::ZeroLossWeights);
    }
    let mut total = 0.0;
    if w_bce != 0.0 {
        total += w_bce * binary_cross_entropy(pred, truth)?;
    }
    if w_dice != 0.0 {
        total += w_dice * dice_loss(pred, truth)?;
    }
    Ok(total)
}

/// Gradient of [`combined_seg_loss`] with respect to `pred`.
pub fn combined_seg_loss_grad(
    pred: &[f64],
    truth: &[f64],
    w_bce: f64,
    w_dice: f64,
) -> Result<Vec<f64>> {
    if w_bce == 0.0 && w_dice == 0.0 {
        return Err(Error::ZeroLossWeights);
    }
    let mut grad = vec![0.0; pred.len()];
    if w_bce != 0.0 {
        for (g, b) in grad.iter_mut().zip(binary_cross_entropy_grad(pred, truth)?) {
            *g += w_bce * b;
        }
    }
    if w_dice != 0.0 {
        for (g, d) in grad.iter_mut().zip(dice_loss_grad(pred, truth)?) {
            *g += w_dice * d;
        }
    }
    Ok(grad)
}

/// Intersection over union of hard masks; empty-vs-empty = 1.
pub fn iou_masks(pred: &Mask, truth: &Mask) -> Result<f64> {
    check_mask_shapes("iou_masks", pred, truth)?;
    let mut inter = 0u64;
    let mut union = 0u64;
    for (&p, &t) in pred.data.iter().zip(&truth.data) {
        inter += (p & t) as u64;
        union += (p | t) as u64;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Symmetric Hausdorff distance between foreground pixel sets, in pixels
/// (Euclidean). Both empty: 0. Exactly one empty: `f64::INFINITY`, which
/// report writers render as "undefined".
pub fn hausdorff(pred: &Mask, truth: &Mask) -> Result<f64> {
    check_mask_shapes("hausdorff", pred, truth)?;
    let a = pred.foreground_pixels();
    let b = truth.foreground_pixels();
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return Ok(0.0),
        (true, false) | (false, true) => return Ok(f64::INFINITY),
        _ => {}
    }
    let directed = |from: &[(usize, usize)], to: &[(usize, usize)]| -> f64 {
        let mut worst = 0.0f64;
        for &(ay, ax) in from {
            let mut best = f64::INFINITY;
            for &(by, bx) in to {
                let dy = ay as f64 - by as f64;
                let dx = ax as f64 - bx as f64;
                let d2 = dy * dy + dx * dx;
                if d2 < best {
                    best = d2;
                    if best == 0.0 {
                        break;
                    }
                }
            }
            if best > worst {
                worst = best;
            }
        }
        worst
    };
    let h = directed(&a, &b).max(directed(&b, &a));
    Ok(libm::sqrt(h))
}

/// Dice, IoU and Hausdorff for one predicted/truth mask pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegScores {
    pub dice: f64,
    pub iou: f64,
    /// `f64::INFINITY` encodes "undefined" (exactly one mask empty).
    pub hausdorff: f64,
}

impl SegScores {
    pub fn compute(pred: &Mask, truth: &Mask) -> Result<SegScores> {
        Ok(SegScores {
            dice: dice_masks(pred, truth)?,
            iou: iou_masks(pred, truth)?,
            hausdorff: hausdorff(pred, truth)?,
        })
    }
}

/// 4x4 confusion matrix; rows are true classes, columns predictions, in
/// [`Label::ALL`] order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; Label::COUNT]; Label::COUNT],
}

impl Default for ConfusionMatrix {
    fn default() -> Self {
        Self::new()
    }
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self {
            counts: [[0; Label::COUNT]; Label::COUNT],
        }
    }

    pub fn record(&mut self, truth: Label, pred: Label) {
        self.counts[truth.index()][pred.index()] += 1;
    }

    pub fn from_pairs(preds: &[Label], truths: &[Label]) -> Result<Self> {
        check_len("confusion_matrix", preds.len(), truths.len())?;
        if preds.is_empty() {
            return Err(Error::EmptyInput("confusion_matrix"));
        }
        let mut cm = Self::new();
        for (&p, &t) in preds.iter().zip(truths) {
            cm.record(t, p);
        }
        Ok(cm)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Number of samples whose true class is `label` (row sum).
    pub fn support(&self, label: Label) -> u64 {
        self.counts[label.index()].iter().sum()
    }

    /// Number of samples predicted as `label` (column sum).
    pub fn predicted(&self, label: Label) -> u64 {
        self.counts.iter().map(|row| row[label.index()]).sum()
    }

    pub fn true_positives(&self, label: Label) -> u64 {
        self.counts[label.index()][label.index()]
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let trace: u64 = Label::ALL.iter().map(|&l| self.true_positives(l)).sum();
        trace as f64 / total as f64
    }
}

/// Precision/recall/F1 for one class. Zero-denominator cases report 0.0
/// with the corresponding `*_defined` flag cleared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: Label,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub precision_defined: bool,
    pub recall_defined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub total: u64,
}

/// Confusion matrix plus the per-class precision/recall/F1 report.
pub fn confusion_and_report(
    preds: &[Label],
    truths: &[Label],
) -> Result<(ConfusionMatrix, ClassificationReport)> {
    let cm = ConfusionMatrix::from_pairs(preds, truths)?;
    let report = report_from_confusion(&cm);
    Ok((cm, report))
}

pub fn report_from_confusion(cm: &ConfusionMatrix) -> ClassificationReport {
    let mut per_class = Vec::with_capacity(Label::COUNT);
    for label in Label::ALL {
        let tp = cm.true_positives(label) as f64;
        let pred = cm.predicted(label) as f64;
        let supp = cm.support(label) as f64;
        let precision_defined = pred > 0.0;
        let recall_defined = supp > 0.0;
        let precision = if precision_defined { tp / pred } else { 0.0 };
        let recall = if recall_defined { tp / supp } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(ClassMetrics {
            label,
            precision,
            recall,
            f1,
            support: cm.support(label),
            precision_defined,
            recall_defined,
        });
    }
    ClassificationReport {
        per_class,
        accuracy: cm.accuracy(),
        total: cm.total(),
    }
}

/// One-vs-rest sensitivity and specificity for a positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensSpec {
    pub sensitivity: f64,
    pub specificity: f64,
    pub sensitivity_defined: bool,
    pub specificity_defined: bool,
}

pub fn sensitivity_specificity(cm: &ConfusionMatrix, positive: Label) -> SensSpec {
    let tp = cm.true_positives(positive);
    let fn_ = cm.support(positive) - tp;
    let fp = cm.predicted(positive) - tp;
    let tn = cm.total() - tp - fn_ - fp;
    let sensitivity_defined = tp + fn_ > 0;
    let specificity_defined = tn + fp > 0;
    SensSpec {
        sensitivity: if sensitivity_defined {
            tp as f64 / (tp + fn_) as f64
        } else {
            0.0
        },
        specificity: if specificity_defined {
            tn as f64 / (tn + fp) as f64
        } else {
            0.0
        },
        sensitivity_defined,
        specificity_defined,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn mask_from_pixels(h: usize, w: usize, pixels: &[(usize, usize)]) -> Mask {
        let mut m = Mask::zeros(h, w);
        for &(y, x) in pixels {
            m.set(y, x, 1);
        }
        m
    }

    // -- independent oracles (set-based / double-loop) used by module tests --

    fn oracle_dice(a: &Mask, b: &Mask) -> f64 {
        let sa: Vec<_> = a.foreground_pixels();
        let sb: Vec<_> = b.foreground_pixels();
        let inter = sa.iter().filter(|p| sb.contains(p)).count();
        if sa.is_empty() && sb.is_empty() {
            return 1.0;
        }
        2.0 * inter as f64 / (sa.len() + sb.len()) as f64
    }

    fn oracle_iou(a: &Mask, b: &Mask) -> f64 {
        let sa: Vec<_> = a.foreground_pixels();
        let sb: Vec<_> = b.foreground_pixels();
        let inter = sa.iter().filter(|p| sb.contains(p)).count();
        let union = sa.len() + sb.len() - inter;
        if union == 0 {
            return 1.0;
        }
        inter as f64 / union as f64
    }

    fn oracle_hausdorff(a: &Mask, b: &Mask) -> f64 {
        let sa = a.foreground_pixels();
        let sb = b.foreground_pixels();
        if sa.is_empty() && sb.is_empty() {
            return 0.0;
        }
        if sa.is_empty() || sb.is_empty() {
            return f64::INFINITY;
        }
        let dist = |p: (usize, usize), q: (usize, usize)| {
            let dy = p.0 as f64 - q.0 as f64;
            let dx = p.1 as f64 - q.1 as f64;
            libm::sqrt(dy * dy + dx * dx)
        };
        let dir = |xs: &[(usize, usize)], ys: &[(usize, usize)]| {
            xs.iter()
                .map(|&p| {
                    ys.iter()
                        .map(|&q| dist(p, q))
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max)
        };
        dir(&sa, &sb).max(dir(&sb, &sa))
    }

    fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut grad = Vec::with_capacity(x.len());
        let mut probe = x.to_vec();
        for i in 0..x.len() {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            grad.push((up - down) / (2.0 * h));
        }
        grad
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>();
        let den: f64 = a.iter().map(|x| x * x).sum::<f64>().max(1e-30);
        libm::sqrt(num / den)
    }

    fn lcg_unit(state: &mut u64) -> f64 {
        // Tiny deterministic generator for test fixtures.
        *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*state >> 11) as f64) / ((1u64 << 53) as f64)
    }

    #[test]
    fn cce_frozen_values() {
        // Perfect prediction: loss bounded by the clamp.
        let probs = [1.0, 0.0, 0.0, 0.0];
        let onehot = [1.0, 0.0, 0.0, 0.0];
        let loss = categorical_cross_entropy(&probs, &onehot, 4).unwrap();
        assert!(loss <= 1.2e-7, "got {loss}");

        // Uniform prediction: ln 4.
        let probs = [0.25; 4];
        let loss = categorical_cross_entropy(&probs, &onehot, 4).unwrap();
        assert!((loss - 1.3862943611198906).abs() < 1e-12);

        // Probability one-half on the true class: ln 2.
        let probs = [0.5, 0.3, 0.1, 0.1];
        let loss = categorical_cross_entropy(&probs, &onehot, 4).unwrap();
        assert!((loss - 0.6931471805599453).abs() < 1e-12);
    }

    #[test]
    fn cce_shape_mismatch() {
        assert!(categorical_cross_entropy(&[0.5, 0.5], &[1.0], 2).is_err());
    }

    #[test]
    fn dice_frozen_values() {
        let a = mask_from_pixels(3, 3, &[(0, 0), (0, 1)]);
        let b = mask_from_pixels(3, 3, &[(0, 1), (0, 2)]);
        assert_eq!(dice_masks(&a, &a).unwrap(), 1.0);
        assert_eq!(dice_masks(&a, &b).unwrap(), 0.5);
        assert!((iou_masks(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);

        let disjoint = mask_from_pixels(3, 3, &[(2, 2)]);
        assert_eq!(dice_masks(&a, &disjoint).unwrap(), 0.0);
        assert_eq!(iou_masks(&a, &a).unwrap(), 1.0);

        // Empty-vs-empty convention.
        let e = Mask::zeros(3, 3);
        assert_eq!(dice_masks(&e, &e).unwrap(), 1.0);
        assert_eq!(iou_masks(&e, &e).unwrap(), 1.0);
    }

    #[test]
    fn dice_loss_endpoints() {
        let truth = [1.0, 0.0, 1.0, 0.0];
        let loss = dice_loss(&truth, &truth).unwrap();
        assert!(loss <= 1e-6, "got {loss}");
        let zeros = [0.0; 4];
        let loss = dice_loss(&zeros, &truth).unwrap();
        assert!(loss > 0.999999, "got {loss}");
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut state = 0xD1CEu64;
        for trial in 0..20 {
            let pred: Vec<f64> = (0..16).map(|_| 0.05 + 0.9 * lcg_unit(&mut state)).collect();
            let truth: Vec<f64> = (0..16)
                .map(|_| if lcg_unit(&mut state) > 0.5 { 1.0 } else { 0.0 })
                .collect();

            let got = dice_loss_grad(&pred, &truth).unwrap();
            let want = central_diff(|p| dice_loss(p, &truth).unwrap(), &pred, 1e-6);
            assert!(rel_err(&want, &got) < 1e-4, "dice trial {trial}");

            let got = binary_cross_entropy_grad(&pred, &truth).unwrap();
            let want = central_diff(|p| binary_cross_entropy(p, &truth).unwrap(), &pred, 1e-6);
            assert!(rel_err(&want, &got) < 1e-4, "bce trial {trial}");

            let got = combined_seg_loss_grad(&pred, &truth, 1.0, 1.0).unwrap();
            let want =
                central_diff(|p| combined_seg_loss(p, &truth, 1.0, 1.0).unwrap(), &pred, 1e-6);
            assert!(rel_err(&want, &got) < 1e-4, "combined trial {trial}");
        }
    }

    #[test]
    fn combined_loss_composition() {
        let mut state = 0xC0FFEEu64;
        let pred: Vec<f64> = (0..16).map(|_| 0.05 + 0.9 * lcg_unit(&mut state)).collect();
        let truth: Vec<f64> = (0..16)
            .map(|_| if lcg_unit(&mut state) > 0.5 { 1.0 } else { 0.0 })
            .collect();

        let bce = binary_cross_entropy(&pred, &truth).unwrap();
        let dl = dice_loss(&pred, &truth).unwrap();
        let combined = combined_seg_loss(&pred, &truth, 1.0, 1.0).unwrap();
        assert!((combined - (bce + dl)).abs() < 1e-9);

        assert_eq!(combined_seg_loss(&pred, &truth, 1.0, 0.0).unwrap(), bce);
        assert_eq!(combined_seg_loss(&pred, &truth, 0.0, 1.0).unwrap(), dl);
        assert!(matches!(
            combined_seg_loss(&pred, &truth, 0.0, 0.0),
            Err(Error::ZeroLossWeights)
        ));
    }

    #[test]
    fn hausdorff_frozen_values() {
        let a = mask_from_pixels(8, 8, &[(0, 0)]);
        let b = mask_from_pixels(8, 8, &[(3, 4)]);
        assert!((hausdorff(&a, &b).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);

        let e = Mask::zeros(8, 8);
        assert_eq!(hausdorff(&e, &e).unwrap(), 0.0);
        assert!(hausdorff(&a, &e).unwrap().is_infinite());

        // Superset adds one distant pixel: the directed distance from the
        // superset dominates.
        let inner = mask_from_pixels(16, 16, &[(1, 1), (1, 2), (2, 1), (2, 2)]);
        let mut outer = inner.clone();
        outer.set(10, 10, 1);
        let d = hausdorff(&outer, &inner).unwrap();
        assert!((d - oracle_hausdorff(&outer, &inner)).abs() < 1e-12);
        assert!((d - libm::sqrt(128.0)).abs() < 1e-12); // (10,10) to (2,2)
    }

    #[test]
    fn masks_match_oracles_exhaustively_2x2() {
        // All 16 x 16 pairs of 2x2 masks.
        for abits in 0..16u32 {
            for bbits in 0..16u32 {
                let a = Mask::new(
                    2,
                    2,
                    (0..4).map(|i| ((abits >> i) & 1) as u8).collect(),
                );
                let b = Mask::new(
                    2,
                    2,
                    (0..4).map(|i| ((bbits >> i) & 1) as u8).collect(),
                );
                assert_eq!(dice_masks(&a, &b).unwrap(), oracle_dice(&a, &b));
                assert_eq!(iou_masks(&a, &b).unwrap(), oracle_iou(&a, &b));
                let h = hausdorff(&a, &b).unwrap();
                let ho = oracle_hausdorff(&a, &b);
                if ho.is_infinite() {
                    assert!(h.is_infinite());
                } else {
                    assert!((h - ho).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn confusion_report_hand_counts() {
        use Label::{Glioma as B, Meningioma as A};
        // truths (A,A,B,B), preds (A,B,B,B)
        let truths = [A, A, B, B];
        let preds = [A, B, B, B];
        let (cm, report) = confusion_and_report(&preds, &truths).unwrap();
        assert_eq!(cm.total(), 4);
        assert_eq!(cm.accuracy(), 0.75);
        let b = &report.per_class[B.index()];
        assert!((b.precision - 2.0 / 3.0).abs() < 1e-12);
        let a = &report.per_class[A.index()];
        assert!((a.recall - 0.5).abs() < 1e-12);

        let ss = sensitivity_specificity(&cm, A);
        assert_eq!(ss.sensitivity, 0.5);
        assert_eq!(ss.specificity, 1.0);

        // Zero-support class is flagged.
        let c = &report.per_class[Label::Pituitary.index()];
        assert!(!c.recall_defined);
        assert_eq!(c.recall, 0.0);
        let ss = sensitivity_specificity(&cm, Label::Pituitary);
        assert!(!ss.sensitivity_defined);
        assert_eq!(ss.sensitivity, 0.0);
    }

    #[test]
    fn confusion_all_correct() {
        let labels = [
            Label::Meningioma,
            Label::Glioma,
            Label::Pituitary,
            Label::NoTumor,
            Label::Meningioma,
            Label::Glioma,
            Label::Pituitary,
            Label::NoTumor,
        ];
        let (cm, report) = confusion_and_report(&labels, &labels).unwrap();
        assert_eq!(report.accuracy, 1.0);
        for l in Label::ALL {
            assert_eq!(cm.true_positives(l), 2);
            let m = &report.per_class[l.index()];
            assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        }
    }

    proptest::proptest! {
        #[test]
        fn dice_iou_identity_and_symmetry(
            abits in proptest::collection::vec(proptest::bool::ANY, 36),
            bbits in proptest::collection::vec(proptest::bool::ANY, 36),
        ) {
            let a = Mask::new(6, 6, abits.iter().map(|&b| b as u8).collect());
            let b = Mask::new(6, 6, bbits.iter().map(|&b| b as u8).collect());
            let dice = dice_masks(&a, &b).unwrap();
            let iou = iou_masks(&a, &b).unwrap();
            proptest::prop_assert!((dice - 2.0 * iou / (1.0 + iou)).abs() < 1e-9);
            proptest::prop_assert_eq!(dice, dice_masks(&b, &a).unwrap());
            proptest::prop_assert_eq!(iou, iou_masks(&b, &a).unwrap());
            proptest::prop_assert!((0.0..=1.0).contains(&dice));
            proptest::prop_assert!((0.0..=1.0).contains(&iou));

            let h = hausdorff(&a, &b).unwrap();
            proptest::prop_assert_eq!(h, hausdorff(&b, &a).unwrap());
            if h.is_finite() {
                proptest::prop_assert!(h >= 0.0);
                // Zero iff identical foreground sets.
                proptest::prop_assert_eq!(
                    h == 0.0,
                    a.foreground_pixels() == b.foreground_pixels()
                );
            }
        }

        #[test]
        fn micro_recall_equals_accuracy(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..64),
        ) {
            let preds: Vec<Label> = pairs.iter().map(|&(p, _)| Label::from_index(p).unwrap()).collect();
            let truths: Vec<Label> = pairs.iter().map(|&(_, t)| Label::from_index(t).unwrap()).collect();
            let (cm, report) = confusion_and_report(&preds, &truths).unwrap();
            proptest::prop_assert_eq!(cm.total() as usize, pairs.len());
            // Micro-averaged recall: sum TP / sum support == accuracy.
            let tp: u64 = Label::ALL.iter().map(|&l| cm.true_positives(l)).sum();
            proptest::prop_assert!((tp as f64 / cm.total() as f64 - report.accuracy).abs() < 1e-15);
            // Supports sum to the number of evaluated cases.
            let support: u64 = Label::ALL.iter().map(|&l| cm.support(l)).sum();
            proptest::prop_assert_eq!(support, cm.total());
        }
    }
}
