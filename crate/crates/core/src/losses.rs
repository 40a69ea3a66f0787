//! Segmentation cross-entropy, the role-swapped alignment loss, the combined
//! objective and the Dice metric.

use crate::error::{BroError, Result};
use crate::mask::BinaryMask;
use crate::prototypes::PredictionMap;
use crate::tensor::Tensor;

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before the log.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub seg: f64,
    pub reg: f64,
    pub adv: f64,
    pub beta: f64,
    pub total: f64,
}

fn check(pred: &PredictionMap, truth: &BinaryMask) -> Result<()> {
    if pred.dims() != truth.dims() {
        return Err(BroError::Dimension {
            op: "segmentation loss",
            left: pred.prob_fg.shape().to_vec(),
            right: vec![truth.height(), truth.width()],
        });
    }
    Ok(())
}

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Pixel-mean two-class cross-entropy of a prediction against a one-hot mask.
pub fn seg_loss(pred: &PredictionMap, truth: &BinaryMask) -> Result<f64> {
    check(pred, truth)?;
    let n = truth.as_slice().len() as f64;
    let total: f64 = truth
        .as_slice()
        .iter()
        .zip(pred.prob_fg.data().iter().zip(pred.prob_bg.data()))
        .map(|(&t, (&pf, &pb))| if t { -clamp(pf).ln() } else { -clamp(pb).ln() })
        .sum();
    Ok(total / n)
}

/// Alignment regularization: the same cross-entropy on the support side,
/// with the support prediction made from query-derived prototypes.
pub fn reg_loss(pred_support: &PredictionMap, support_truth: &BinaryMask) -> Result<f64> {
    seg_loss(pred_support, support_truth)
}

/// Gradients of [`seg_loss`] with respect to `(prob_fg, prob_bg)`.
pub fn seg_loss_backward(pred: &PredictionMap, truth: &BinaryMask) -> Result<(Tensor, Tensor)> {
    check(pred, truth)?;
    let shape = pred.prob_fg.shape().to_vec();
    let n = truth.as_slice().len() as f64;
    let grad = |p: f64| {
        if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
            0.0
        } else {
            -1.0 / (p * n)
        }
    };
    let mut g_fg = vec![0.0; truth.as_slice().len()];
    let mut g_bg = g_fg.clone();
    for (i, &t) in truth.as_slice().iter().enumerate() {
        if t {
            g_fg[i] = grad(pred.prob_fg.data()[i]);
        } else {
            g_bg[i] = grad(pred.prob_bg.data()[i]);
        }
    }
    Ok((
        Tensor::new(shape.clone(), g_fg)?,
        Tensor::new(shape, g_bg)?,
    ))
}

pub fn total_loss(seg: f64, reg: f64, adv: f64, beta: f64) -> LossBreakdown {
    LossBreakdown {
        seg,
        reg,
        adv,
        beta,
        total: seg + reg + beta * adv,
    }
}

/// `2|A∩B| / (|A| + |B|) × 100`, and 100 when both masks are empty.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(BroError::Dimension {
            op: "dice",
            left: vec![a.height(), a.width()],
            right: vec![b.height(), b.width()],
        });
    }
    let denom = a.count() + b.count();
    if denom == 0 {
        return Ok(100.0);
    }
    Ok(200.0 * a.intersection_count(b) as f64 / denom as f64)
}
