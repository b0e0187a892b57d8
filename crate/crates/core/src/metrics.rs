//! Output binarization and foreground segmentation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{DonnError, Result};
use crate::field::{BinaryMask, IntensityMap};

/// Reference results for the full-scale configurations, kept for
/// documentation and comparison only. They come from 480×480, 12/15-layer,
/// 500-epoch CityScapes runs and are not expected from desk-scale training.
pub mod reference {
    /// Evaluation IoU, RGB input, MSE loss.
    pub const CITYSCAPES_RGB_MSE_IOU: f64 = 0.70;
    /// Evaluation IoU, RGB input, BCE loss.
    pub const CITYSCAPES_RGB_BCE_IOU: f64 = 0.66;
    /// Evaluation IoU, RGB input, Dice loss.
    pub const CITYSCAPES_RGB_DICE_IOU: f64 = 0.66;
    /// Evaluation IoU, single grayscale channel, MSE loss.
    pub const CITYSCAPES_GRAY_MSE_IOU: f64 = 0.36;
    /// Comparison row of the three-channel system against U-Net.
    pub const CITYSCAPES_RGB_F1: f64 = 0.83;
    pub const CITYSCAPES_RGB_PRECISION: f64 = 0.79;
    pub const CITYSCAPES_RGB_RECALL: f64 = 0.88;
    pub const CITYSCAPES_RGB_IOU: f64 = 0.71;
    /// Indoor-track lane detection, evaluation IoU.
    pub const INDOOR_TRACK_IOU: f64 = 0.80;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn from_masks(pred: &BinaryMask, gt: &BinaryMask) -> Result<Self> {
        if pred.dim() != gt.dim() {
            return Err(DonnError::Dimension(format!(
                "prediction {:?} and ground truth {:?} differ in shape",
                pred.dim(),
                gt.dim()
            )));
        }
        let mut c = ConfusionCounts::default();
        for (&p, &g) in pred.values().iter().zip(gt.values().iter()) {
            match (p, g) {
                (1, 1) => c.tp += 1,
                (1, _) => c.fp += 1,
                (_, 1) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn iou(&self) -> f64 {
        let union = self.tp + self.fp + self.fn_;
        if union == 0 {
            1.0
        } else {
            self.tp as f64 / union as f64
        }
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp, self.both_empty())
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_, self.both_empty())
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// Dice coefficient `2tp / (2tp + fp + fn)`.
    pub fn dice(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / den as f64
        }
    }

    fn both_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }
}

fn ratio(num: u64, den: u64, both_empty: bool) -> f64 {
    if den == 0 {
        if both_empty {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Threshold {
    /// Fixed cut on the min-max normalized map.
    Fixed {
        level: f64,
    },
    Otsu,
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Fixed { level: 0.5 }
    }
}

/// Min-max normalizes the detector image and thresholds it. A constant map
/// yields an all-zero mask and logs a warning.
pub fn binarize_output(i_det: &IntensityMap, threshold: Threshold) -> BinaryMask {
    let v = i_det.values();
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if hi <= lo {
        log::warn!("constant detector image; binarized output is empty");
        return BinaryMask::zeros(v.dim());
    }
    let span = hi - lo;
    let level = match threshold {
        Threshold::Fixed { level } => level,
        Threshold::Otsu => otsu_level(v.iter().map(|&x| (x - lo) / span)),
    };
    BinaryMask::from_bools(&v.mapv(|x| (x - lo) / span >= level))
}

/// Otsu's threshold over a 256-bin histogram of values in [0, 1].
fn otsu_level(values: impl Iterator<Item = f64>) -> f64 {
    const BINS: usize = 256;
    let mut hist = [0u64; BINS];
    let mut total = 0u64;
    for x in values {
        let b = ((x * BINS as f64) as usize).min(BINS - 1);
        hist[b] += 1;
        total += 1;
    }
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &h)| i as f64 * h as f64)
        .sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_var) = (BINS / 2, -1.0);
    for (i, &h) in hist.iter().enumerate().take(BINS - 1) {
        w0 += h as f64;
        sum0 += i as f64 * h as f64;
        let w1 = total as f64 - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let var = w0 * w1 * (m0 - m1) * (m0 - m1);
        if var > best_var {
            best_var = var;
            best = i;
        }
    }
    // class 1 starts at the next bin
    (best + 1) as f64 / BINS as f64
}

/// Foreground IoU; 1.0 when both masks are empty.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    Ok(ConfusionCounts::from_masks(pred, gt)?.iou())
}

/// (precision, recall, F1).
pub fn prf1(pred: &BinaryMask, gt: &BinaryMask) -> Result<(f64, f64, f64)> {
    let c = ConfusionCounts::from_masks(pred, gt)?;
    Ok((c.precision(), c.recall(), c.f1()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl SampleMetrics {
    pub fn from_masks(pred: &BinaryMask, gt: &BinaryMask) -> Result<Self> {
        let c = ConfusionCounts::from_masks(pred, gt)?;
        Ok(SampleMetrics {
            iou: c.iou(),
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
        })
    }

    /// Per-sample mean of every metric.
    pub fn mean(rows: &[SampleMetrics]) -> Option<SampleMetrics> {
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let sum = |f: fn(&SampleMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Some(SampleMetrics {
            iou: sum(|r| r.iou),
            precision: sum(|r| r.precision),
            recall: sum(|r| r.recall),
            f1: sum(|r| r.f1),
        })
    }
}
