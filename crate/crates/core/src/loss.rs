//! Training losses on the max-normalized detector image.
//!
//! All losses compare `P = I_det / max(I_det)` (floored at
//! [`NORM_FLOOR`]) against a binary ground truth. Each loss has a value and
//! a gradient with respect to `P`; [`normalize_backward`] carries that
//! gradient back to the raw intensity, including the dependence of the
//! normalizer on its argmax pixel.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{DonnError, Result};
use crate::field::{BinaryMask, IntensityMap};

pub const NORM_FLOOR: f64 = 1e-12;
pub const BCE_EPS: f64 = 1e-7;
pub const DICE_SMOOTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LossKind {
    Mse,
    Bce,
    Dice,
    WeightedBce { pos_weight: f64 },
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Bce => "bce",
            LossKind::Dice => "dice",
            LossKind::WeightedBce { .. } => "weighted-bce",
        }
    }
}

/// Normalized detector map plus what the backward pass needs.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub p: Array2<f64>,
    pub scale: f64,
    /// Pixel that set the scale, `None` when the floor was used.
    pub argmax: Option<(usize, usize)>,
}

pub fn normalize(i_det: &IntensityMap) -> Normalized {
    let mut best = f64::NEG_INFINITY;
    let mut at = (0, 0);
    for (idx, &v) in i_det.values().indexed_iter() {
        if v > best {
            best = v;
            at = idx;
        }
    }
    let (scale, argmax) = if best > NORM_FLOOR {
        (best, Some(at))
    } else {
        (NORM_FLOOR, None)
    };
    Normalized {
        p: i_det.values().mapv(|v| v / scale),
        scale,
        argmax,
    }
}

/// Gradient w.r.t. raw intensity given the gradient w.r.t. `P`.
pub fn normalize_backward(
    norm: &Normalized,
    i_det: &IntensityMap,
    p_bar: &Array2<f64>,
) -> Array2<f64> {
    let mut i_bar = p_bar / norm.scale;
    if let Some(at) = norm.argmax {
        let dot: f64 = Zip::from(p_bar)
            .and(i_det.values())
            .fold(0.0, |acc, g, i| acc + g * i);
        i_bar[at] -= dot / (norm.scale * norm.scale);
    }
    i_bar
}

fn check_shape(p: &Array2<f64>, gt: &BinaryMask) -> Result<()> {
    if p.dim() != gt.dim() {
        return Err(DonnError::Dimension(format!(
            "prediction shape {:?} does not match ground truth {:?}",
            p.dim(),
            gt.dim()
        )));
    }
    Ok(())
}

/// Mean squared error over all pixels.
pub fn loss_mse(p: &Array2<f64>, gt: &BinaryMask) -> Result<f64> {
    Ok(mse(p, gt, false)?.0)
}

/// Mean (weighted) binary cross-entropy with `p` clamped to [ε, 1−ε].
pub fn loss_bce(p: &Array2<f64>, gt: &BinaryMask, pos_weight: f64) -> Result<f64> {
    Ok(bce(p, gt, pos_weight, false)?.0)
}

/// Soft Dice loss `1 − (2Σpg + s)/(Σp + Σg + s)`.
pub fn loss_dice(p: &Array2<f64>, gt: &BinaryMask) -> Result<f64> {
    Ok(dice(p, gt, false)?.0)
}

/// Loss value and its gradient with respect to `p`.
pub fn loss_and_grad(
    kind: LossKind,
    p: &Array2<f64>,
    gt: &BinaryMask,
) -> Result<(f64, Array2<f64>)> {
    let (value, grad) = match kind {
        LossKind::Mse => mse(p, gt, true)?,
        LossKind::Bce => bce(p, gt, 1.0, true)?,
        LossKind::WeightedBce { pos_weight } => bce(p, gt, pos_weight, true)?,
        LossKind::Dice => dice(p, gt, true)?,
    };
    Ok((value, grad.expect("gradient requested")))
}

pub fn loss_value(kind: LossKind, p: &Array2<f64>, gt: &BinaryMask) -> Result<f64> {
    match kind {
        LossKind::Mse => loss_mse(p, gt),
        LossKind::Bce => loss_bce(p, gt, 1.0),
        LossKind::WeightedBce { pos_weight } => loss_bce(p, gt, pos_weight),
        LossKind::Dice => loss_dice(p, gt),
    }
}

/// `#negatives / #positives`, the weight that balances the two classes.
pub fn balancing_pos_weight<'a>(masks: impl IntoIterator<Item = &'a BinaryMask>) -> Result<f64> {
    let (mut pos, mut total) = (0usize, 0usize);
    for m in masks {
        pos += m.count_ones();
        total += m.len();
    }
    if pos == 0 || pos == total {
        return Err(DonnError::Usage(
            "class-balancing weight needs both positive and negative pixels".into(),
        ));
    }
    Ok((total - pos) as f64 / pos as f64)
}

type LossOut = (f64, Option<Array2<f64>>);

fn mse(p: &Array2<f64>, gt: &BinaryMask, want_grad: bool) -> Result<LossOut> {
    check_shape(p, gt)?;
    let n = p.len() as f64;
    let mut sum = 0.0;
    Zip::from(p).and(gt.values()).for_each(|&pi, &g| {
        let d = pi - f64::from(g);
        sum += d * d;
    });
    let grad = want_grad.then(|| {
        Zip::from(p)
            .and(gt.values())
            .map_collect(|&pi, &g| 2.0 * (pi - f64::from(g)) / n)
    });
    Ok((sum / n, grad))
}

fn bce(p: &Array2<f64>, gt: &BinaryMask, pos_weight: f64, want_grad: bool) -> Result<LossOut> {
    check_shape(p, gt)?;
    if !(pos_weight.is_finite() && pos_weight > 0.0) {
        return Err(DonnError::Domain(format!(
            "pos_weight must be positive, got {pos_weight}"
        )));
    }
    let n = p.len() as f64;
    let mut sum = 0.0;
    Zip::from(p).and(gt.values()).for_each(|&pi, &g| {
        let q = pi.clamp(BCE_EPS, 1.0 - BCE_EPS);
        sum -= if g == 1 {
            pos_weight * q.ln()
        } else {
            (1.0 - q).ln()
        };
    });
    let grad = want_grad.then(|| {
        Zip::from(p).and(gt.values()).map_collect(|&pi, &g| {
            // clamp has zero derivative outside the open interval
            if !(BCE_EPS < pi && pi < 1.0 - BCE_EPS) {
                0.0
            } else if g == 1 {
                -pos_weight / (pi * n)
            } else {
                1.0 / ((1.0 - pi) * n)
            }
        })
    });
    Ok((sum / n, grad))
}

fn dice(p: &Array2<f64>, gt: &BinaryMask, want_grad: bool) -> Result<LossOut> {
    check_shape(p, gt)?;
    let (mut spg, mut sp, mut sg) = (0.0, 0.0, 0.0);
    Zip::from(p).and(gt.values()).for_each(|&pi, &g| {
        let g = f64::from(g);
        spg += pi * g;
        sp += pi;
        sg += g;
    });
    let num = 2.0 * spg + DICE_SMOOTH;
    let den = sp + sg + DICE_SMOOTH;
    let grad = want_grad.then(|| {
        gt.values()
            .mapv(|g| -(2.0 * f64::from(g) * den - num) / (den * den))
    });
    Ok((1.0 - num / den, grad))
}
