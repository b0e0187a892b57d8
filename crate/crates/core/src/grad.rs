//! Reverse-mode gradients of detector losses with respect to every phase
//! value, plus the central-difference oracle used to check them.
//!
//! Cotangents of complex fields use the convention `ḡ = ∂L/∂Re f + i·∂L/∂Im f`.
//! Under it:
//!
//! * propagation back-propagates through the conjugated transfer function,
//! * `y = x·e^{iθ}` gives `x̄ = ȳ·e^{−iθ}` and `θ̄ = Im(conj(y)·ȳ)`,
//! * `I = |f|²` gives `f̄ = 2·Ī·f`,
//! * a skip junction hands the same cotangent to both incoming branches.

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DonnError, Result};
use crate::field::{add_intensities, intensity, BinaryMask, ComplexField2D, IntensityMap};
use crate::loss::{loss_and_grad, loss_value, normalize, normalize_backward, LossKind};
use crate::model::{detector_field, forward_channel_trace, ChannelPipeline, DonnModel};
use crate::propagation::propagate_adjoint;

pub const FD_STEP: f64 = 1e-5;
pub const FD_MAX_COORDS: usize = 100;

/// ∂L/∂θ for every mask, indexed `[channel][layer]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    grads: [Vec<Array2<f64>>; 3],
}

impl GradientSet {
    pub fn zeros_like(model: &DonnModel) -> Self {
        let shape = model.grid().shape();
        GradientSet {
            grads: std::array::from_fn(|_| vec![Array2::zeros(shape); model.layer_count()]),
        }
    }

    pub fn get(&self, channel: usize, layer: usize) -> &Array2<f64> {
        &self.grads[channel][layer]
    }

    pub fn get_mut(&mut self, channel: usize, layer: usize) -> &mut Array2<f64> {
        &mut self.grads[channel][layer]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.grads.iter().flatten()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Array2<f64>> {
        self.grads.iter_mut().flatten()
    }

    pub fn at(&self, c: ParamCoord) -> f64 {
        self.grads[c.channel][c.layer][[c.row, c.col]]
    }

    pub fn layer_count(&self) -> usize {
        self.grads[0].len()
    }

    pub fn add_assign(&mut self, other: &GradientSet) -> Result<()> {
        self.ensure_congruent(other)?;
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.iter_mut() {
            g.mapv_inplace(|v| v * factor);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().flatten().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_congruent(&self, other: &GradientSet) -> Result<()> {
        let same =
            self.grads.iter().zip(other.grads.iter()).all(|(a, b)| {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.dim() == y.dim())
            });
        if !same {
            return Err(DonnError::Dimension(
                "gradient sets are not congruent".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn ensure_matches(&self, model: &DonnModel) -> Result<()> {
        let ok = self.layer_count() == model.layer_count()
            && self.iter().all(|g| g.dim() == model.grid().shape());
        if !ok {
            return Err(DonnError::Dimension(
                "gradient set does not match model parameters".into(),
            ));
        }
        Ok(())
    }
}

/// One scalar phase parameter: `theta[channel][layer][row, col]`, zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCoord {
    pub channel: usize,
    pub layer: usize,
    pub row: usize,
    pub col: usize,
}

/// Uniformly sampled distinct parameter coordinates.
pub fn sample_coords(model: &DonnModel, count: usize, seed: u64) -> Vec<ParamCoord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = model.grid().side_px;
    let count = count.min(model.parameter_count());
    let mut out: Vec<ParamCoord> = Vec::with_capacity(count);
    while out.len() < count {
        let c = ParamCoord {
            channel: rng.gen_range(0..3),
            layer: rng.gen_range(0..model.layer_count()),
            row: rng.gen_range(0..side),
            col: rng.gen_range(0..side),
        };
        if !out.contains(&c) {
            out.push(c);
        }
    }
    out
}

/// Result of a forward + backward pass on one sample.
#[derive(Debug, Clone)]
pub struct BackwardOutput {
    pub loss: f64,
    pub grads: GradientSet,
    pub detector: IntensityMap,
}

/// Loss of one sample through the full forward path.
pub fn evaluate_loss(
    model: &DonnModel,
    fields: &[ComplexField2D; 3],
    gt: &BinaryMask,
    loss: LossKind,
) -> Result<f64> {
    let parts = model.channel_intensities([&fields[0], &fields[1], &fields[2]])?;
    let det = add_intensities(&parts)?;
    loss_value(loss, &normalize(&det).p, gt)
}

/// Loss value and exact reverse-mode gradients for one sample.
pub fn backward(
    model: &DonnModel,
    fields: &[ComplexField2D; 3],
    gt: &BinaryMask,
    loss: LossKind,
) -> Result<(f64, GradientSet)> {
    let out = backward_full(model, fields, gt, loss)?;
    Ok((out.loss, out.grads))
}

pub fn backward_full(
    model: &DonnModel,
    fields: &[ComplexField2D; 3],
    gt: &BinaryMask,
    loss: LossKind,
) -> Result<BackwardOutput> {
    let mut traces = Vec::with_capacity(3);
    for (c, (f, ch)) in fields.iter().zip(model.channels()).enumerate() {
        traces.push(forward_channel_trace(f, ch, c)?);
    }
    let detected = traces
        .iter()
        .zip(model.channels())
        .map(|(t, ch)| detector_field(t.last().expect("non-empty"), ch))
        .collect::<Result<Vec<_>>>()?;
    let parts: Vec<IntensityMap> = detected
        .iter()
        .map(|d| intensity(d).retag(*model.grid()))
        .collect();
    let detector = add_intensities(&parts)?;
    let norm = normalize(&detector);
    let (value, p_bar) = loss_and_grad(loss, &norm.p, gt)?;
    let i_bar = normalize_backward(&norm, &detector, &p_bar);

    let mut grads = GradientSet::zeros_like(model);
    for (c, (trace, det)) in traces.iter().zip(&detected).enumerate() {
        let ch = model.channel(c);
        // I_det is a plain sum, so every channel sees the same Ī
        let det_bar = Zip::from(&i_bar)
            .and(det.values())
            .map_collect(|&g, &f| f * (2.0 * g));
        let seed = propagate_adjoint(
            &ComplexField2D::from_parts(*ch.grid(), det_bar),
            ch.kernels().span(1),
        )?;
        channel_backward(ch, c, trace, seed.into_values(), &mut grads.grads[c])?;
    }
    Ok(BackwardOutput {
        loss: value,
        grads,
        detector,
    })
}

fn channel_backward(
    ch: &ChannelPipeline,
    channel_index: usize,
    outputs: &[ComplexField2D],
    final_cotangent: Array2<Complex64>,
    grads: &mut [Array2<f64>],
) -> Result<()> {
    let n = ch.layer_count();
    let grid = *ch.grid();
    let mut cot: Vec<Option<Array2<Complex64>>> = vec![None; n];
    cot[n - 1] = Some(final_cotangent);
    for layer in (1..=n).rev() {
        let idx = layer - 1;
        let Some(y_bar) = cot[idx].take() else {
            // nothing downstream depends on this layer
            continue;
        };
        let y = outputs[idx].values();
        let mask = &ch.masks()[idx];
        Zip::from(&mut grads[idx])
            .and(y)
            .and(&y_bar)
            .for_each(|g, yv, yb| *g = (yv.conj() * yb).im);
        let u_bar = Zip::from(&y_bar)
            .and(mask.theta())
            .map_collect(|yb, &t| yb * Complex64::from_polar(1.0, -t));
        let entering_bar = propagate_adjoint(
            &ComplexField2D::from_parts(grid, u_bar),
            ch.kernels().span(1),
        )?;
        if !entering_bar.is_finite() {
            return Err(DonnError::Numeric {
                channel: channel_index,
                layer,
                what: "backward cotangent".into(),
            });
        }
        for skip in ch.skips_into(layer) {
            let branch = propagate_adjoint(&entering_bar, ch.kernels().span(skip.span()))?;
            accumulate(&mut cot[skip.from_layer - 1], branch.into_values());
        }
        if idx > 0 {
            accumulate(&mut cot[idx - 1], entering_bar.into_values());
        }
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Array2<Complex64>>, value: Array2<Complex64>) {
    match slot {
        Some(acc) => *acc += &value,
        None => *slot = Some(value),
    }
}

/// Central differences `(L(θ+h) − L(θ−h)) / 2h` at the given coordinates.
pub fn finite_diff_grad(
    model: &DonnModel,
    fields: &[ComplexField2D; 3],
    gt: &BinaryMask,
    loss: LossKind,
    coords: &[ParamCoord],
    step: f64,
) -> Result<Vec<f64>> {
    if coords.len() > FD_MAX_COORDS {
        return Err(DonnError::Usage(format!(
            "at most {FD_MAX_COORDS} finite-difference coordinates per call, got {}",
            coords.len()
        )));
    }
    let mut probe = model.clone();
    coords
        .iter()
        .map(|&c| {
            let theta = probe.mask_mut(c.channel, c.layer).theta_mut();
            let orig = theta[[c.row, c.col]];
            theta[[c.row, c.col]] = orig + step;
            let up = evaluate_loss(&probe, fields, gt, loss);
            probe.mask_mut(c.channel, c.layer).theta_mut()[[c.row, c.col]] = orig - step;
            let down = evaluate_loss(&probe, fields, gt, loss);
            probe.mask_mut(c.channel, c.layer).theta_mut()[[c.row, c.col]] = orig;
            Ok((up? - down?) / (2.0 * step))
        })
        .collect()
}

/// Relative disagreement `|a − b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoordCheck {
    pub coord: ParamCoord,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub loss: f64,
    pub tolerance: f64,
    pub checks: Vec<CoordCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.checks.iter().fold(0.0, |m, c| m.max(c.rel_error))
    }

    pub fn passed(&self) -> bool {
        self.worst() < self.tolerance
    }
}

/// Compares a gradient provider against central differences.
///
/// `gradient` is normally [`backward`]; tests substitute a corrupted one to
/// confirm the check can fail.
pub fn gradcheck<F>(
    model: &DonnModel,
    fields: &[ComplexField2D; 3],
    gt: &BinaryMask,
    loss: LossKind,
    coords: &[ParamCoord],
    tolerance: f64,
    gradient: F,
) -> Result<GradCheckReport>
where
    F: Fn(&DonnModel, &[ComplexField2D; 3], &BinaryMask, LossKind) -> Result<(f64, GradientSet)>,
{
    let (value, grads) = gradient(model, fields, gt, loss)?;
    let mut checks = Vec::with_capacity(coords.len());
    for chunk in coords.chunks(FD_MAX_COORDS) {
        let numeric = finite_diff_grad(model, fields, gt, loss, chunk, FD_STEP)?;
        for (&coord, num) in chunk.iter().zip(numeric) {
            let analytic = grads.at(coord);
            checks.push(CoordCheck {
                coord,
                analytic,
                numeric: num,
                rel_error: relative_error(analytic, num),
            });
        }
    }
    Ok(GradCheckReport {
        loss: value,
        tolerance,
        checks,
    })
}
