//! Free-space Fresnel propagation.
//!
//! The production path multiplies the spectrum of the (optionally
//! zero-padded) field by a transfer function and transforms back, cropping
//! the centered window. Two transfer functions are available:
//!
//! * [`TransferKind::AnalyticFresnel`]: the closed-form Fourier transform of
//!   the Fresnel impulse response, `exp(ikz)·exp(−iπλz(νx²+νy²))`. Unit
//!   modulus, so propagation on the padded grid is unitary.
//! * [`TransferKind::SampledImpulse`]: the DFT of the impulse response
//!   sampled on the padded grid. With `pad_factor = 2` this is exactly the
//!   linear convolution computed by [`propagate_direct`], which makes it the
//!   FFT half of the oracle pair.
//!
//! The adjoint of propagation is propagation with the conjugated transfer
//! function ([`propagate_adjoint`]).

use std::f64::consts::PI;

use ndarray::{s, Array2, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{DonnError, Result};
use crate::fft::{signed_index, Fft2};
use crate::field::{ComplexField2D, GridSpec};

/// Largest grid accepted by the O(N⁴) direct summation.
pub const DIRECT_MAX_SIDE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferKind {
    AnalyticFresnel,
    SampledImpulse,
}

/// Precomputed spectral transfer function for one (grid, z, padding) triple.
#[derive(Debug, Clone)]
pub struct PropagationKernel {
    grid: GridSpec,
    distance_m: f64,
    pad_factor: usize,
    kind: TransferKind,
    transfer: Array2<Complex64>,
    fft: Fft2,
}

impl PropagationKernel {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn distance_m(&self) -> f64 {
        self.distance_m
    }

    pub fn pad_factor(&self) -> usize {
        self.pad_factor
    }

    pub fn kind(&self) -> TransferKind {
        self.kind
    }

    pub fn padded_side(&self) -> usize {
        self.pad_factor * self.grid.side_px
    }

    /// Transfer function samples in standard (unshifted) DFT order.
    pub fn transfer(&self) -> &Array2<Complex64> {
        &self.transfer
    }

    fn offset(&self) -> usize {
        (self.padded_side() - self.grid.side_px) / 2
    }
}

/// `side·pitch²/λ`: beyond this distance the sampled chirp of the Fresnel
/// transfer function aliases.
pub fn critical_distance(grid: &GridSpec) -> f64 {
    grid.side_px as f64 * grid.pitch_m * grid.pitch_m / grid.wavelength_m
}

fn check_args(z: f64, pad_factor: usize) -> Result<()> {
    if !(z.is_finite() && z > 0.0) {
        return Err(DonnError::Domain(format!(
            "propagation distance must be positive, got {z}"
        )));
    }
    if !matches!(pad_factor, 1 | 2) {
        return Err(DonnError::Usage(format!(
            "pad_factor must be 1 or 2, got {pad_factor}"
        )));
    }
    Ok(())
}

/// Analytic Fresnel transfer function sampled on the padded grid's DFT
/// frequencies (spacing `1/(padded_side·pitch)`).
pub fn make_fresnel_kernel(grid: GridSpec, z: f64, pad_factor: usize) -> Result<PropagationKernel> {
    check_args(z, pad_factor)?;
    let critical = critical_distance(&grid);
    if z > critical {
        log::warn!(
            "z = {z:.4} m exceeds the critical sampling distance {critical:.4} m for a {} px grid; the transfer function is undersampled",
            grid.side_px
        );
    }
    let side = pad_factor * grid.side_px;
    let dnu = 1.0 / (side as f64 * grid.pitch_m);
    let carrier = Complex64::from_polar(1.0, grid.wavenumber() * z);
    let chirp = -PI * grid.wavelength_m * z;
    let transfer = Array2::from_shape_fn((side, side), |(i, j)| {
        let nu_y = signed_index(i, side) * dnu;
        let nu_x = signed_index(j, side) * dnu;
        carrier * Complex64::from_polar(1.0, chirp * (nu_x * nu_x + nu_y * nu_y))
    });
    Ok(PropagationKernel {
        grid,
        distance_m: z,
        pad_factor,
        kind: TransferKind::AnalyticFresnel,
        transfer,
        fft: Fft2::new(side),
    })
}

/// Transfer function obtained as the DFT of the sampled impulse response
/// (pitch² scaled) laid out at signed offsets on the padded grid.
pub fn make_sampled_kernel(grid: GridSpec, z: f64, pad_factor: usize) -> Result<PropagationKernel> {
    check_args(z, pad_factor)?;
    let side = pad_factor * grid.side_px;
    let mut transfer = Array2::from_shape_fn((side, side), |(i, j)| {
        impulse_response_at(
            &grid,
            z,
            signed_index(j, side) * grid.pitch_m,
            signed_index(i, side) * grid.pitch_m,
        )
    });
    let fft = Fft2::new(side);
    fft.forward(&mut transfer);
    Ok(PropagationKernel {
        grid,
        distance_m: z,
        pad_factor,
        kind: TransferKind::SampledImpulse,
        transfer,
        fft,
    })
}

/// Fresnel impulse response `exp(ikz)/(iλz)·exp(ik(x²+y²)/2z)`, times pitch².
fn impulse_response_at(grid: &GridSpec, z: f64, x: f64, y: f64) -> Complex64 {
    let k = grid.wavenumber();
    let lead = Complex64::from_polar(1.0, k * z) / Complex64::new(0.0, grid.wavelength_m * z);
    lead * Complex64::from_polar(1.0, k / (2.0 * z) * (x * x + y * y))
        * (grid.pitch_m * grid.pitch_m)
}

/// Impulse response sampled at centered grid coordinates
/// `x = (i − side/2)·pitch`, scaled by pitch² so that a discrete
/// convolution approximates the diffraction integral.
pub fn sampled_impulse_response(grid: GridSpec, z: f64) -> Result<ComplexField2D> {
    if !(z.is_finite() && z > 0.0) {
        return Err(DonnError::Domain(format!(
            "propagation distance must be positive, got {z}"
        )));
    }
    let half = (grid.side_px / 2) as f64;
    let values = Array2::from_shape_fn(grid.shape(), |(i, j)| {
        impulse_response_at(
            &grid,
            z,
            (j as f64 - half) * grid.pitch_m,
            (i as f64 - half) * grid.pitch_m,
        )
    });
    Ok(ComplexField2D::from_parts(grid, values))
}

fn spectral_multiply(
    f: &ComplexField2D,
    kernel: &PropagationKernel,
    conjugate: bool,
) -> Result<Array2<Complex64>> {
    f.grid().ensure_same(kernel.grid(), "propagate")?;
    let side = f.grid().side_px;
    let off = kernel.offset();
    let mut work = Array2::<Complex64>::zeros((kernel.padded_side(), kernel.padded_side()));
    work.slice_mut(s![off..off + side, off..off + side])
        .assign(f.values());
    kernel.fft.forward(&mut work);
    if conjugate {
        Zip::from(&mut work)
            .and(&kernel.transfer)
            .for_each(|w, h| *w *= h.conj());
    } else {
        Zip::from(&mut work)
            .and(&kernel.transfer)
            .for_each(|w, h| *w *= h);
    }
    kernel.fft.inverse(&mut work);
    Ok(work)
}

fn crop(work: Array2<Complex64>, kernel: &PropagationKernel) -> Array2<Complex64> {
    if kernel.pad_factor == 1 {
        return work;
    }
    let side = kernel.grid.side_px;
    let off = kernel.offset();
    work.slice(s![off..off + side, off..off + side]).to_owned()
}

/// Propagates `f` over the kernel's distance: `crop(iFFT(FFT(pad(f))·H))`.
pub fn propagate(f: &ComplexField2D, kernel: &PropagationKernel) -> Result<ComplexField2D> {
    let work = spectral_multiply(f, kernel, false)?;
    Ok(ComplexField2D::from_parts(*f.grid(), crop(work, kernel)))
}

/// Same as [`propagate`] but returns the full padded field before cropping.
pub fn propagate_padded(
    f: &ComplexField2D,
    kernel: &PropagationKernel,
) -> Result<Array2<Complex64>> {
    spectral_multiply(f, kernel, false)
}

/// Adjoint of [`propagate`] under the real inner product `Re⟨a, b⟩`.
pub fn propagate_adjoint(g: &ComplexField2D, kernel: &PropagationKernel) -> Result<ComplexField2D> {
    let work = spectral_multiply(g, kernel, true)?;
    Ok(ComplexField2D::from_parts(*g.grid(), crop(work, kernel)))
}

/// Direct discretization of the diffraction integral: linear convolution of
/// `f` with the sampled impulse response, no wraparound. O(N⁴).
pub fn propagate_direct(f: &ComplexField2D, z: f64) -> Result<ComplexField2D> {
    let grid = *f.grid();
    let n = grid.side_px;
    if n > DIRECT_MAX_SIDE {
        return Err(DonnError::Usage(format!(
            "direct summation limited to {DIRECT_MAX_SIDE} px grids, got {n}"
        )));
    }
    if !(z.is_finite() && z > 0.0) {
        return Err(DonnError::Domain(format!(
            "propagation distance must be positive, got {z}"
        )));
    }
    // h at every difference (dy, dx) in [−(n−1), n−1]², index d + n − 1
    let span = 2 * n - 1;
    let table = Array2::from_shape_fn((span, span), |(i, j)| {
        let dy = i as f64 - (n - 1) as f64;
        let dx = j as f64 - (n - 1) as f64;
        impulse_response_at(&grid, z, dx * grid.pitch_m, dy * grid.pitch_m)
    });
    let src = f.values();
    let out = Array2::from_shape_fn((n, n), |(y, x)| {
        let mut acc = Complex64::new(0.0, 0.0);
        for y0 in 0..n {
            let row = y + n - 1 - y0;
            for x0 in 0..n {
                acc += src[[y0, x0]] * table[[row, x + n - 1 - x0]];
            }
        }
        acc
    });
    Ok(ComplexField2D::from_parts(grid, out))
}
