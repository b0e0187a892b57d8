//! Sampled complex scalar fields and detector intensity maps.
//!
//! Every field lives on a square [`GridSpec`]. Values are stored row-major
//! (`[row, col]`), in double precision, and are immutable once built: all
//! operations return new values.

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{DonnError, Result};

/// Square sampling grid plus the optical wavelength the field is carried on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub side_px: usize,
    pub pitch_m: f64,
    pub wavelength_m: f64,
}

impl GridSpec {
    pub fn new(side_px: usize, pitch_m: f64, wavelength_m: f64) -> Result<Self> {
        if side_px < 2 {
            return Err(DonnError::Domain(format!(
                "grid side must be at least 2 px, got {side_px}"
            )));
        }
        if !(pitch_m.is_finite() && pitch_m > 0.0) {
            return Err(DonnError::Domain(format!(
                "pixel pitch must be positive, got {pitch_m}"
            )));
        }
        if !(wavelength_m.is_finite() && wavelength_m > 0.0) {
            return Err(DonnError::Domain(format!(
                "wavelength must be positive, got {wavelength_m}"
            )));
        }
        Ok(GridSpec {
            side_px,
            pitch_m,
            wavelength_m,
        })
    }

    /// Physical side length of the aperture in meters.
    pub fn aperture_m(&self) -> f64 {
        self.side_px as f64 * self.pitch_m
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength_m
    }

    /// Same grid carried on a different wavelength.
    pub fn with_wavelength(&self, wavelength_m: f64) -> Result<Self> {
        GridSpec::new(self.side_px, self.pitch_m, wavelength_m)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.side_px, self.side_px)
    }

    pub(crate) fn ensure_same(&self, other: &GridSpec, what: &str) -> Result<()> {
        if self != other {
            return Err(DonnError::Dimension(format!(
                "{what}: grid {self:?} does not match {other:?}"
            )));
        }
        Ok(())
    }

    pub(crate) fn ensure_shape(&self, shape: (usize, usize), what: &str) -> Result<()> {
        if shape != self.shape() {
            return Err(DonnError::Dimension(format!(
                "{what}: array shape {shape:?} does not match grid side {}",
                self.side_px
            )));
        }
        Ok(())
    }
}

/// How a normalized pixel value becomes an input field amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Encoding {
    /// amplitude = p, so an unmodulated pixel has intensity p².
    #[default]
    Amplitude,
    /// amplitude = √p, so an unmodulated pixel has intensity p.
    SqrtAmplitude,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField2D {
    grid: GridSpec,
    values: Array2<Complex64>,
}

impl ComplexField2D {
    pub fn new(grid: GridSpec, values: Array2<Complex64>) -> Result<Self> {
        grid.ensure_shape(values.dim(), "complex field")?;
        if values
            .iter()
            .any(|v| !(v.re.is_finite() && v.im.is_finite()))
        {
            return Err(DonnError::Domain(
                "complex field has non-finite entries".into(),
            ));
        }
        Ok(ComplexField2D { grid, values })
    }

    /// Skips the finiteness scan; callers guarantee the invariant.
    pub(crate) fn from_parts(grid: GridSpec, values: Array2<Complex64>) -> Self {
        debug_assert_eq!(values.dim(), grid.shape());
        ComplexField2D { grid, values }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        ComplexField2D {
            grid,
            values: Array2::zeros(grid.shape()),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &Array2<Complex64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<Complex64> {
        self.values
    }

    /// Σ|f|² over the grid.
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        ComplexField2D::from_parts(self.grid, self.values.mapv(|v| v * factor))
    }

    pub fn is_finite(&self) -> bool {
        self.values
            .iter()
            .all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Relative L2 distance ‖self − other‖ / ‖other‖ (absolute if `other` is zero).
    pub fn rel_l2(&self, other: &ComplexField2D) -> f64 {
        rel_l2(&self.values, &other.values)
    }
}

pub(crate) fn rel_l2(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
    let mut diff = 0.0;
    let mut norm = 0.0;
    Zip::from(a).and(b).for_each(|x, y| {
        diff += (x - y).norm_sqr();
        norm += y.norm_sqr();
    });
    if norm == 0.0 {
        diff.sqrt()
    } else {
        (diff / norm).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMap {
    grid: GridSpec,
    values: Array2<f64>,
}

impl IntensityMap {
    pub fn new(grid: GridSpec, values: Array2<f64>) -> Result<Self> {
        grid.ensure_shape(values.dim(), "intensity map")?;
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(DonnError::Domain(
                "intensity map entries must be finite and non-negative".into(),
            ));
        }
        Ok(IntensityMap { grid, values })
    }

    pub(crate) fn from_parts(grid: GridSpec, values: Array2<f64>) -> Self {
        IntensityMap { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn total(&self) -> f64 {
        self.values.sum()
    }

    /// The same samples tagged with another grid of identical sampling.
    pub(crate) fn retag(self, grid: GridSpec) -> Self {
        debug_assert_eq!(grid.shape(), self.grid.shape());
        IntensityMap {
            grid,
            values: self.values,
        }
    }
}

/// Binary ground-truth or prediction mask; every entry is 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    values: Array2<u8>,
}

impl BinaryMask {
    pub fn new(values: Array2<u8>) -> Result<Self> {
        if values.iter().any(|&v| v > 1) {
            return Err(DonnError::Domain("mask entries must be 0 or 1".into()));
        }
        Ok(BinaryMask { values })
    }

    pub fn from_bools(values: &Array2<bool>) -> Self {
        BinaryMask {
            values: values.mapv(u8::from),
        }
    }

    pub fn zeros(shape: (usize, usize)) -> Self {
        BinaryMask {
            values: Array2::zeros(shape),
        }
    }

    pub fn values(&self) -> &Array2<u8> {
        &self.values
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_f64(&self) -> Array2<f64> {
        self.values.mapv(f64::from)
    }
}

/// Amplitude-encodes a normalized image onto a zero-phase field.
pub fn field_from_amplitude(img: &Array2<f64>, grid: GridSpec) -> Result<ComplexField2D> {
    field_from_image(img, grid, Encoding::Amplitude)
}

pub fn field_from_image(
    img: &Array2<f64>,
    grid: GridSpec,
    encoding: Encoding,
) -> Result<ComplexField2D> {
    grid.ensure_shape(img.dim(), "input image")?;
    if let Some(bad) = img.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(DonnError::Domain(format!(
            "pixel value {bad} outside [0, 1]"
        )));
    }
    let values = match encoding {
        Encoding::Amplitude => img.mapv(|p| Complex64::new(p, 0.0)),
        Encoding::SqrtAmplitude => img.mapv(|p| Complex64::new(p.sqrt(), 0.0)),
    };
    Ok(ComplexField2D::from_parts(grid, values))
}

/// Detector intensity |f|² = Re² + Im².
pub fn intensity(f: &ComplexField2D) -> IntensityMap {
    IntensityMap::from_parts(f.grid, f.values.mapv(|v| v.re * v.re + v.im * v.im))
}

/// Coherent (complex) sum of two fields.
pub fn add_fields(a: &ComplexField2D, b: &ComplexField2D) -> Result<ComplexField2D> {
    a.grid.ensure_same(&b.grid, "add_fields")?;
    Ok(ComplexField2D::from_parts(a.grid, &a.values + &b.values))
}

/// Incoherent sum of intensity maps.
pub fn add_intensities(parts: &[IntensityMap]) -> Result<IntensityMap> {
    let (first, rest) = parts
        .split_first()
        .ok_or_else(|| DonnError::Usage("add_intensities needs at least one map".into()))?;
    let mut values = first.values.clone();
    for part in rest {
        first.grid.ensure_same(&part.grid, "add_intensities")?;
        values += &part.values;
    }
    Ok(IntensityMap::from_parts(first.grid, values))
}
