//! Three-channel diffractive network: stacks of phase-only masks separated
//! by free space, with optional optical skip connections.
//!
//! One layer ("DiffMod") propagates the incoming field over the inter-layer
//! distance `z` and multiplies it by `exp(iθ)`. A skip `(a, b)` takes the
//! field leaving layer `a`, propagates it over `(b − a)·z` and adds it
//! coherently to the field entering layer `b` (which then still travels `z`
//! before mask `b`).

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DonnError, Result};
use crate::field::{
    add_intensities, field_from_image, intensity, ComplexField2D, Encoding, GridSpec, IntensityMap,
};
use crate::propagation::{make_fresnel_kernel, propagate, PropagationKernel};

pub const DEFAULT_WAVELENGTH_M: f64 = 532e-9;
pub const DEFAULT_PITCH_M: f64 = 36e-6;
pub const DEFAULT_DISTANCE_M: f64 = 0.2794;
pub const DEFAULT_PAD_FACTOR: usize = 2;

pub const CHANNEL_NAMES: [&str; 3] = ["R", "G", "B"];

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMask {
    grid: GridSpec,
    theta: Array2<f64>,
}

impl PhaseMask {
    pub fn new(grid: GridSpec, theta: Array2<f64>) -> Result<Self> {
        grid.ensure_shape(theta.dim(), "phase mask")?;
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(DonnError::Domain(
                "phase mask has non-finite entries".into(),
            ));
        }
        Ok(PhaseMask { grid, theta })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        PhaseMask {
            grid,
            theta: Array2::zeros(grid.shape()),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn theta(&self) -> &Array2<f64> {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut Array2<f64> {
        &mut self.theta
    }

    /// W = exp(iθ).
    pub fn modulation(&self) -> Array2<Complex64> {
        self.theta.mapv(|t| Complex64::from_polar(1.0, t))
    }
}

/// Skip connection from the output of layer `from_layer` to the input of
/// layer `to_layer` (both 1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SkipSpec {
    pub from_layer: usize,
    pub to_layer: usize,
}

impl SkipSpec {
    pub fn new(from_layer: usize, to_layer: usize) -> Result<Self> {
        if from_layer == 0 || to_layer <= from_layer + 1 {
            return Err(DonnError::Usage(format!(
                "skip ({from_layer}->{to_layer}) must satisfy 1 <= a and b > a + 1"
            )));
        }
        Ok(SkipSpec {
            from_layer,
            to_layer,
        })
    }

    /// Number of inter-layer gaps the skip spans; its distance is this times z.
    pub fn span(&self) -> usize {
        self.to_layer - self.from_layer
    }
}

impl fmt::Display for SkipSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.from_layer, self.to_layer)
    }
}

fn validate_skips(skips: &[SkipSpec], layers: usize) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for s in skips {
        SkipSpec::new(s.from_layer, s.to_layer)?;
        if s.to_layer > layers {
            return Err(DonnError::Usage(format!(
                "skip {s} exceeds layer count {layers}"
            )));
        }
        if !seen.insert(*s) {
            return Err(DonnError::Usage(format!("duplicate skip {s}")));
        }
    }
    Ok(())
}

/// Kernels for one wavelength: index 1 is the inter-layer step, larger
/// indices are skip spans.
#[derive(Debug, Clone)]
pub(crate) struct KernelSet {
    by_span: BTreeMap<usize, Arc<PropagationKernel>>,
}

impl KernelSet {
    fn build(grid: GridSpec, z: f64, pad_factor: usize, skips: &[SkipSpec]) -> Result<Self> {
        let mut by_span = BTreeMap::new();
        for span in std::iter::once(1).chain(skips.iter().map(SkipSpec::span)) {
            if let std::collections::btree_map::Entry::Vacant(e) = by_span.entry(span) {
                e.insert(Arc::new(make_fresnel_kernel(
                    grid,
                    span as f64 * z,
                    pad_factor,
                )?));
            }
        }
        Ok(KernelSet { by_span })
    }

    pub(crate) fn span(&self, span: usize) -> &PropagationKernel {
        &self.by_span[&span]
    }
}

#[derive(Debug, Clone)]
pub struct ChannelPipeline {
    grid: GridSpec,
    masks: Vec<PhaseMask>,
    skips: Vec<SkipSpec>,
    inter_layer_z: f64,
    kernels: Arc<KernelSet>,
}

impl ChannelPipeline {
    pub fn new(
        masks: Vec<PhaseMask>,
        skips: Vec<SkipSpec>,
        inter_layer_z: f64,
        pad_factor: usize,
    ) -> Result<Self> {
        let grid = *masks
            .first()
            .ok_or_else(|| DonnError::Usage("a channel needs at least one layer".into()))?
            .grid();
        for m in &masks {
            grid.ensure_same(m.grid(), "channel masks")?;
        }
        validate_skips(&skips, masks.len())?;
        let kernels = Arc::new(KernelSet::build(grid, inter_layer_z, pad_factor, &skips)?);
        Ok(ChannelPipeline {
            grid,
            masks,
            skips,
            inter_layer_z,
            kernels,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn masks(&self) -> &[PhaseMask] {
        &self.masks
    }

    pub fn masks_mut(&mut self) -> &mut [PhaseMask] {
        &mut self.masks
    }

    pub fn skips(&self) -> &[SkipSpec] {
        &self.skips
    }

    pub fn inter_layer_z(&self) -> f64 {
        self.inter_layer_z
    }

    pub fn layer_count(&self) -> usize {
        self.masks.len()
    }

    /// Kernel for propagation over `span·z`.
    pub fn kernel(&self, span: usize) -> Option<&PropagationKernel> {
        self.kernels.by_span.get(&span).map(|k| k.as_ref())
    }

    pub(crate) fn kernels(&self) -> &KernelSet {
        &self.kernels
    }

    /// Skips landing on 1-based layer `layer`.
    pub(crate) fn skips_into(&self, layer: usize) -> impl Iterator<Item = &SkipSpec> {
        self.skips.iter().filter(move |s| s.to_layer == layer)
    }
}

/// Propagate over the kernel distance, then apply the phase mask.
pub fn diff_mod(
    f: &ComplexField2D,
    mask: &PhaseMask,
    kernel: &PropagationKernel,
) -> Result<ComplexField2D> {
    f.grid().ensure_same(mask.grid(), "diff_mod")?;
    let propagated = propagate(f, kernel)?;
    let mut values = propagated.into_values();
    Zip::from(&mut values)
        .and(mask.theta())
        .for_each(|v, &t| *v *= Complex64::from_polar(1.0, t));
    Ok(ComplexField2D::from_parts(*f.grid(), values))
}

/// Field leaving every layer, in order. `outputs[l]` is the field after
/// mask `l + 1`.
pub(crate) fn forward_channel_trace(
    f0: &ComplexField2D,
    ch: &ChannelPipeline,
    channel_index: usize,
) -> Result<Vec<ComplexField2D>> {
    f0.grid().ensure_same(ch.grid(), "forward_channel")?;
    let mut outputs: Vec<ComplexField2D> = Vec::with_capacity(ch.layer_count());
    for (idx, mask) in ch.masks.iter().enumerate() {
        let layer = idx + 1;
        let prev = if idx == 0 { f0 } else { &outputs[idx - 1] };
        let out = if ch.skips_into(layer).next().is_none() {
            diff_mod(prev, mask, ch.kernels.span(1))?
        } else {
            let mut entering = prev.values().clone();
            for skip in ch.skips_into(layer) {
                let branch =
                    propagate(&outputs[skip.from_layer - 1], ch.kernels.span(skip.span()))?;
                entering += branch.values();
            }
            let entering = ComplexField2D::from_parts(*prev.grid(), entering);
            diff_mod(&entering, mask, ch.kernels.span(1))?
        };
        if !out.is_finite() {
            return Err(DonnError::Numeric {
                channel: channel_index,
                layer,
                what: "forward field".into(),
            });
        }
        outputs.push(out);
    }
    Ok(outputs)
}

/// Field at the detector plane: the last layer's output carried over one
/// more inter-layer distance.
pub fn detector_field(last: &ComplexField2D, ch: &ChannelPipeline) -> Result<ComplexField2D> {
    propagate(last, ch.kernels.span(1))
}

/// Field after the final mask of one channel.
pub fn forward_channel(f0: &ComplexField2D, ch: &ChannelPipeline) -> Result<ComplexField2D> {
    let mut outputs = forward_channel_trace(f0, ch, 0)?;
    Ok(outputs.pop().expect("channel has at least one layer"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[serde(rename = "cityscapes-12")]
    Cityscapes12,
    #[serde(rename = "cityscapes-15")]
    Cityscapes15,
    #[serde(rename = "lane-8")]
    Lane8,
    Custom,
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Cityscapes12 => "cityscapes-12",
            Preset::Cityscapes15 => "cityscapes-15",
            Preset::Lane8 => "lane-8",
            Preset::Custom => "custom",
        }
    }

    /// (side, layers, skips) of the named topologies.
    pub fn topology(&self) -> Option<(usize, usize, Vec<SkipSpec>)> {
        let skips = |pairs: &[(usize, usize)]| {
            pairs
                .iter()
                .map(|&(from_layer, to_layer)| SkipSpec {
                    from_layer,
                    to_layer,
                })
                .collect::<Vec<_>>()
        };
        match self {
            Preset::Cityscapes15 => Some((480, 15, skips(&[(1, 15), (2, 14), (3, 13)]))),
            Preset::Cityscapes12 => Some((480, 12, skips(&[(1, 12), (2, 11), (3, 10)]))),
            Preset::Lane8 => Some((400, 8, skips(&[(1, 6), (2, 7), (3, 8)]))),
            Preset::Custom => None,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = DonnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cityscapes-12" => Ok(Preset::Cityscapes12),
            "cityscapes-15" => Ok(Preset::Cityscapes15),
            "lane-8" => Ok(Preset::Lane8),
            "custom" => Ok(Preset::Custom),
            other => Err(DonnError::Usage(format!(
                "unknown preset '{other}' (expected cityscapes-12, cityscapes-15, lane-8 or custom)"
            ))),
        }
    }
}

/// Fully resolved architecture and optics of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub preset: Preset,
    pub side_px: usize,
    pub pitch_m: f64,
    pub wavelength_m: f64,
    /// Optional per-channel (R, G, B) wavelength override.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_wavelengths_m: Option<[f64; 3]>,
    pub distance_m: f64,
    pub pad_factor: usize,
    pub layers: usize,
    pub skips: Vec<SkipSpec>,
    #[serde(default)]
    pub encoding: Encoding,
}

impl ModelConfig {
    /// Preset topology with the default optical constants.
    pub fn from_preset(preset: Preset) -> Result<Self> {
        let (side_px, layers, skips) = preset.topology().ok_or_else(|| {
            DonnError::Usage("custom preset requires explicit grid, layers and skips".into())
        })?;
        Ok(ModelConfig {
            preset,
            side_px,
            pitch_m: DEFAULT_PITCH_M,
            wavelength_m: DEFAULT_WAVELENGTH_M,
            channel_wavelengths_m: None,
            distance_m: DEFAULT_DISTANCE_M,
            pad_factor: DEFAULT_PAD_FACTOR,
            layers,
            skips,
            encoding: Encoding::Amplitude,
        })
    }

    pub fn custom(side_px: usize, layers: usize, skips: Vec<SkipSpec>) -> Self {
        ModelConfig {
            preset: Preset::Custom,
            side_px,
            pitch_m: DEFAULT_PITCH_M,
            wavelength_m: DEFAULT_WAVELENGTH_M,
            channel_wavelengths_m: None,
            distance_m: DEFAULT_DISTANCE_M,
            pad_factor: DEFAULT_PAD_FACTOR,
            layers,
            skips,
            encoding: Encoding::Amplitude,
        }
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.side_px, self.pitch_m, self.wavelength_m)
    }

    pub fn channel_grid(&self, channel: usize) -> Result<GridSpec> {
        match self.channel_wavelengths_m {
            Some(ws) => GridSpec::new(self.side_px, self.pitch_m, ws[channel]),
            None => self.grid(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        for c in 0..3 {
            self.channel_grid(c)?;
        }
        if self.layers == 0 {
            return Err(DonnError::Usage("layer count must be positive".into()));
        }
        if !(self.distance_m.is_finite() && self.distance_m > 0.0) {
            return Err(DonnError::Domain(format!(
                "inter-layer distance must be positive, got {}",
                self.distance_m
            )));
        }
        if !matches!(self.pad_factor, 1 | 2) {
            return Err(DonnError::Usage(format!(
                "pad_factor must be 1 or 2, got {}",
                self.pad_factor
            )));
        }
        validate_skips(&self.skips, self.layers)
    }
}

#[derive(Debug, Clone)]
pub struct DonnModel {
    config: ModelConfig,
    grid: GridSpec,
    channels: [ChannelPipeline; 3],
}

impl DonnModel {
    /// Builds a model from explicit per-channel θ arrays
    /// (`thetas[channel][layer]`).
    pub fn from_thetas(config: ModelConfig, thetas: [Vec<Array2<f64>>; 3]) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        // channels on the same wavelength share kernels
        let mut kernel_cache: Vec<(u64, Arc<KernelSet>)> = Vec::new();
        let mut channels = Vec::with_capacity(3);
        for (c, layer_thetas) in thetas.into_iter().enumerate() {
            if layer_thetas.len() != config.layers {
                return Err(DonnError::Dimension(format!(
                    "channel {} has {} masks, expected {}",
                    CHANNEL_NAMES[c],
                    layer_thetas.len(),
                    config.layers
                )));
            }
            let cgrid = config.channel_grid(c)?;
            let masks = layer_thetas
                .into_iter()
                .map(|t| PhaseMask::new(cgrid, t))
                .collect::<Result<Vec<_>>>()?;
            let key = cgrid.wavelength_m.to_bits();
            let kernels = match kernel_cache.iter().find(|(k, _)| *k == key) {
                Some((_, ks)) => ks.clone(),
                None => {
                    let ks = Arc::new(KernelSet::build(
                        cgrid,
                        config.distance_m,
                        config.pad_factor,
                        &config.skips,
                    )?);
                    kernel_cache.push((key, ks.clone()));
                    ks
                }
            };
            channels.push(ChannelPipeline {
                grid: cgrid,
                masks,
                skips: config.skips.clone(),
                inter_layer_z: config.distance_m,
                kernels,
            });
        }
        let channels: [ChannelPipeline; 3] = channels.try_into().expect("three channels");
        Ok(DonnModel {
            config,
            grid,
            channels,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn channels(&self) -> &[ChannelPipeline; 3] {
        &self.channels
    }

    pub fn channel(&self, c: usize) -> &ChannelPipeline {
        &self.channels[c]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut ChannelPipeline {
        &mut self.channels[c]
    }

    pub fn layer_count(&self) -> usize {
        self.config.layers
    }

    /// Total number of trainable phase values.
    pub fn parameter_count(&self) -> usize {
        3 * self.config.layers * self.config.side_px * self.config.side_px
    }

    pub fn mask(&self, channel: usize, layer: usize) -> &PhaseMask {
        &self.channels[channel].masks[layer]
    }

    pub fn mask_mut(&mut self, channel: usize, layer: usize) -> &mut PhaseMask {
        &mut self.channels[channel].masks[layer]
    }

    pub fn thetas(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.channels
            .iter()
            .flat_map(|c| c.masks.iter().map(PhaseMask::theta))
    }

    pub fn thetas_mut(&mut self) -> impl Iterator<Item = &mut Array2<f64>> {
        self.channels
            .iter_mut()
            .flat_map(|c| c.masks.iter_mut().map(PhaseMask::theta_mut))
    }

    /// Encodes the three channel images onto fields on each channel's grid.
    pub fn encode(
        &self,
        r: &Array2<f64>,
        g: &Array2<f64>,
        b: &Array2<f64>,
    ) -> Result<[ComplexField2D; 3]> {
        let enc = self.config.encoding;
        Ok([
            field_from_image(r, self.channels[0].grid, enc)?,
            field_from_image(g, self.channels[1].grid, enc)?,
            field_from_image(b, self.channels[2].grid, enc)?,
        ])
    }

    /// Per-channel detector intensities `[I_R, I_G, I_B]` on the model grid.
    pub fn channel_intensities(&self, fields: [&ComplexField2D; 3]) -> Result<[IntensityMap; 3]> {
        let mut out = Vec::with_capacity(3);
        for (c, (f, ch)) in fields.iter().zip(&self.channels).enumerate() {
            let last = forward_channel_trace(f, ch, c)?.pop().expect("non-empty");
            out.push(intensity(&detector_field(&last, ch)?).retag(self.grid));
        }
        Ok(out.try_into().expect("three channels"))
    }
}

/// Seeded initialization: every θ drawn i.i.d. uniform on [0, 2π), in
/// channel, layer, row-major order.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<DonnModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = (config.side_px, config.side_px);
    let mut draw = || {
        (0..config.layers)
            .map(|_| Array2::from_shape_simple_fn(shape, || rng.gen_range(0.0..TAU)))
            .collect::<Vec<_>>()
    };
    let r = draw();
    let g = draw();
    let b = draw();
    DonnModel::from_thetas(config.clone(), [r, g, b])
}

/// Detector image `I_det = I_R + I_G + I_B`, each channel observed one
/// inter-layer distance behind its final mask.
pub fn forward_rgb(
    r: &ComplexField2D,
    g: &ComplexField2D,
    b: &ComplexField2D,
    model: &DonnModel,
) -> Result<IntensityMap> {
    let parts = model.channel_intensities([r, g, b])?;
    add_intensities(&parts)
}
