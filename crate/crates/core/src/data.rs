//! Image/label datasets.
//!
//! A dataset directory looks like
//!
//! ```text
//! root/
//!   inputs/00000.png   RGB, 8 or 16 bit
//!   labels/00000.png   grayscale, foreground >= 50 %
//!   manifest.json
//! ```
//!
//! Inputs are center-cropped to a square and bilinearly resampled to the
//! model side; labels are thresholded at 0.5 and then nearest-resampled so
//! they stay binary.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DonnError, Result};
use crate::field::BinaryMask;

pub const MANIFEST_FILE: &str = "manifest.json";

/// One RGB input split into channels in [0, 1], with its binary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub r: Array2<f64>,
    pub g: Array2<f64>,
    pub b: Array2<f64>,
    pub gt: BinaryMask,
}

impl Sample {
    pub fn new(r: Array2<f64>, g: Array2<f64>, b: Array2<f64>, gt: BinaryMask) -> Result<Self> {
        let dim = gt.dim();
        if dim.0 != dim.1 {
            return Err(DonnError::Dimension(format!(
                "sample must be square, got {dim:?}"
            )));
        }
        for (name, ch) in [("r", &r), ("g", &g), ("b", &b)] {
            if ch.dim() != dim {
                return Err(DonnError::Dimension(format!(
                    "channel {name} has shape {:?}, mask has {dim:?}",
                    ch.dim()
                )));
            }
            if ch.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(DonnError::Domain(format!("channel {name} outside [0, 1]")));
            }
        }
        Ok(Sample { r, g, b, gt })
    }

    pub fn side(&self) -> usize {
        self.gt.dim().0
    }
}

type Rgb32F = ImageBuffer<Rgb<f32>, Vec<f32>>;
type Luma32F = ImageBuffer<Luma<f32>, Vec<f32>>;

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|source| DonnError::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn center_square<I: image::GenericImageView>(img: &I) -> (u32, u32, u32) {
    let (w, h) = img.dimensions();
    let s = w.min(h);
    ((w - s) / 2, (h - s) / 2, s)
}

/// Loads one input image as three [0, 1] channels at `side × side`.
pub fn load_rgb(path: &Path, side: usize) -> Result<[Array2<f64>; 3]> {
    let img: Rgb32F = open_image(path)?.to_rgb32f();
    let (x, y, s) = center_square(&img);
    let mut square = imageops::crop_imm(&img, x, y, s, s).to_image();
    if s as usize != side {
        square = imageops::resize(&square, side as u32, side as u32, FilterType::Triangle);
    }
    Ok(std::array::from_fn(|c| {
        Array2::from_shape_fn((side, side), |(i, j)| {
            f64::from(square.get_pixel(j as u32, i as u32)[c]).clamp(0.0, 1.0)
        })
    }))
}

/// Loads a label image as a binary mask at `side × side`.
pub fn load_label(path: &Path, side: usize) -> Result<BinaryMask> {
    let img: Luma32F = open_image(path)?.to_luma32f();
    let (x, y, s) = center_square(&img);
    let square = imageops::crop_imm(&img, x, y, s, s).to_image();
    let mut bin: GrayImage = ImageBuffer::from_fn(s, s, |i, j| {
        Luma([if square.get_pixel(i, j)[0] >= 0.5 {
            255u8
        } else {
            0
        }])
    });
    if s as usize != side {
        bin = imageops::resize(&bin, side as u32, side as u32, FilterType::Nearest);
    }
    Ok(BinaryMask::from_bools(&Array2::from_shape_fn(
        (side, side),
        |(i, j)| bin.get_pixel(j as u32, i as u32)[0] >= 128,
    )))
}

pub fn load_sample(input: &Path, label: &Path, side: usize) -> Result<Sample> {
    let [r, g, b] = load_rgb(input, side)?;
    let gt = load_label(label, side)?;
    Sample::new(r, g, b, gt)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestPair {
    pub input: PathBuf,
    pub label: PathBuf,
}

/// List of (input, label) files relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(skip)]
    pub root: PathBuf,
    pub side_px: usize,
    pub split: String,
    pub pairs: Vec<ManifestPair>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn input_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.pairs[i].input)
    }

    pub fn label_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.pairs[i].label)
    }

    pub fn load(&self, i: usize, side: usize) -> Result<Sample> {
        load_sample(&self.input_path(i), &self.label_path(i), side)
    }

    /// Checks that the manifest is non-empty and every listed file exists.
    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(DonnError::Validation(format!(
                "manifest in {} lists no samples",
                self.root.display()
            )));
        }
        if self.side_px == 0 {
            return Err(DonnError::Validation(
                "manifest side_px must be positive".into(),
            ));
        }
        for i in 0..self.pairs.len() {
            for p in [self.input_path(i), self.label_path(i)] {
                if !p.is_file() {
                    return Err(DonnError::Validation(format!(
                        "missing dataset file {}",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text =
            serde_json::to_string_pretty(self).map_err(|e| DonnError::Format(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| DonnError::io(path, e))
    }

    /// Streams samples in file order, or shuffled by `seed`.
    pub fn iter(
        &self,
        side: usize,
        seed: Option<u64>,
    ) -> impl Iterator<Item = Result<Sample>> + '_ {
        let order = match seed {
            Some(s) => shuffled_order(self.len(), s),
            None => (0..self.len()).collect(),
        };
        order.into_iter().map(move |i| self.load(i, side))
    }
}

/// Reads and validates a manifest. `path` may be the file or its directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file).map_err(|e| DonnError::io(&file, e))?;
    let mut manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| DonnError::Validation(format!("{}: {e}", file.display())))?;
    manifest.root = file
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    manifest.validate()?;
    Ok(manifest)
}

/// Permutation of `0..n` determined by `seed`.
pub fn shuffled_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Random access to samples, shared read-only across workers.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;

    fn sample(&self, index: usize) -> Result<Sample>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSource for [Sample] {
    fn len(&self) -> usize {
        <[Sample]>::len(self)
    }

    fn sample(&self, index: usize) -> Result<Sample> {
        Ok(self[index].clone())
    }
}

impl SampleSource for Vec<Sample> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn sample(&self, index: usize) -> Result<Sample> {
        Ok(self[index].clone())
    }
}

/// Decodes from disk on every access.
#[derive(Debug, Clone)]
pub struct ManifestSource {
    pub manifest: DatasetManifest,
    pub side: usize,
}

impl SampleSource for ManifestSource {
    fn len(&self) -> usize {
        self.manifest.len()
    }

    fn sample(&self, index: usize) -> Result<Sample> {
        self.manifest.load(index, self.side)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    Bars,
    Lanes,
}

impl std::str::FromStr for SyntheticKind {
    type Err = DonnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bars" => Ok(SyntheticKind::Bars),
            "lanes" => Ok(SyntheticKind::Lanes),
            other => Err(DonnError::Usage(format!(
                "unknown synthetic kind '{other}' (expected bars or lanes)"
            ))),
        }
    }
}

/// A generated dataset: the manifest on disk plus the exact arrays that
/// were quantized into the PNG files.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<Sample>,
}

pub const SYNTHETIC_MIN_SIDE: usize = 32;

/// Generates one synthetic sample in memory.
pub fn synthesize(kind: SyntheticKind, side: usize, seed: u64, index: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    match kind {
        SyntheticKind::Bars => bars(&mut rng, side),
        SyntheticKind::Lanes => lanes(&mut rng, side),
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = (h * 6.0) % 6.0;
    let x = c * (1.0 - ((hp % 2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn bars(rng: &mut ChaCha8Rng, side: usize) -> Sample {
    let mut ch: [Array2<f64>; 3] =
        std::array::from_fn(|_| Array2::from_shape_simple_fn((side, side), || 0.0));
    for c in ch.iter_mut() {
        c.mapv_inplace(|_| rng.gen_range(0.0..0.2));
    }
    let mut gt = Array2::from_elem((side, side), false);
    let count = rng.gen_range(1..=3);
    let (lo, hi) = (side / 8, side / 3);
    for _ in 0..count {
        let h = rng.gen_range(lo..=hi);
        let w = rng.gen_range(lo..=hi);
        let top = rng.gen_range(0..=side - h);
        let left = rng.gen_range(0..=side - w);
        let color = hsv_to_rgb(
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.6..1.0),
            rng.gen_range(0.8..1.0),
        );
        for i in top..top + h {
            for j in left..left + w {
                for (c, v) in ch.iter_mut().zip(color) {
                    c[[i, j]] = v;
                }
                gt[[i, j]] = true;
            }
        }
    }
    let [r, g, b] = ch;
    Sample {
        r,
        g,
        b,
        gt: BinaryMask::from_bools(&gt),
    }
}

fn lanes(rng: &mut ChaCha8Rng, side: usize) -> Sample {
    let s = side as f64;
    let road = rng.gen_range(0.30..0.45);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.03..0.03));
    // low-frequency shading plus per-pixel grain
    let (fx, fy, phase) = (
        rng.gen_range(0.5..2.0),
        rng.gen_range(0.5..2.0),
        rng.gen_range(0.0..6.3),
    );
    let mut ch: [Array2<f64>; 3] = std::array::from_fn(|_| Array2::zeros((side, side)));
    for i in 0..side {
        for j in 0..side {
            let shade = 0.05
                * ((fx * j as f64 / s + fy * i as f64 / s) * std::f64::consts::TAU + phase).sin();
            let grain = rng.gen_range(-0.06..0.06);
            for (c, t) in ch.iter_mut().zip(tint) {
                c[[i, j]] = (road + t + shade + grain).clamp(0.0, 1.0);
            }
        }
    }

    let vx = rng.gen_range(0.35 * s..0.65 * s);
    let vy = rng.gen_range(0.15 * s..0.35 * s);
    let bottoms = [
        rng.gen_range(0.05 * s..0.35 * s),
        rng.gen_range(0.65 * s..0.95 * s),
    ];
    let half_width = rng.gen_range(0.025 * s..0.045 * s);
    let yellow = rng.gen_bool(0.3);
    let paint = if yellow {
        [
            rng.gen_range(0.85..1.0),
            rng.gen_range(0.75..0.9),
            rng.gen_range(0.1..0.3),
        ]
    } else {
        let v = rng.gen_range(0.85..1.0);
        [v, v, v]
    };
    let top = vy + 0.15 * (s - vy);
    let mut gt = Array2::from_elem((side, side), false);
    for i in 0..side {
        let y = i as f64 + 0.5;
        if y < top {
            continue;
        }
        let t = (y - vy) / (s - vy);
        let w = half_width * t;
        for xb in bottoms {
            let xc = vx + (xb - vx) * t;
            for j in 0..side {
                if ((j as f64 + 0.5) - xc).abs() <= w {
                    gt[[i, j]] = true;
                }
            }
        }
    }
    for ((i, j), &on) in gt.indexed_iter() {
        if on {
            for (c, p) in ch.iter_mut().zip(paint) {
                c[[i, j]] = p;
            }
        }
    }
    let [r, g, b] = ch;
    Sample {
        r,
        g,
        b,
        gt: BinaryMask::from_bools(&gt),
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_png<P, C>(img: &ImageBuffer<P, C>, path: &Path) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| DonnError::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Writes `count` synthetic samples plus a manifest under `root`.
///
/// Refuses to overwrite an existing manifest unless `overwrite` is set.
pub fn gen_synthetic(
    kind: SyntheticKind,
    count: usize,
    side: usize,
    seed: u64,
    root: &Path,
    split: &str,
    overwrite: bool,
) -> Result<SyntheticDataset> {
    if count == 0 {
        return Err(DonnError::Usage(
            "synthetic dataset count must be at least 1".into(),
        ));
    }
    if side < SYNTHETIC_MIN_SIDE {
        return Err(DonnError::Usage(format!(
            "synthetic side must be at least {SYNTHETIC_MIN_SIDE}, got {side}"
        )));
    }
    let manifest_path = root.join(MANIFEST_FILE);
    if manifest_path.exists() && !overwrite {
        return Err(DonnError::Usage(format!(
            "{} already exists; pass --force to overwrite",
            manifest_path.display()
        )));
    }
    for dir in ["inputs", "labels"] {
        let d = root.join(dir);
        fs::create_dir_all(&d).map_err(|e| DonnError::io(&d, e))?;
    }
    let mut pairs = Vec::with_capacity(count);
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let sample = synthesize(kind, side, seed, i as u64);
        let name = format!("{i:05}.png");
        let input = PathBuf::from("inputs").join(&name);
        let label = PathBuf::from("labels").join(&name);
        let rgb = RgbImage::from_fn(side as u32, side as u32, |x, y| {
            let (i, j) = (y as usize, x as usize);
            Rgb([
                quantize(sample.r[[i, j]]),
                quantize(sample.g[[i, j]]),
                quantize(sample.b[[i, j]]),
            ])
        });
        write_png(&rgb, &root.join(&input))?;
        let lbl = GrayImage::from_fn(side as u32, side as u32, |x, y| {
            Luma([sample.gt.values()[[y as usize, x as usize]] * 255])
        });
        write_png(&lbl, &root.join(&label))?;
        pairs.push(ManifestPair { input, label });
        samples.push(sample);
    }
    let manifest = DatasetManifest {
        root: root.to_path_buf(),
        side_px: side,
        split: split.to_string(),
        pairs,
    };
    manifest.write(&manifest_path)?;
    Ok(SyntheticDataset { manifest, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic_and_valid() {
        for kind in [SyntheticKind::Bars, SyntheticKind::Lanes] {
            let a = synthesize(kind, 48, 3, 7);
            let b = synthesize(kind, 48, 3, 7);
            assert_eq!(a, b);
            assert_ne!(a, synthesize(kind, 48, 3, 8));
            Sample::new(a.r.clone(), a.g.clone(), a.b.clone(), a.gt.clone()).unwrap();
            assert!(a.gt.count_ones() > 0);
        }
    }

    #[test]
    fn lane_foreground_fraction_bounds() {
        // measured over seeds 0..100 at side 64
        let (mut lo, mut hi) = (1.0f64, 0.0f64);
        for seed in 0..100 {
            let s = synthesize(SyntheticKind::Lanes, 64, seed, 0);
            let frac = s.gt.count_ones() as f64 / s.gt.len() as f64;
            lo = lo.min(frac);
            hi = hi.max(frac);
        }
        assert!(lo > 0.01 && hi < 0.25, "fraction range [{lo}, {hi}]");
    }

    #[test]
    fn generator_argument_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            gen_synthetic(SyntheticKind::Bars, 0, 64, 1, dir.path(), "train", false),
            Err(DonnError::Usage(_))
        ));
        assert!(matches!(
            gen_synthetic(SyntheticKind::Bars, 1, 16, 1, dir.path(), "train", false),
            Err(DonnError::Usage(_))
        ));
        assert!("circles".parse::<SyntheticKind>().is_err());
    }

    #[test]
    fn shuffle_is_seeded_permutation() {
        let a = shuffled_order(50, 9);
        assert_eq!(a, shuffled_order(50, 9));
        assert_ne!(a, shuffled_order(50, 10));
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn hsv_primaries() {
        assert_eq!(hsv_to_rgb(0.0, 1.0, 1.0), [1.0, 0.0, 0.0]);
        let g = hsv_to_rgb(1.0 / 3.0, 1.0, 1.0);
        assert!((g[1] - 1.0).abs() < 1e-12 && g[0].abs() < 1e-12);
    }
}
