//! PNG rendering of inputs, masks and detector images.

use std::fmt::Write as _;
use std::path::Path;

use donn_core::data::Sample;
use donn_core::field::{BinaryMask, IntensityMap};
use donn_core::DonnError;
use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use ndarray::Array2;

/// Pixel gap between panels of a side-by-side figure.
const GUTTER: u32 = 2;

/// Min-max maps `values` onto 0..=255. A constant map renders black.
/// Returns the image with the (min, max) used.
pub fn minmax_gray(values: &Array2<f64>) -> (GrayImage, f64, f64) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
    let span = hi - lo;
    let (rows, cols) = values.dim();
    let img = GrayImage::from_fn(cols as u32, rows as u32, |x, y| {
        let v = values[[y as usize, x as usize]];
        let q = if span > 0.0 { (v - lo) / span } else { 0.0 };
        Luma([(q * 255.0).round() as u8])
    });
    (img, lo, hi)
}

pub fn mask_gray(mask: &BinaryMask) -> GrayImage {
    let (rows, cols) = mask.dim();
    GrayImage::from_fn(cols as u32, rows as u32, |x, y| {
        Luma([mask.values()[[y as usize, x as usize]] * 255])
    })
}

pub fn sample_rgb(s: &Sample) -> RgbImage {
    let n = s.side() as u32;
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    RgbImage::from_fn(n, n, |x, y| {
        let at = [y as usize, x as usize];
        Rgb([q(s.r[at]), q(s.g[at]), q(s.b[at])])
    })
}

fn gray_to_rgb(g: &GrayImage) -> RgbImage {
    RgbImage::from_fn(g.width(), g.height(), |x, y| {
        let v = g.get_pixel(x, y)[0];
        Rgb([v, v, v])
    })
}

/// Input | ground truth | raw detector | binarized output, left to right.
/// Returns the figure and a caption line for the sidecar file.
pub fn figure(
    name: &str,
    s: &Sample,
    detector: &IntensityMap,
    binary: &BinaryMask,
) -> (RgbImage, String) {
    let (raw, lo, hi) = minmax_gray(detector.values());
    let panels = [
        sample_rgb(s),
        gray_to_rgb(&mask_gray(&s.gt)),
        gray_to_rgb(&raw),
        gray_to_rgb(&mask_gray(binary)),
    ];
    let n = s.side() as u32;
    let width = 4 * n + 3 * GUTTER;
    let mut out = RgbImage::from_pixel(width, n, Rgb([255, 255, 255]));
    for (k, p) in panels.iter().enumerate() {
        image::imageops::replace(&mut out, p, i64::from(k as u32 * (n + GUTTER)), 0);
    }
    let mut caption = String::new();
    let _ = write!(
        caption,
        "{name}: input | ground truth | raw detector intensity (min-max: {lo:.6e} -> 0, {hi:.6e} -> 255) | binarized output"
    );
    (out, caption)
}

pub fn save_png<P>(img: &ImageBuffer<P, Vec<P::Subpixel>>, path: &Path) -> Result<(), DonnError>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
{
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| DonnError::Image {
            path: path.to_path_buf(),
            source,
        })
}
