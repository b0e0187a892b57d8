use std::path::{Path, PathBuf};

use donn_core::checkpoint::load_checkpoint;
use donn_core::data::{load_rgb, Sample};
use donn_core::field::BinaryMask;
use donn_core::metrics::{binarize_output, Threshold};
use donn_core::model::DonnModel;
use donn_core::train::predict;
use donn_core::DonnError;

use super::create_dir;
use crate::args::InferArgs;
use crate::exit::{CliResult, Failure, Phase, IO};
use crate::viz;

fn infer_one(
    model: &DonnModel,
    image: &Path,
    out: &Path,
    threshold: Threshold,
) -> Result<[PathBuf; 2], DonnError> {
    let side = model.grid().side_px;
    let [r, g, b] = load_rgb(image, side)?;
    let sample = Sample::new(r, g, b, BinaryMask::zeros((side, side)))?;
    let det = predict(model, &sample)?;
    let stem = image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let raw_path = out.join(format!("{stem}_raw.png"));
    let bin_path = out.join(format!("{stem}_bin.png"));
    viz::save_png(&viz::minmax_gray(det.values()).0, &raw_path)?;
    viz::save_png(
        &viz::mask_gray(&binarize_output(&det, threshold)),
        &bin_path,
    )?;
    Ok([raw_path, bin_path])
}

/// Writes `<stem>_raw.png` and `<stem>_bin.png` per image. A failing image is
/// reported and skipped; the command fails at the end if any image did.
pub fn run_infer(args: &InferArgs) -> CliResult<Vec<PathBuf>> {
    let (_, model) = load_checkpoint(&args.checkpoint).checkpoint()?;
    create_dir(&args.out)?;
    let threshold = if args.otsu {
        Threshold::Otsu
    } else {
        Threshold::default()
    };
    let mut written = Vec::new();
    let mut failed = 0usize;
    for image in &args.images {
        match infer_one(&model, image, &args.out, threshold) {
            Ok(paths) => {
                for p in &paths {
                    println!("{}", p.display());
                }
                written.extend(paths);
            }
            Err(e) => {
                eprintln!("error: {}: {e}", image.display());
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(Failure::msg(
            IO,
            format!("{failed} of {} images failed", args.images.len()),
        ));
    }
    Ok(written)
}
