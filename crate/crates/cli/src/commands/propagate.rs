use std::path::PathBuf;

use donn_core::data::load_rgb;
use donn_core::field::{field_from_amplitude, intensity, GridSpec};
use donn_core::propagation::{make_fresnel_kernel, propagate, propagate_padded};
use serde::Serialize;

use super::{create_dir, write_file};
use crate::args::PropagateArgs;
use crate::exit::{CliResult, Phase};
use crate::viz;

pub const ENERGY_FILE: &str = "energy.json";

#[derive(Debug, Clone, Serialize)]
pub struct StepEnergy {
    pub step: usize,
    /// Energy entering the step (on the unpadded grid).
    pub input: f64,
    /// Energy on the padded grid before cropping.
    pub padded: f64,
    /// Energy kept after cropping back to the grid.
    pub cropped: f64,
}

/// Writes `step_000.png` (the input intensity) and one PNG per step.
pub fn run_propagate(args: &PropagateArgs) -> CliResult<Vec<StepEnergy>> {
    let side = match args.side {
        Some(s) => s,
        None => {
            let (w, h) = image::image_dimensions(&args.image).map_err(|source| {
                donn_core::DonnError::Image {
                    path: args.image.clone(),
                    source,
                }
            })?;
            w.min(h) as usize
        }
    };
    let grid = GridSpec::new(side, args.pitch, args.wavelength).config()?;
    let kernel = make_fresnel_kernel(grid, args.z, args.pad_factor).config()?;
    let [r, g, b] = load_rgb(&args.image, side)?;
    // Rec. 709 luma
    let lum = r * 0.2126 + g * 0.7152 + b * 0.0722;
    let lum = lum.mapv(|v| v.clamp(0.0, 1.0));
    let mut field = field_from_amplitude(&lum, grid)?;

    create_dir(&args.out)?;
    let frame = |k: usize| -> PathBuf { args.out.join(format!("step_{k:03}.png")) };
    viz::save_png(&viz::minmax_gray(intensity(&field).values()).0, &frame(0))?;
    let mut energies = Vec::with_capacity(args.steps);
    for step in 1..=args.steps {
        let input = field.energy();
        let padded: f64 = propagate_padded(&field, &kernel)?
            .iter()
            .map(|v| v.norm_sqr())
            .sum();
        field = propagate(&field, &kernel)?;
        let cropped = field.energy();
        viz::save_png(
            &viz::minmax_gray(intensity(&field).values()).0,
            &frame(step),
        )?;
        println!(
            "step {step}: z = {:.6} m, energy in {input:.9e}, padded {padded:.9e}, cropped {cropped:.9e}",
            step as f64 * args.z
        );
        energies.push(StepEnergy {
            step,
            input,
            padded,
            cropped,
        });
    }
    write_file(
        &args.out.join(ENERGY_FILE),
        serde_json::to_string_pretty(&energies).expect("energies serialize"),
    )?;
    Ok(energies)
}
