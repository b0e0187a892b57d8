use donn_core::data::{synthesize, SyntheticKind};
use donn_core::grad::{backward, gradcheck, sample_coords, GradCheckReport};
use donn_core::loss::balancing_pos_weight;
use donn_core::model::{init_model, Preset};

use super::{apply_model_overrides, load_config};
use crate::args::GradcheckArgs;
use crate::exit::{CliResult, Failure, Phase, FAILURE};

/// Grid side used when neither the config nor the flags choose one.
pub const DEFAULT_GRADCHECK_SIDE: usize = 32;

/// Checks `backward` on a freshly initialized model and one synthetic
/// sample. Fails (exit 1) when the worst relative error reaches the
/// tolerance.
pub fn run_gradcheck(args: &GradcheckArgs) -> CliResult<GradCheckReport> {
    let mut cfg = load_config(args.config.as_deref())?;
    apply_model_overrides(&mut cfg, &args.model)?;
    if cfg.model.preset.is_none() {
        cfg.model.preset = Some(Preset::Lane8);
    }
    if cfg.model.side_px.is_none() {
        cfg.model.side_px = Some(DEFAULT_GRADCHECK_SIDE);
    }
    let seed = cfg.train.seed.unwrap_or(0);
    let sample_at = |side: usize| synthesize(SyntheticKind::Lanes, side, seed, 0);
    let cfg = cfg
        .resolve(|side| balancing_pos_weight([&sample_at(side).gt]))
        .config()?;
    let model = init_model(&cfg.model_config().config()?, seed).config()?;
    let sample = sample_at(model.grid().side_px);
    let fields = model.encode(&sample.r, &sample.g, &sample.b)?;
    let coords = sample_coords(&model, args.coords, seed ^ 0x5EED);
    let scale = args.corrupt_adjoint.unwrap_or(1.0);
    let report = gradcheck(
        &model,
        &fields,
        &sample.gt,
        cfg.loss_kind(),
        &coords,
        args.tolerance,
        |m, f, g, l| {
            let (v, mut grads) = backward(m, f, g, l)?;
            grads.scale(scale);
            Ok((v, grads))
        },
    )?;

    println!(
        "gradcheck: {} layers, {}x{} grid, loss {}, {} coordinates",
        model.layer_count(),
        model.grid().side_px,
        model.grid().side_px,
        cfg.loss_kind().name(),
        report.checks.len()
    );
    println!("channel layer   row   col        analytic         numeric   rel_error");
    for c in &report.checks {
        println!(
            "{:>7} {:>5} {:>5} {:>5} {:>15.8e} {:>15.8e} {:>11.3e}",
            donn_core::model::CHANNEL_NAMES[c.coord.channel],
            c.coord.layer + 1,
            c.coord.row,
            c.coord.col,
            c.analytic,
            c.numeric,
            c.rel_error
        );
    }
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    println!(
        "worst relative error {:.3e} (tolerance {:.1e}): {verdict}",
        report.worst(),
        report.tolerance
    );
    if report.passed() {
        Ok(report)
    } else {
        Err(Failure::msg(
            FAILURE,
            format!(
                "gradient check failed: worst relative error {:.3e}",
                report.worst()
            ),
        ))
    }
}
