use std::path::PathBuf;

use donn_core::checkpoint::load_checkpoint;
use donn_core::data::load_manifest;
use donn_core::metrics::{SampleMetrics, Threshold};
use donn_core::train::{evaluate, mean_metrics, EvalRow};
use serde::{Deserialize, Serialize};

use super::{open_source, with_workers, write_file};
use crate::args::EvalArgs;
use crate::config::{LossName, RunConfig};
use crate::exit::{CliResult, Failure, Phase, CHECKPOINT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub epoch: u64,
    pub samples: usize,
    pub loss: String,
    pub aggregate: SampleMetrics,
    pub rows: Vec<EvalRow>,
}

pub fn run_eval(args: &EvalArgs) -> CliResult<EvalReport> {
    let (header, model) = load_checkpoint(&args.checkpoint).checkpoint()?;
    let manifest = load_manifest(&args.data).dataset()?;
    let side = model.grid().side_px;
    if manifest.side_px != side {
        return Err(Failure::msg(
            CHECKPOINT,
            format!(
                "checkpoint grid is {side}x{side} but dataset {} declares side {}",
                args.data.display(),
                manifest.side_px
            ),
        ));
    }
    let loss = {
        let mut c = RunConfig::default();
        c.loss.kind = Some(args.loss);
        if args.loss == LossName::WeightedBce {
            c.loss.pos_weight = Some(args.pos_weight);
        }
        c.loss_kind()
    };
    let threshold = if args.otsu {
        Threshold::Otsu
    } else {
        Threshold::default()
    };
    let rows = with_workers(args.workers.unwrap_or(0), || {
        let set = open_source(manifest, side)?;
        evaluate(&model, set.as_ref(), loss, threshold).dataset()
    })?;
    let report = EvalReport {
        checkpoint: args.checkpoint.clone(),
        dataset: args.data.clone(),
        epoch: header.epoch,
        samples: rows.len(),
        loss: loss.name().to_string(),
        aggregate: mean_metrics(&rows).expect("evaluate rejects empty sets"),
        rows,
    };
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    match &args.out {
        Some(path) => write_file(path, text + "\n")?,
        None => println!("{text}"),
    }
    let a = &report.aggregate;
    eprintln!(
        "{} samples: IoU {:.4}  precision {:.4}  recall {:.4}  F1 {:.4}",
        report.samples, a.iou, a.precision, a.recall, a.f1
    );
    Ok(report)
}
