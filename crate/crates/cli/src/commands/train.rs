use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use donn_core::checkpoint::save_checkpoint;
use donn_core::data::{load_label, load_manifest, SampleSource};
use donn_core::loss::balancing_pos_weight;
use donn_core::metrics::SampleMetrics;
use donn_core::model::init_model;
use donn_core::optim::OptimState;
use donn_core::train::{evaluate, evaluate_sample, mean_metrics, train_epoch, EvalRow};
use donn_core::DonnError;
use serde::{Deserialize, Serialize};

use super::{
    apply_model_overrides, create_dir, load_config, open_source, with_workers, write_file,
};
use crate::args::TrainArgs;
use crate::config::RunConfig;
use crate::exit::{CliResult, Failure, Phase, CONFIG, IO};
use crate::viz;

pub const RESOLVED_CONFIG_FILE: &str = "config.toml";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const TIMING_LOG_FILE: &str = "timing.jsonl";
pub const FINAL_METRICS_FILE: &str = "metrics.json";

/// One line of the training log. Wall-clock time lives in a separate file
/// so that this log is reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub epoch: u64,
    pub mean_loss: f64,
    pub train_iou: f64,
    pub eval_iou: Option<f64>,
}

#[derive(Debug, Serialize)]
struct FinalMetrics<'a> {
    split: &'a str,
    epochs: u64,
    best_epoch: u64,
    best_iou: f64,
    aggregate: SampleMetrics,
    rows: &'a [EvalRow],
}

fn merge_flags(args: &TrainArgs) -> CliResult<RunConfig> {
    let mut cfg = load_config(args.config.as_deref())?;
    apply_model_overrides(&mut cfg, &args.model)?;
    let t = &mut cfg.train;
    t.epochs = args.epochs.or(t.epochs);
    t.batch_size = args.batch_size.or(t.batch_size);
    t.checkpoint_every = args.checkpoint_every.or(t.checkpoint_every);
    t.workers = args.workers.or(t.workers);
    if args.otsu {
        t.threshold = Some(crate::config::ThresholdName::Otsu);
    }
    cfg.optim.learning_rate = args.lr.or(cfg.optim.learning_rate);
    cfg.data.train = args.train_data.clone().or(cfg.data.train);
    cfg.data.eval = args.eval_data.clone().or(cfg.data.eval);
    cfg.output.dir = args.out.clone().or(cfg.output.dir);
    Ok(cfg)
}

fn append_line(path: &Path, line: &str) -> CliResult {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Failure::new(IO, DonnError::io(path, e)))?;
    writeln!(f, "{line}").map_err(|e| Failure::new(IO, DonnError::io(path, e)))
}

pub fn run_train(args: &TrainArgs) -> CliResult<PathBuf> {
    let cfg = merge_flags(args)?;
    let train_path =
        cfg.data.train.clone().ok_or_else(|| {
            Failure::msg(CONFIG, "no training data: set data.train or --train-data")
        })?;
    let train_manifest = load_manifest(&train_path).dataset()?;
    let eval_manifest = match &cfg.data.eval {
        Some(p) => Some(load_manifest(p).dataset()?),
        None => None,
    };

    let cfg = cfg
        .resolve(|side| {
            let masks = (0..train_manifest.len())
                .map(|i| load_label(&train_manifest.label_path(i), side))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| DonnError::Validation(e.to_string()))?;
            balancing_pos_weight(&masks).map_err(|e| DonnError::Validation(e.to_string()))
        })
        .map_err(|e| match e {
            DonnError::Validation(_) => Failure::new(crate::exit::DATASET, e),
            e => Failure::new(CONFIG, e),
        })?;
    let model_cfg = cfg.model_config().config()?;
    let out = cfg.output.dir.clone().expect("resolved");
    create_dir(&out)?;
    create_dir(&out.join("checkpoints"))?;
    write_file(&out.join(RESOLVED_CONFIG_FILE), cfg.to_toml())?;
    for name in [TRAIN_LOG_FILE, TIMING_LOG_FILE] {
        write_file(&out.join(name), "")?;
    }

    let workers = cfg.train.workers.unwrap_or(0);
    with_workers(workers, || {
        let side = model_cfg.side_px;
        let train_set = open_source(train_manifest, side)?;
        let eval_set = match eval_manifest {
            Some(m) => Some(open_source(m, side)?),
            None => None,
        };
        let seed = cfg.train.seed.unwrap_or(0);
        let epochs = cfg.train.epochs.unwrap_or(1);
        let every = cfg.train.checkpoint_every.unwrap_or(10);
        let opts = cfg.train_options();
        let mut model = init_model(&model_cfg, seed).config()?;
        let mut state = OptimState::new(&model, cfg.adam());
        let (mut best_iou, mut best_epoch) = (f64::NEG_INFINITY, 0);
        let started = Instant::now();
        let ckpt_dir = out.join("checkpoints");

        for epoch in 1..=epochs {
            let stats = train_epoch(&mut model, train_set.as_ref(), epoch - 1, &opts, &mut state)
                .map_err(|e| match e {
                DonnError::Validation(_) | DonnError::Image { .. } | DonnError::Io { .. } => {
                    Failure::new(crate::exit::DATASET, e)
                }
                e => Failure::from(e),
            })?;
            let eval_iou = match &eval_set {
                Some(set) => {
                    let rows =
                        evaluate(&model, set.as_ref(), opts.loss, opts.threshold).dataset()?;
                    mean_metrics(&rows).map(|m| m.iou)
                }
                None => None,
            };
            let line = LogLine {
                epoch,
                mean_loss: stats.mean_loss,
                train_iou: stats.train_iou,
                eval_iou,
            };
            append_line(
                &out.join(TRAIN_LOG_FILE),
                &serde_json::to_string(&line).expect("log line serializes"),
            )?;
            let wall = started.elapsed().as_secs_f64();
            append_line(
                &out.join(TIMING_LOG_FILE),
                &format!("{{\"epoch\":{epoch},\"wall_s\":{wall:.3}}}"),
            )?;
            log::info!(
                "epoch {epoch}/{epochs}: loss {:.5} train IoU {:.4}{} ({wall:.1} s)",
                stats.mean_loss,
                stats.train_iou,
                eval_iou
                    .map(|v| format!(" eval IoU {v:.4}"))
                    .unwrap_or_default()
            );

            let score = eval_iou.unwrap_or(stats.train_iou);
            if score > best_iou {
                best_iou = score;
                best_epoch = epoch;
                save_checkpoint(&ckpt_dir.join("best.ckpt"), &model, seed, epoch)?;
            }
            if epoch % every == 0 {
                save_checkpoint(
                    &ckpt_dir.join(format!("epoch-{epoch:05}.ckpt")),
                    &model,
                    seed,
                    epoch,
                )?;
            }
        }
        save_checkpoint(&ckpt_dir.join("final.ckpt"), &model, seed, epochs)?;

        let (split, set) = match &eval_set {
            Some(s) => ("eval", s.as_ref()),
            None => ("train", train_set.as_ref()),
        };
        let rows = evaluate(&model, set, opts.loss, opts.threshold).dataset()?;
        let report = FinalMetrics {
            split,
            epochs,
            best_epoch,
            best_iou,
            aggregate: mean_metrics(&rows).expect("non-empty"),
            rows: &rows,
        };
        write_file(
            &out.join(FINAL_METRICS_FILE),
            serde_json::to_string_pretty(&report).expect("metrics serialize"),
        )?;
        log::info!(
            "final {split} IoU {:.4} (best {best_iou:.4} at epoch {best_epoch})",
            report.aggregate.iou
        );
        write_figures(
            &out.join("viz"),
            &model,
            set,
            &opts,
            cfg.train.visualize.unwrap_or(0),
        )?;
        Ok(())
    })?;
    Ok(out)
}

fn write_figures(
    dir: &Path,
    model: &donn_core::model::DonnModel,
    set: &dyn SampleSource,
    opts: &donn_core::train::TrainOptions,
    count: usize,
) -> CliResult {
    let count = count.min(set.len());
    if count == 0 {
        return Ok(());
    }
    create_dir(dir)?;
    let mut captions = String::from(
        "Panels left to right: RGB input, ground truth, raw detector intensity, binarized output.\n\
         The raw panel is min-max mapped per image; its range is listed per file.\n",
    );
    for i in 0..count {
        let s = set.sample(i).dataset()?;
        let (det, pred, _, _) = evaluate_sample(model, &s, opts.loss, opts.threshold)?;
        let name = format!("sample-{i:03}.png");
        let (img, caption) = viz::figure(&name, &s, &det, &pred);
        viz::save_png(&img, &dir.join(&name))?;
        let _ = writeln!(captions, "{caption}");
    }
    write_file(&dir.join("captions.txt"), captions)
}
