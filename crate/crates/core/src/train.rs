//! Mini-batch training and evaluation loops.
//!
//! Per-sample forward/backward passes run on the current rayon pool. Their
//! results are collected in sample order and summed sequentially, so the
//! batch gradient is bit-identical for any worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{shuffled_order, Sample, SampleSource};
use crate::error::{DonnError, Result};
use crate::field::{BinaryMask, IntensityMap};
use crate::grad::{backward_full, GradientSet};
use crate::loss::LossKind;
use crate::metrics::{binarize_output, iou, SampleMetrics, Threshold};
use crate::model::{forward_rgb, DonnModel};
use crate::optim::{optim_step, OptimState};

pub const DEFAULT_BATCH_SIZE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub loss: LossKind,
    pub seed: u64,
    #[serde(default)]
    pub threshold: Threshold,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            batch_size: DEFAULT_BATCH_SIZE,
            loss: LossKind::Mse,
            seed: 0,
            threshold: Threshold::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: u64,
    pub mean_loss: f64,
    pub train_iou: f64,
    pub batches: usize,
}

/// Sample order of one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    // splitmix-style mixing keeps neighbouring (seed, epoch) pairs apart
    let mixed = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(epoch)
        .rotate_left(17)
        ^ 0xD1B5_4A32_D192_ED03;
    shuffled_order(n, mixed)
}

fn ensure_side(model: &DonnModel, s: &Sample) -> Result<()> {
    if s.side() != model.grid().side_px {
        return Err(DonnError::Dimension(format!(
            "sample side {} does not match model side {}",
            s.side(),
            model.grid().side_px
        )));
    }
    Ok(())
}

/// Detector image of one sample.
pub fn predict(model: &DonnModel, s: &Sample) -> Result<IntensityMap> {
    ensure_side(model, s)?;
    let [r, g, b] = model.encode(&s.r, &s.g, &s.b)?;
    forward_rgb(&r, &g, &b, model)
}

struct SampleGrad {
    loss: f64,
    iou: f64,
    grads: GradientSet,
}

fn sample_grad(
    model: &DonnModel,
    data: &dyn SampleSource,
    index: usize,
    opts: &TrainOptions,
) -> Result<SampleGrad> {
    let s = data.sample(index)?;
    ensure_side(model, &s)?;
    let fields = model.encode(&s.r, &s.g, &s.b)?;
    let out = backward_full(model, &fields, &s.gt, opts.loss)?;
    let pred = binarize_output(&out.detector, opts.threshold);
    Ok(SampleGrad {
        loss: out.loss,
        iou: iou(&pred, &s.gt)?,
        grads: out.grads,
    })
}

/// One pass over `data`: shuffle, then one optimizer step per batch on the
/// mean per-sample gradient.
pub fn train_epoch(
    model: &mut DonnModel,
    data: &dyn SampleSource,
    epoch: u64,
    opts: &TrainOptions,
    state: &mut OptimState,
) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(DonnError::Usage("training set is empty".into()));
    }
    if opts.batch_size == 0 {
        return Err(DonnError::Usage("batch size must be positive".into()));
    }
    let order = epoch_order(data.len(), opts.seed, epoch);
    // bounds peak memory to one gradient set per worker
    let wave = rayon::current_num_threads().max(1);
    let (mut loss_sum, mut iou_sum, mut batches) = (0.0, 0.0, 0);
    for batch in order.chunks(opts.batch_size) {
        let mut acc = GradientSet::zeros_like(model);
        for part in batch.chunks(wave) {
            let shared: &DonnModel = model;
            let results: Vec<Result<SampleGrad>> = part
                .par_iter()
                .map(|&i| sample_grad(shared, data, i, opts))
                .collect();
            for r in results {
                let r = r?;
                loss_sum += r.loss;
                iou_sum += r.iou;
                acc.add_assign(&r.grads)?;
            }
        }
        acc.scale(1.0 / batch.len() as f64);
        optim_step(model, &acc, state)?;
        batches += 1;
    }
    let n = data.len() as f64;
    Ok(EpochStats {
        epoch,
        mean_loss: loss_sum / n,
        train_iou: iou_sum / n,
        batches,
    })
}

/// Per-sample evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub index: usize,
    pub loss: f64,
    #[serde(flatten)]
    pub metrics: SampleMetrics,
}

/// Binarized prediction and metrics of one sample.
pub fn evaluate_sample(
    model: &DonnModel,
    s: &Sample,
    loss: LossKind,
    threshold: Threshold,
) -> Result<(IntensityMap, BinaryMask, f64, SampleMetrics)> {
    let det = predict(model, s)?;
    let value = crate::loss::loss_value(loss, &crate::loss::normalize(&det).p, &s.gt)?;
    let pred = binarize_output(&det, threshold);
    let m = SampleMetrics::from_masks(&pred, &s.gt)?;
    Ok((det, pred, value, m))
}

/// Metrics of every sample, in dataset order.
pub fn evaluate(
    model: &DonnModel,
    data: &dyn SampleSource,
    loss: LossKind,
    threshold: Threshold,
) -> Result<Vec<EvalRow>> {
    if data.is_empty() {
        return Err(DonnError::Usage("evaluation set is empty".into()));
    }
    (0..data.len())
        .into_par_iter()
        .map(|index| {
            let s = data.sample(index)?;
            let (_, _, loss, metrics) = evaluate_sample(model, &s, loss, threshold)?;
            Ok(EvalRow {
                index,
                loss,
                metrics,
            })
        })
        .collect()
}

/// Mean of the per-sample metrics.
pub fn mean_metrics(rows: &[EvalRow]) -> Option<SampleMetrics> {
    let m: Vec<SampleMetrics> = rows.iter().map(|r| r.metrics).collect();
    SampleMetrics::mean(&m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize, SyntheticKind};
    use crate::model::{init_model, ModelConfig};
    use crate::optim::AdamConfig;

    fn toy(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| synthesize(SyntheticKind::Lanes, 32, 3, i as u64))
            .collect()
    }

    fn opts(batch: usize) -> TrainOptions {
        TrainOptions {
            batch_size: batch,
            seed: 5,
            ..TrainOptions::default()
        }
    }

    #[test]
    fn empty_dataset_is_usage_error() {
        let mut m = init_model(&ModelConfig::custom(32, 2, vec![]), 0).unwrap();
        let mut st = OptimState::new(&m, AdamConfig::default());
        let empty: Vec<Sample> = vec![];
        assert!(matches!(
            train_epoch(&mut m, &empty, 0, &opts(4), &mut st),
            Err(DonnError::Usage(_))
        ));
        assert!(matches!(
            evaluate(&m, &empty, LossKind::Mse, Threshold::default()),
            Err(DonnError::Usage(_))
        ));
    }

    #[test]
    fn zero_learning_rate_leaves_model_unchanged() {
        let mut m = init_model(&ModelConfig::custom(32, 2, vec![]), 0).unwrap();
        let before = m.clone();
        let cfg = AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        };
        let mut st = OptimState::new(&m, cfg);
        let stats = train_epoch(&mut m, &toy(6), 0, &opts(4), &mut st).unwrap();
        assert_eq!(stats.batches, 2);
        assert!(m.thetas().zip(before.thetas()).all(|(a, b)| a == b));
    }

    #[test]
    fn worker_count_does_not_change_result() {
        let data = toy(8);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let mut m = init_model(&ModelConfig::custom(32, 2, vec![]), 1).unwrap();
                let mut st = OptimState::new(&m, AdamConfig::default());
                let s = train_epoch(&mut m, &data, 0, &opts(3), &mut st).unwrap();
                (s, m.thetas().cloned().collect::<Vec<_>>())
            })
        };
        let (s1, t1) = run(1);
        let (s3, t3) = run(3);
        assert_eq!(s1, s3);
        assert_eq!(t1, t3);
    }

    #[test]
    fn epoch_orders_differ_but_repeat() {
        assert_eq!(epoch_order(50, 1, 2), epoch_order(50, 1, 2));
        assert_ne!(epoch_order(50, 1, 2), epoch_order(50, 1, 3));
        assert_ne!(epoch_order(50, 1, 2), epoch_order(50, 2, 2));
    }

    #[test]
    fn evaluation_rows_are_in_range() {
        let m = init_model(&ModelConfig::custom(32, 2, vec![]), 0).unwrap();
        let rows = evaluate(&m, &toy(4), LossKind::Mse, Threshold::default()).unwrap();
        assert_eq!(
            rows.iter().map(|r| r.index).collect::<Vec<_>>(),
            vec![0, 1, 2, 3]
        );
        for r in &rows {
            assert!((0.0..=1.0).contains(&r.metrics.iou));
        }
    }
}
