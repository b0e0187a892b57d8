mod eval;
mod gen_synth;
mod gradcheck;
mod infer;
mod propagate;
mod train;

pub use eval::{run_eval, EvalReport};
pub use gen_synth::run_gen_synth;
pub use gradcheck::run_gradcheck;
pub use infer::run_infer;
pub use propagate::run_propagate;
pub use train::{run_train, LogLine, FINAL_METRICS_FILE, RESOLVED_CONFIG_FILE, TRAIN_LOG_FILE};

use std::fs;
use std::path::Path;

use donn_core::data::{DatasetManifest, ManifestSource, Sample, SampleSource};
use donn_core::DonnError;
use rayon::prelude::*;

use crate::args::ModelOverrides;
use crate::config::RunConfig;
use crate::exit::{CliResult, Failure, Phase, IO};

/// Datasets whose decoded arrays fit in this many bytes are held in memory.
const PRELOAD_LIMIT_BYTES: usize = 1 << 30;

/// Decoded samples, either all in memory or read on demand.
pub(crate) fn open_source(
    manifest: DatasetManifest,
    side: usize,
) -> CliResult<Box<dyn SampleSource>> {
    let bytes = manifest.len() * side * side * (3 * 8 + 1);
    if bytes > PRELOAD_LIMIT_BYTES {
        return Ok(Box::new(ManifestSource { manifest, side }));
    }
    let samples: Vec<Sample> = (0..manifest.len())
        .into_par_iter()
        .map(|i| manifest.load(i, side))
        .collect::<Result<_, DonnError>>()
        .dataset()?;
    Ok(Box::new(samples))
}

/// Runs `f` on a pool of `workers` threads (0 = one per core).
pub(crate) fn with_workers<T: Send>(
    workers: usize,
    f: impl FnOnce() -> CliResult<T> + Send,
) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Failure::new(crate::exit::FAILURE, e))?;
    pool.install(f)
}

pub(crate) fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(|e| Failure::new(IO, DonnError::io(path, e)))
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    fs::write(path, contents).map_err(|e| Failure::new(IO, DonnError::io(path, e)))
}

/// Parses "1-6,2-7"; the empty string means no skips.
pub(crate) fn parse_skips(text: &str) -> Result<Vec<[usize; 2]>, DonnError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (a, b) = pair
                .split_once(['-', ':'])
                .ok_or_else(|| DonnError::Usage(format!("skip '{pair}' is not of the form a-b")))?;
            let num = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| DonnError::Usage(format!("skip '{pair}' is not of the form a-b")))
            };
            Ok([num(a)?, num(b)?])
        })
        .collect()
}

pub(crate) fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).config(),
        None => Ok(RunConfig::default()),
    }
}

pub(crate) fn apply_model_overrides(cfg: &mut RunConfig, o: &ModelOverrides) -> CliResult {
    let m = &mut cfg.model;
    if let Some(p) = o.preset {
        m.preset = Some(p);
    }
    if let Some(s) = o.side {
        m.side_px = Some(s);
    }
    if let Some(l) = o.layers {
        m.layers = Some(l);
    }
    if let Some(s) = &o.skips {
        m.skips = Some(parse_skips(s).config()?);
    }
    if let Some(v) = o.pitch {
        m.pitch_m = Some(v);
    }
    if let Some(v) = o.wavelength {
        m.wavelength_m = Some(v);
    }
    if let Some(v) = o.distance {
        m.distance_m = Some(v);
    }
    if let Some(v) = o.pad_factor {
        m.pad_factor = Some(v);
    }
    if let Some(k) = o.loss {
        cfg.loss.kind = Some(k);
    }
    if let Some(w) = o.pos_weight {
        cfg.loss.pos_weight = Some(w);
    }
    if let Some(s) = o.seed {
        cfg.train.seed = Some(s);
    }
    Ok(())
}
