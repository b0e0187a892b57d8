//! TOML run configuration.
//!
//! Every field is optional in a user-written file. [`RunConfig::resolve`]
//! fills in the defaults and returns a config in which every field is set;
//! that resolved form is what gets written next to each run, and feeding it
//! back in reproduces the run.
//!
//! ```toml
//! [model]
//! preset = "lane-8"          # cityscapes-12 | cityscapes-15 | lane-8 | custom
//! side_px = 64               # overrides the preset grid
//! pitch_m = 36e-6
//! wavelength_m = 532e-9
//! distance_m = 0.2794
//! pad_factor = 2
//! layers = 8
//! skips = [[1, 6], [2, 7], [3, 8]]
//! encoding = "amplitude"     # or "sqrt-amplitude"
//!
//! [loss]
//! kind = "mse"               # mse | bce | dice | weighted-bce
//! pos_weight = 3.0           # weighted-bce only; omitted = balance the train set
//!
//! [optim]
//! learning_rate = 0.01
//!
//! [train]
//! epochs = 500
//! batch_size = 64
//! seed = 0
//! checkpoint_every = 10
//! workers = 0                # 0 = one per core
//! threshold = "fixed"        # or "otsu"
//! visualize = 4
//!
//! [data]
//! train = "data/train"
//! eval = "data/eval"
//!
//! [output]
//! dir = "runs/lane8"
//! ```

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use donn_core::field::Encoding;
use donn_core::loss::LossKind;
use donn_core::metrics::Threshold;
use donn_core::model::{
    ModelConfig, Preset, SkipSpec, DEFAULT_DISTANCE_M, DEFAULT_PAD_FACTOR, DEFAULT_PITCH_M,
    DEFAULT_WAVELENGTH_M,
};
use donn_core::optim::AdamConfig;
use donn_core::train::{TrainOptions, DEFAULT_BATCH_SIZE};
use donn_core::DonnError;
use serde::{Deserialize, Serialize};

pub const OUTPUT_ROOT_ENV: &str = "DONN_OUTPUT_ROOT";
pub const DEFAULT_EPOCHS: u64 = 500;
pub const DEFAULT_CHECKPOINT_EVERY: u64 = 10;
pub const DEFAULT_VISUALIZE: usize = 4;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Option<Preset>,
    pub side_px: Option<usize>,
    pub pitch_m: Option<f64>,
    pub wavelength_m: Option<f64>,
    /// Per-channel (R, G, B) wavelengths; overrides `wavelength_m` per channel.
    pub channel_wavelengths_m: Option<[f64; 3]>,
    pub distance_m: Option<f64>,
    pub pad_factor: Option<usize>,
    pub layers: Option<usize>,
    pub skips: Option<Vec<[usize; 2]>>,
    pub encoding: Option<Encoding>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossName {
    Mse,
    Bce,
    Dice,
    WeightedBce,
}

impl std::str::FromStr for LossName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mse" => Ok(LossName::Mse),
            "bce" => Ok(LossName::Bce),
            "dice" => Ok(LossName::Dice),
            "weighted-bce" => Ok(LossName::WeightedBce),
            other => Err(format!(
                "unknown loss '{other}' (expected mse, bce, dice or weighted-bce)"
            )),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub kind: Option<LossName>,
    pub pos_weight: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdName {
    Fixed,
    Otsu,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<u64>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub checkpoint_every: Option<u64>,
    pub workers: Option<usize>,
    pub threshold: Option<ThresholdName>,
    pub visualize: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub eval: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub optim: OptimSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn config_err(msg: impl Into<String>) -> DonnError {
    DonnError::Usage(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, DonnError> {
        toml::from_str(text).map_err(|e| config_err(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, DonnError> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Fills every unset field. `pos_weight_of_train_set` supplies the
    /// balancing weight at the resolved side when weighted BCE is chosen
    /// without an explicit one.
    pub fn resolve(
        &self,
        pos_weight_of_train_set: impl FnOnce(usize) -> Result<f64, DonnError>,
    ) -> Result<RunConfig, DonnError> {
        let m = &self.model;
        let preset = m.preset.unwrap_or(Preset::Custom);
        let topo = preset.topology();
        let (side_px, layers, skips) = match (topo, m.side_px, m.layers) {
            (Some((side, layers, skips)), s, l) => (s.unwrap_or(side), l.unwrap_or(layers), skips),
            (None, Some(s), Some(l)) => (s, l, Vec::new()),
            (None, _, _) => {
                return Err(config_err(
                    "custom preset needs model.side_px and model.layers",
                ))
            }
        };
        let skips: Vec<[usize; 2]> = match &m.skips {
            Some(s) => s.clone(),
            None => skips.iter().map(|s| [s.from_layer, s.to_layer]).collect(),
        };
        let model = ModelSection {
            preset: Some(preset),
            side_px: Some(side_px),
            pitch_m: Some(m.pitch_m.unwrap_or(DEFAULT_PITCH_M)),
            wavelength_m: Some(m.wavelength_m.unwrap_or(DEFAULT_WAVELENGTH_M)),
            channel_wavelengths_m: m.channel_wavelengths_m,
            distance_m: Some(m.distance_m.unwrap_or(DEFAULT_DISTANCE_M)),
            pad_factor: Some(m.pad_factor.unwrap_or(DEFAULT_PAD_FACTOR)),
            layers: Some(layers),
            skips: Some(skips),
            encoding: Some(m.encoding.unwrap_or_default()),
        };

        let kind = self.loss.kind.unwrap_or(LossName::Mse);
        let pos_weight = match (kind, self.loss.pos_weight) {
            (LossName::WeightedBce, Some(w)) => Some(w),
            (LossName::WeightedBce, None) => Some(pos_weight_of_train_set(side_px)?),
            (_, Some(_)) => return Err(config_err("loss.pos_weight only applies to weighted-bce")),
            (_, None) => None,
        };
        let loss = LossSection {
            kind: Some(kind),
            pos_weight,
        };

        let d = AdamConfig::default();
        let optim = OptimSection {
            learning_rate: Some(self.optim.learning_rate.unwrap_or(d.learning_rate)),
            beta1: Some(self.optim.beta1.unwrap_or(d.beta1)),
            beta2: Some(self.optim.beta2.unwrap_or(d.beta2)),
            epsilon: Some(self.optim.epsilon.unwrap_or(d.epsilon)),
        };

        let t = &self.train;
        let train = TrainSection {
            epochs: Some(t.epochs.unwrap_or(DEFAULT_EPOCHS)),
            batch_size: Some(t.batch_size.unwrap_or(DEFAULT_BATCH_SIZE)),
            seed: Some(t.seed.unwrap_or(0)),
            checkpoint_every: Some(t.checkpoint_every.unwrap_or(DEFAULT_CHECKPOINT_EVERY)),
            workers: Some(t.workers.unwrap_or(0)),
            threshold: Some(t.threshold.unwrap_or(ThresholdName::Fixed)),
            visualize: Some(t.visualize.unwrap_or(DEFAULT_VISUALIZE)),
        };

        let output = OutputSection {
            dir: Some(match &self.output.dir {
                Some(d) => d.clone(),
                None => default_output_root().join(format!("run-seed{}", train.seed.unwrap())),
            }),
        };

        let resolved = RunConfig {
            model,
            loss,
            optim,
            train,
            data: self.data.clone(),
            output,
        };
        resolved.validate()?;
        Ok(resolved)
    }

    fn validate(&self) -> Result<(), DonnError> {
        self.model_config()?.validate()?;
        let t = &self.train;
        if t.epochs == Some(0) {
            return Err(config_err("train.epochs must be positive"));
        }
        if t.batch_size == Some(0) {
            return Err(config_err("train.batch_size must be positive"));
        }
        if t.checkpoint_every == Some(0) {
            return Err(config_err("train.checkpoint_every must be positive"));
        }
        if let Some(w) = self.loss.pos_weight {
            if !(w.is_finite() && w > 0.0) {
                return Err(config_err(format!(
                    "loss.pos_weight must be positive, got {w}"
                )));
            }
        }
        let o = &self.optim;
        if !o.learning_rate.is_some_and(|v| v.is_finite() && v >= 0.0) {
            return Err(config_err("optim.learning_rate must be non-negative"));
        }
        for (name, v) in [("beta1", o.beta1), ("beta2", o.beta2)] {
            if !v.is_some_and(|v| (0.0..1.0).contains(&v)) {
                return Err(config_err(format!("optim.{name} must lie in [0, 1)")));
            }
        }
        if !o.epsilon.is_some_and(|v| v.is_finite() && v > 0.0) {
            return Err(config_err("optim.epsilon must be positive"));
        }
        Ok(())
    }

    /// Model description of a resolved config.
    pub fn model_config(&self) -> Result<ModelConfig, DonnError> {
        let m = &self.model;
        let missing = |f: &str| config_err(format!("model.{f} is unresolved"));
        let skips = m
            .skips
            .as_ref()
            .ok_or_else(|| missing("skips"))?
            .iter()
            .map(|&[a, b]| SkipSpec::new(a, b))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ModelConfig {
            preset: m.preset.ok_or_else(|| missing("preset"))?,
            side_px: m.side_px.ok_or_else(|| missing("side_px"))?,
            pitch_m: m.pitch_m.ok_or_else(|| missing("pitch_m"))?,
            wavelength_m: m.wavelength_m.ok_or_else(|| missing("wavelength_m"))?,
            channel_wavelengths_m: m.channel_wavelengths_m,
            distance_m: m.distance_m.ok_or_else(|| missing("distance_m"))?,
            pad_factor: m.pad_factor.ok_or_else(|| missing("pad_factor"))?,
            layers: m.layers.ok_or_else(|| missing("layers"))?,
            skips,
            encoding: m.encoding.unwrap_or_default(),
        })
    }

    pub fn loss_kind(&self) -> LossKind {
        match self.loss.kind.unwrap_or(LossName::Mse) {
            LossName::Mse => LossKind::Mse,
            LossName::Bce => LossKind::Bce,
            LossName::Dice => LossKind::Dice,
            LossName::WeightedBce => LossKind::WeightedBce {
                pos_weight: self.loss.pos_weight.unwrap_or(1.0),
            },
        }
    }

    pub fn adam(&self) -> AdamConfig {
        let d = AdamConfig::default();
        AdamConfig {
            learning_rate: self.optim.learning_rate.unwrap_or(d.learning_rate),
            beta1: self.optim.beta1.unwrap_or(d.beta1),
            beta2: self.optim.beta2.unwrap_or(d.beta2),
            epsilon: self.optim.epsilon.unwrap_or(d.epsilon),
        }
    }

    pub fn threshold(&self) -> Threshold {
        match self.train.threshold.unwrap_or(ThresholdName::Fixed) {
            ThresholdName::Fixed => Threshold::default(),
            ThresholdName::Otsu => Threshold::Otsu,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            batch_size: self.train.batch_size.unwrap_or(DEFAULT_BATCH_SIZE),
            loss: self.loss_kind(),
            seed: self.train.seed.unwrap_or(0),
            threshold: self.threshold(),
        }
    }
}

/// `$DONN_OUTPUT_ROOT`, or `runs` in the working directory.
pub fn default_output_root() -> PathBuf {
    env::var_os(OUTPUT_ROOT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}
