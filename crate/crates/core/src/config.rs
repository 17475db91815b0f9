//! Run configuration (TOML) and the named loss-weight presets.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{AugmentationSpec, Method};
use crate::losses::{LossWeights, Reduction};
use crate::nn::{ClassifierArch, GenMode, GeneratorArch};
use crate::synth::DatasetSpec;
use crate::train::TrainConfig;

/// A named generator configuration: layout plus loss weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    /// `None` for the single-adversary baseline.
    pub mode: Option<GenMode>,
    pub weights: LossWeights,
}

const fn row(a: [f64; 4], beta: f64, gamma: f64, lambda: f64) -> LossWeights {
    LossWeights { alpha1: a[0], alpha2: a[1], alpha3: a[2], alpha4: a[3], beta1: beta, beta2: beta, gamma, lambda, kappa: 0.1, reduction: Reduction::Sum }
}

pub const PRESETS: [Preset; 8] = [
    Preset { name: "duo-ae-tv", mode: Some(GenMode::DuoAE), weights: row([1.0, 1.0, 1.0, 0.0], 0.001, 0.0, 0.2) },
    Preset { name: "duo-ae-w-tv", mode: Some(GenMode::DuoAE), weights: row([1.0, 1.0, 1.0, 0.0], 0.001, 0.1, 0.2) },
    Preset { name: "single-ae1-tv", mode: Some(GenMode::SingleAE(1)), weights: row([1.0, 1.0, 1.0, 0.0], 0.001, 0.0, 0.2) },
    Preset { name: "single-ae1-w", mode: Some(GenMode::SingleAE(1)), weights: row([3.0, 1.0, 1.0, 0.2], 0.001, 0.1, 0.0) },
    Preset { name: "single-ae1-w-tv", mode: Some(GenMode::SingleAE(1)), weights: row([1.0, 1.0, 1.0, 0.2], 0.001, 0.1, 0.2) },
    Preset { name: "single-ae2-w", mode: Some(GenMode::SingleAE(2)), weights: row([3.0, 1.0, 1.0, 0.2], 0.001, 0.2, 0.0) },
    Preset { name: "single-ae2-w-tv", mode: Some(GenMode::SingleAE(2)), weights: row([3.0, 1.0, 1.0, 0.2], 0.001, 0.2, 0.2) },
    Preset { name: "adv-ae-tv", mode: None, weights: row([0.0, 1.0, 0.0, 0.0], 0.001, 0.0, 0.2) },
];

pub const DEFAULT_PRESET: &str = "single-ae2-w-tv";
pub const NAIVE_PRESET: &str = "adv-ae-tv";

pub fn preset(name: &str) -> Result<Preset> {
    PRESETS.iter().copied().find(|p| p.name == name).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        Error::InvalidSpec { field: "preset", reason: format!("unknown preset `{name}` (known: {})", names.join(", ")) }
    })
}

/// Optimization schedule of one training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub lr_decay_factor: f64,
    pub plateau_patience: usize,
    pub augment: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 8, initial_lr: 1e-3, lr_decay_factor: 3.0, plateau_patience: 3, augment: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Existing dataset directory; generated from `spec` when absent.
    pub path: Option<PathBuf>,
    pub spec: DatasetSpec,
    pub split: [f64; 3],
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { path: None, spec: DatasetSpec::default(), split: [0.8, 0.1, 0.1] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub preset: String,
    pub base_width: usize,
    /// Reduction of the pixel-space and weight-proximity terms, applied on top of the preset.
    pub reduction: Reduction,
    /// Overrides the preset's weights when present.
    pub loss_weights: Option<LossWeights>,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        Self { preset: DEFAULT_PRESET.into(), base_width: 8, reduction: Reduction::Mean, loss_weights: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    pub explainer: Method,
    /// Augmented copies; 0 disables averaging.
    pub augment: usize,
}

impl Default for ExplainSection {
    fn default() -> Self {
        Self { explainer: Method::Dual, augment: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: DatasetSection,
    pub classifier: ClassifierSection,
    pub classifier_training: Schedule,
    pub generator: GeneratorSection,
    pub generator_training: Schedule,
    pub naive_training: Schedule,
    /// Geometric ranges shared by train-time and explanation-time augmentation.
    pub augmentation: AugmentationSpec,
    pub explain: ExplainSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub widths: Vec<usize>,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        Self { widths: ClassifierArch::default().widths }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out: PathBuf::from("run"),
            dataset: DatasetSection::default(),
            classifier: ClassifierSection::default(),
            classifier_training: Schedule { epochs: 50, batch_size: 32, initial_lr: 3e-3, ..Schedule::default() },
            generator: GeneratorSection::default(),
            generator_training: Schedule::default(),
            naive_training: Schedule::default(),
            augmentation: AugmentationSpec::default(),
            explain: ExplainSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.spec.validate()?;
        if let Some(p) = &self.dataset.path {
            if !p.is_dir() {
                return Err(Error::InvalidSpec { field: "dataset.path", reason: format!("{} is not a directory", p.display()) });
            }
        }
        preset(&self.generator.preset)?;
        self.loss_weights()?.validate()?;
        self.augmentation.validate()?;
        for (field, s) in [("classifier_training", &self.classifier_training), ("generator_training", &self.generator_training), ("naive_training", &self.naive_training)] {
            self.train_config(s, LossWeights::default()).validate().map_err(|e| match e {
                Error::InvalidSpec { field: f, reason } => Error::InvalidSpec { field, reason: format!("{f}: {reason}") },
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn preset(&self) -> Result<Preset> {
        preset(&self.generator.preset)
    }

    pub fn generator_mode(&self) -> Result<GenMode> {
        self.preset()?.mode.ok_or_else(|| Error::InvalidSpec {
            field: "generator.preset",
            reason: format!("`{}` is the single-adversary baseline, not a generator pair", self.generator.preset),
        })
    }

    pub fn loss_weights(&self) -> Result<LossWeights> {
        let w = self.generator.loss_weights.unwrap_or(self.preset()?.weights);
        Ok(LossWeights { reduction: self.generator.reduction, ..w })
    }

    pub fn naive_weights(&self) -> LossWeights {
        LossWeights { reduction: self.generator.reduction, ..preset(NAIVE_PRESET).expect("built-in").weights }
    }

    pub fn train_config(&self, s: &Schedule, weights: LossWeights) -> TrainConfig {
        TrainConfig {
            epochs: s.epochs,
            batch_size: s.batch_size,
            initial_lr: s.initial_lr,
            lr_decay_factor: s.lr_decay_factor,
            plateau_patience: s.plateau_patience,
            seed: self.seed,
            augment: s.augment,
            loss_weights: weights,
            augmentation: self.augmentation.clone(),
        }
    }

    pub fn classifier_arch(&self, shape: crate::tensor::Shape) -> ClassifierArch {
        ClassifierArch { widths: self.classifier.widths.clone(), ..ClassifierArch::for_input(shape) }
    }

    pub fn generator_arch(&self, shape: crate::tensor::Shape) -> GeneratorArch {
        GeneratorArch { base_width: self.generator.base_width, ..GeneratorArch::for_input(shape) }
    }
}
