//! Experiment configuration: one JSON document covering data generation,
//! the conversion, the losses, training, evaluation and ablation sweeps.
//! Every field has a default, so `{}` is a valid configuration.

use std::fs;
use std::path::Path;

use epl_core::datagen::SceneSpec;
use epl_core::field::{AcConfig, Conversion, SplitterKind};
use epl_core::losses::LossConfig;
use epl_core::model::{MonitorConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Anisotropic-convolution settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcSection {
    /// Odd kernel size, at least 3.
    pub w: usize,
    pub splitter: SplitterKind,
}

impl Default for AcSection {
    fn default() -> Self {
        Self { w: 7, splitter: SplitterKind::A }
    }
}

/// Conversion used by the point and line losses during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConversionKind {
    /// Anisotropic convolution.
    #[default]
    Ac,
    /// Plain `w x w` box filter, for the ablation.
    Sc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Seed for weight initialisation and shuffling.
    pub seed: u64,
    /// Add the point and line losses to cross-entropy.
    pub epl: bool,
    pub conversion: ConversionKind,
    /// Size of the held-out evaluation set, generated from its own stream.
    pub eval_count: usize,
    /// Band width of the trimap IoU recorded after every epoch.
    pub monitor_width: u32,
    /// Tolerance of the boundary F-measure recorded after every epoch.
    pub monitor_tolerance: u32,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 8,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
            epl: true,
            conversion: ConversionKind::Ac,
            eval_count: 50,
            monitor_width: 3,
            monitor_tolerance: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub trimap_widths: Vec<u32>,
    pub f_tolerances: Vec<u32>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            trimap_widths: vec![1, 3, 5, 10],
            f_tolerances: vec![1, 2, 3],
        }
    }
}

/// Values swept by `ablate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub mu: Vec<u32>,
    pub splitters: Vec<SplitterKind>,
    pub kernels: Vec<usize>,
    /// Point-loss weights.
    pub weights: Vec<f64>,
    /// Training seeds shared by every configuration of a sweep.
    pub seeds: Vec<u64>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            mu: vec![2, 4, 10, 16, 20],
            splitters: SplitterKind::ALL.to_vec(),
            kernels: vec![3, 5, 7, 9],
            weights: vec![0.05, 0.1, 0.2, 0.25, 0.5],
            seeds: vec![0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: SceneSpec,
    pub ac: AcSection,
    pub loss: LossConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub ablation: AblationSection,
}

impl ExperimentConfig {
    /// Parses and validates a JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::path(path, e))?;
        Self::from_json(&text).map_err(|e| e.in_file(path))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: epl_core::Error| match e {
            epl_core::Error::InvalidConfig(msg) => Error::Config(msg.into()),
            e => Error::Config(e.to_string()),
        };
        self.dataset.validate().map_err(cfg_err)?;
        AcConfig::new(self.ac.w, self.ac.splitter).map_err(cfg_err)?;
        self.loss.validate().map_err(cfg_err)?;
        self.train_config().validate().map_err(cfg_err)?;
        if self.train.eval_count == 0 {
            return Err(Error::Config("train.eval_count must be positive".into()));
        }
        for &mu in &self.ablation.mu {
            epl_core::losses::validate_mu(mu).map_err(cfg_err)?;
        }
        for &w in &self.ablation.kernels {
            epl_core::field::validate_kernel_size(w).map_err(cfg_err)?;
        }
        if self.ablation.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("ablation weights must be finite and nonnegative".into()));
        }
        if self.ablation.seeds.is_empty() {
            return Err(Error::Config("ablation.seeds must not be empty".into()));
        }
        Ok(())
    }

    pub fn ac_config(&self) -> Result<AcConfig> {
        Ok(AcConfig::new(self.ac.w, self.ac.splitter)?)
    }

    pub fn conversion(&self) -> Conversion {
        match self.train.conversion {
            ConversionKind::Ac => Conversion::Anisotropic(
                AcConfig::new(self.ac.w, self.ac.splitter).unwrap_or_else(|_| {
                    AcConfig::new(7, SplitterKind::A).expect("default kernel is valid")
                }),
            ),
            ConversionKind::Sc => Conversion::Standard { kernel_size: self.ac.w },
        }
    }

    /// Loss weights actually used: both potential terms are switched off
    /// when `train.epl` is false.
    pub fn effective_loss(&self) -> LossConfig {
        if self.train.epl {
            self.loss
        } else {
            LossConfig { lambda1: 0.0, lambda2: 0.0, ..self.loss }
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            momentum: self.train.momentum,
            seed: self.train.seed,
            loss: self.effective_loss(),
            conversion: self.conversion(),
            monitor: MonitorConfig {
                trimap_width: self.train.monitor_width,
                f_tolerance: self.train.monitor_tolerance,
            },
        }
    }
}
