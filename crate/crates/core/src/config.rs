//! Training and rendering configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::disc::DiscConfig;
use crate::error::{Error, Result};
use crate::fields::FieldConfig;
use crate::rays::CameraConfig;
use crate::render::RenderConfig;
use crate::text::DEFAULT_MAX_LEN;
use crate::train::Grammar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub count: usize,
    pub seed: u64,
    /// Directory of a saved dataset; generated in memory when absent.
    pub dir: Option<PathBuf>,
    pub grammar: Grammar,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            count: 200,
            seed: 1,
            dir: None,
            grammar: Grammar::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: u64,
    /// Images per iteration.
    pub batch: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Checkpoint period in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    /// Training render size (height, width).
    pub train_size: [usize; 2],
    /// Random crop (height, width) of the training render; whole image when absent.
    pub patch: Option<[usize; 2]>,
    /// Points per image used for the eikonal term.
    pub eik_points: usize,
    pub max_len: usize,
    /// Rig file; the built-in humanoid when absent.
    pub rig: Option<PathBuf>,
    /// Vocabulary file; the built-in fashion vocabulary when absent.
    pub vocab: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    /// Evaluation camera; training renders resize it to `train_size`.
    pub camera: CameraConfig,
    pub render: RenderConfig,
    pub field: FieldConfig,
    pub disc: DiscConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            steps: 5000,
            batch: 4,
            lr_g: 2e-4,
            lr_d: 2e-4,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
            checkpoint_every: 500,
            train_size: [64, 32],
            patch: Some([32, 32]),
            eik_points: 64,
            max_len: DEFAULT_MAX_LEN,
            rig: None,
            vocab: None,
            output_dir: PathBuf::from("runs/default"),
            dataset: DatasetConfig::default(),
            camera: CameraConfig::default(),
            render: RenderConfig::default(),
            field: FieldConfig::default(),
            disc: DiscConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        TrainConfig::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        self.disc.validate()?;
        self.render.validate()?;
        self.dataset.grammar.validate()?;
        if self.batch == 0 || self.max_len == 0 {
            return Err(Error::Config("batch and max_len must be positive".into()));
        }
        if !(self.lr_g > 0.0 && self.lr_d > 0.0 && self.eps > 0.0) {
            return Err(Error::Config("learning rates and eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        let [h, w] = self.train_size;
        let [ph, pw] = self.patch.unwrap_or(self.train_size);
        if ph > h || pw > w || ph % 16 != 0 || pw % 16 != 0 || ph == 0 || pw == 0 {
            return Err(Error::Config(
                "training crops must fit the training render and have sides divisible by 16".into(),
            ));
        }
        if self.field.word_dim != self.disc.word_dim {
            return Err(Error::Config("field and disc word_dim must agree".into()));
        }
        Ok(())
    }
}
