//! Architecture and training hyperparameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::age::NUM_GROUPS;
use crate::error::{Error, Result};
use crate::objectives::LossWeights;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Separate shape, texture and identity features.
    #[default]
    Disentangled,
    /// Ablation baseline: one feature map conditioned on the age embedding.
    Entangled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Entries per age group in the code; the code has `6 * block` entries.
    pub block: usize,
    /// Latent width `C`.
    pub channels: usize,
    pub image_size: usize,
    /// Widths of the first two encoder blocks (the second block ends in `C`).
    pub encoder_widths: [usize; 2],
    /// Output widths of the two upsampling generator blocks.
    pub generator_widths: [usize; 2],
    pub demodulate: bool,
    pub architecture: Architecture,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            block: 50,
            channels: 256,
            image_size: 256,
            encoder_widths: [64, 128],
            generator_widths: [128, 64],
            demodulate: true,
            architecture: Architecture::Disentangled,
        }
    }
}

impl ModelConfig {
    /// Small configuration for CPU experiments at 64x64.
    pub fn toy() -> Self {
        Self {
            block: 50,
            channels: 32,
            image_size: 64,
            encoder_widths: [16, 32],
            generator_widths: [16, 16],
            demodulate: true,
            architecture: Architecture::Disentangled,
        }
    }

    pub fn code_len(&self) -> usize {
        NUM_GROUPS * self.block
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || !self.image_size.is_multiple_of(8) {
            return Err(Error::Config(format!(
                "image size must be a positive multiple of 8, got {}",
                self.image_size
            )));
        }
        let widths = [
            self.block,
            self.channels,
            self.encoder_widths[0],
            self.encoder_widths[1],
        ];
        if widths.iter().chain(&self.generator_widths).any(|&w| w == 0) {
            return Err(Error::Config("all widths must be positive".into()));
        }
        Ok(())
    }
}

/// Every training hyperparameter. Loaded from a `key = value` text file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub block: usize,
    pub channels: usize,
    pub image_size: usize,
    pub encoder_widths: [usize; 2],
    pub generator_widths: [usize; 2],
    pub demodulate: bool,
    pub architecture: Architecture,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// `(epoch, factor)` pairs: the rate is multiplied by `factor` from `epoch` on.
    pub lr_decay: Vec<(usize, f64)>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub ema_decay: f64,
    pub noise_scale: f64,
    pub lambda_adv: f64,
    pub lambda_rec: f64,
    pub lambda_cyc: f64,
    pub lambda_id: f64,
    pub lambda_shape: f64,
    pub r1_gamma: f64,
    pub hflip: bool,
    pub seed: u64,
    /// Stop after this many steps (0 = run all epochs).
    pub max_steps: usize,
    /// Write a checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let w = LossWeights::default();
        Self {
            block: m.block,
            channels: m.channels,
            image_size: m.image_size,
            encoder_widths: m.encoder_widths,
            generator_widths: m.generator_widths,
            demodulate: m.demodulate,
            architecture: m.architecture,
            batch_size: 2,
            epochs: 300,
            lr: 1e-3,
            lr_decay: vec![(50, 0.1), (100, 0.1)],
            adam_beta1: 0.0,
            adam_beta2: 0.99,
            ema_decay: 0.999,
            noise_scale: 0.2,
            lambda_adv: w.adv,
            lambda_rec: w.rec,
            lambda_cyc: w.cyc,
            lambda_id: w.id,
            lambda_shape: w.shape,
            r1_gamma: 10.0,
            hflip: true,
            seed: 0,
            max_steps: 0,
            checkpoint_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn toy() -> Self {
        let m = ModelConfig::toy();
        Self {
            block: m.block,
            channels: m.channels,
            image_size: m.image_size,
            encoder_widths: m.encoder_widths,
            generator_widths: m.generator_widths,
            ..Self::default()
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            block: self.block,
            channels: self.channels,
            image_size: self.image_size,
            encoder_widths: self.encoder_widths,
            generator_widths: self.generator_widths,
            demodulate: self.demodulate,
            architecture: self.architecture,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            adv: self.lambda_adv,
            rec: self.lambda_rec,
            cyc: self.lambda_cyc,
            id: self.lambda_id,
            shape: self.lambda_shape,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.weights().validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!(
                "ema_decay must be in [0, 1], got {}",
                self.ema_decay
            )));
        }
        if !(self.noise_scale >= 0.0) || !(self.r1_gamma >= 0.0) {
            return Err(Error::Config(
                "noise_scale and r1_gamma must be >= 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("adam betas must be in [0, 1)".into()));
        }
        if self.lr_decay.iter().any(|&(_, f)| !(f > 0.0)) {
            return Err(Error::Config("lr_decay factors must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
