//! Run configuration. Command-line flags override config-file values, which
//! override the defaults below.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SplitRatios;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::mtl::CombinationMode;
use crate::vae::VaeDims;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    #[default]
    MgdaUb,
    Fixed,
    Alternating,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub window: usize,
    pub k: usize,
    pub embed_dim: usize,
    /// Latent size; `None` picks `max(2, N/2)`.
    pub latent: Option<usize>,
    /// VAE hidden width; `None` picks `ceil(d*N/2)`.
    pub vae_hidden: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub mode: ModeName,
    /// Forecast-loss weight for the fixed mode; the recon weight is `1 - c_pred`.
    pub c_pred: f64,
    /// Epochs per head in the alternating mode.
    pub alt_period: usize,
    pub no_vae_head: bool,
    pub no_pred_head: bool,
    pub no_shared_layer: bool,
    pub no_mgda: bool,
    pub split: SplitRatios,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            window: 5,
            k: 5,
            embed_dim: 16,
            latent: None,
            vae_hidden: None,
            epochs: 30,
            batch_size: 32,
            lr: 0.001,
            seed: 0,
            mode: ModeName::MgdaUb,
            c_pred: 0.5,
            alt_period: 1,
            no_vae_head: false,
            no_pred_head: false,
            no_shared_layer: false,
            no_mgda: false,
            split: SplitRatios::default(),
        }
    }
}

/// Every field optional, for layering file and flag values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialRunConfig {
    pub window: Option<usize>,
    pub k: Option<usize>,
    pub embed_dim: Option<usize>,
    pub latent: Option<usize>,
    pub vae_hidden: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub seed: Option<u64>,
    pub mode: Option<ModeName>,
    pub c_pred: Option<f64>,
    pub alt_period: Option<usize>,
    pub no_vae_head: Option<bool>,
    pub no_pred_head: Option<bool>,
    pub no_shared_layer: Option<bool>,
    pub no_mgda: Option<bool>,
    pub train_ratio: Option<f64>,
    pub val_ratio: Option<f64>,
    pub test_ratio: Option<f64>,
}

impl PartialRunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Applies every set field onto `base`.
    pub fn apply(&self, base: &mut RunConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { base.$f = v; } )* };
        }
        set!(
            window,
            k,
            embed_dim,
            epochs,
            batch_size,
            lr,
            seed,
            mode,
            c_pred,
            alt_period,
            no_vae_head,
            no_pred_head,
            no_shared_layer,
            no_mgda
        );
        if self.latent.is_some() {
            base.latent = self.latent;
        }
        if self.vae_hidden.is_some() {
            base.vae_hidden = self.vae_hidden;
        }
        if let Some(v) = self.train_ratio {
            base.split.train = v;
        }
        if let Some(v) = self.val_ratio {
            base.split.val = v;
        }
        if let Some(v) = self.test_ratio {
            base.split.test = v;
        }
    }
}

impl RunConfig {
    /// Defaults, then `file`, then `flags`.
    pub fn layered(file: Option<&PartialRunConfig>, flags: &PartialRunConfig) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(f) = file {
            f.apply(&mut cfg);
        }
        flags.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.no_vae_head && self.no_pred_head {
            return Err(Error::Config("no_vae_head and no_pred_head cannot both be set".into()));
        }
        if self.window == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("window, epochs and batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        self.split.validate()?;
        self.combination_mode().validate()
    }

    /// The optimisation mode after applying the `no_mgda` ablation.
    pub fn combination_mode(&self) -> CombinationMode {
        if self.no_mgda {
            return CombinationMode::Alternating {
                period: self.alt_period,
            };
        }
        match self.mode {
            ModeName::MgdaUb => CombinationMode::MgdaUb,
            ModeName::Fixed => CombinationMode::Fixed {
                c_pred: self.c_pred,
                c_recon: 1.0 - self.c_pred,
            },
            ModeName::Alternating => CombinationMode::Alternating {
                period: self.alt_period,
            },
        }
    }

    pub fn model_config(&self, n_sensors: usize) -> Result<ModelConfig> {
        let defaults = VaeDims::with_defaults(n_sensors, self.window);
        let mut m = ModelConfig::new(n_sensors, self.window, self.k);
        m.embed_dim = self.embed_dim;
        m.latent = self.latent.unwrap_or(defaults.latent);
        m.vae_hidden = self.vae_hidden.unwrap_or(defaults.hidden);
        m.use_pred = !self.no_pred_head;
        m.use_recon = !self.no_vae_head;
        m.use_shared = !self.no_shared_layer;
        m.validate()?;
        Ok(m)
    }
}
