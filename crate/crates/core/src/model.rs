//! The two-headed detector: shared layer, forecast head and VAE head wired
//! together over one parameter store.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{self, AdjacencyMask, ForecastDims, EMBEDDING};
use crate::numgrad::{init_params, Bound, ParamSpec, ParamStore, Tape, Tensor, Var};
use crate::shared::{self, Z_TAG};
use crate::vae::{self, VaeDims};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_sensors: usize,
    pub window: usize,
    /// In-neighbours per sensor.
    pub k: usize,
    pub embed_dim: usize,
    pub out_hidden: Vec<usize>,
    pub vae_hidden: usize,
    pub latent: usize,
    pub use_pred: bool,
    pub use_recon: bool,
    pub use_shared: bool,
}

impl ModelConfig {
    pub fn new(n_sensors: usize, window: usize, k: usize) -> Self {
        let vae = VaeDims::with_defaults(n_sensors, window);
        ModelConfig {
            n_sensors,
            window,
            k,
            embed_dim: 16,
            out_hidden: vec![2 * n_sensors],
            vae_hidden: vae.hidden,
            latent: vae.latent,
            use_pred: true,
            use_recon: true,
            use_shared: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sensors < 2 {
            return Err(Error::Config("need at least 2 sensors".into()));
        }
        if self.window == 0 || self.embed_dim == 0 {
            return Err(Error::Config("window and embedding size must be positive".into()));
        }
        if !self.use_pred && !self.use_recon {
            return Err(Error::Config("at least one head must remain enabled".into()));
        }
        if self.use_pred && (self.k == 0 || self.k >= self.n_sensors) {
            return Err(Error::Config(format!(
                "k must lie in [1, {}], got {}",
                self.n_sensors - 1,
                self.k
            )));
        }
        if self.use_recon {
            self.vae_dims().validate()?;
        }
        Ok(())
    }

    pub fn forecast_dims(&self) -> ForecastDims {
        ForecastDims {
            n: self.n_sensors,
            window: self.window,
            embed_dim: self.embed_dim,
            out_hidden: self.out_hidden.clone(),
        }
    }

    pub fn vae_dims(&self) -> VaeDims {
        VaeDims {
            n: self.n_sensors,
            window: self.window,
            hidden: self.vae_hidden,
            latent: self.latent,
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        if self.use_shared {
            specs.extend(shared::param_specs(self.n_sensors));
        }
        if self.use_pred {
            specs.extend(forecast::param_specs(&self.forecast_dims()));
        }
        if self.use_recon {
            specs.extend(vae::param_specs(&self.vae_dims()));
        }
        specs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// Reconstruction head outputs on the tape.
pub struct ReconOutput<'t> {
    /// `[B, d, N]`
    pub recon: Var<'t>,
    pub mu: Var<'t>,
    pub logvar: Var<'t>,
}

pub struct Forward<'t> {
    pub input: Var<'t>,
    /// Shared output, tagged [`Z_TAG`].
    pub z: Var<'t>,
    /// `[B, N]` one-step forecasts.
    pub pred: Option<Var<'t>>,
    pub recon: Option<ReconOutput<'t>>,
    pub mask: Option<AdjacencyMask>,
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config.param_specs(), seed)?;
        Ok(Model { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        for spec in config.param_specs() {
            match params.get(&spec.name) {
                Some(t) if t.shape() == spec.shape.as_slice() => {}
                _ => {
                    return Err(Error::Checkpoint(format!(
                        "parameter `{}` missing or misshapen",
                        spec.name
                    )))
                }
            }
        }
        Ok(Model { config, params })
    }

    /// Current top-k structure; `None` without a forecast head.
    pub fn structure(&self) -> Result<Option<AdjacencyMask>> {
        if !self.config.use_pred {
            return Ok(None);
        }
        let emb = self
            .params
            .get(EMBEDDING)
            .ok_or_else(|| Error::UnknownParam(EMBEDDING.into()))?;
        forecast::learn_structure(emb, self.config.k).map(Some)
    }

    /// Full forward over a `[B, d, N]` batch. `eps` (`[B, L]`) selects
    /// training-mode sampling in the VAE; `None` evaluates with `z = mu`.
    pub fn forward<'t>(&self, tape: &'t Tape, p: &Bound<'t>, x: &Tensor, eps: Option<&Tensor>) -> Result<Forward<'t>> {
        let c = &self.config;
        match x.shape() {
            &[_, d, n] if d == c.window && n == c.n_sensors => {}
            other => {
                return Err(Error::shape(
                    "forward",
                    format!("expected [B, {}, {}], got {other:?}", c.window, c.n_sensors),
                ))
            }
        }
        let input = tape.constant(x.clone())?;
        let z = if c.use_shared {
            shared::shared_forward(input, p)?
        } else {
            tape.tag(Z_TAG, input);
            input
        };

        let mut mask = None;
        let pred = if c.use_pred {
            let m = self.structure()?.expect("forecast head enabled");
            let emb = p.get(EMBEDDING)?;
            let gat = forecast::gat_forward(z, emb, &m, p)?;
            let out = forecast::predict(gat.nodes, emb, p, c.out_hidden.len() + 1)?;
            mask = Some(m);
            Some(out)
        } else {
            None
        };

        let recon = if c.use_recon {
            let (mu, logvar) = vae::encode(z, p)?;
            let latent = vae::reparameterize(mu, logvar, eps)?;
            let recon = vae::decode(latent, p, c.window, c.n_sensors)?;
            Some(ReconOutput { recon, mu, logvar })
        } else {
            None
        };

        Ok(Forward {
            input,
            z,
            pred,
            recon,
            mask,
        })
    }
}
