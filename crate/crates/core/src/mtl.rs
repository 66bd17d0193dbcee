//! Two-task loss balancing.
//!
//! The forecast and reconstruction losses share the parameters of the shared
//! layer. Under [`CombinationMode::MgdaUb`] the weight between them is the
//! minimum-norm convex combination of the two loss gradients taken with
//! respect to the shared output `Z`, which has a closed form for two tasks.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Forward, Model};
use crate::numgrad::{ParamGrads, ParamStore, Partition, Tape, Tensor, Var};
use crate::shared::Z_TAG;
use crate::vae;

/// Below this squared gap the two gradients count as equal.
pub const DEGENERATE_GAP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPair {
    pub l_pred: f64,
    pub l_recon: f64,
}

/// Gradients of each loss with respect to the shared output, flattened.
#[derive(Clone, Debug, PartialEq)]
pub struct GradPair {
    pub g_pred: Vec<f64>,
    pub g_recon: Vec<f64>,
}

/// Batch-mean squared L2 forecast error over `[B, N]` tensors.
pub fn loss_pred<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "loss_pred",
            format!("{:?} vs {:?}", pred.shape(), target.shape()),
        ));
    }
    let batch = pred.shape()[0] as f64;
    pred.sub(target)?.sq_l2_norm()?.scale(1.0 / batch)
}

/// KL term plus L1 reconstruction error, both averaged over the batch.
pub fn loss_recon<'t>(recon: Var<'t>, window: Var<'t>, mu: Var<'t>, logvar: Var<'t>) -> Result<Var<'t>> {
    if recon.shape() != window.shape() {
        return Err(Error::shape(
            "loss_recon",
            format!("{:?} vs {:?}", recon.shape(), window.shape()),
        ));
    }
    let batch = recon.shape()[0] as f64;
    vae::kl_term(mu, logvar)?
        .add(recon.sub(window)?.l1_norm()?)?
        .scale(1.0 / batch)
}

/// Closed-form minimiser of `|a g_pred + (1-a) g_recon|^2` over `a ∈ [0, 1]`.
/// Equal gradients make every `a` optimal; 0.5 is returned then.
pub fn mgda_alpha(g: &GradPair) -> Result<f64> {
    if g.g_pred.len() != g.g_recon.len() {
        return Err(Error::shape(
            "mgda_alpha",
            format!("{} vs {}", g.g_pred.len(), g.g_recon.len()),
        ));
    }
    if g.g_pred.iter().chain(&g.g_recon).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite gradient".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, r) in g.g_pred.iter().zip(&g.g_recon) {
        num += (r - p) * r;
        den += (p - r) * (p - r);
    }
    if den < DEGENERATE_GAP {
        return Ok(0.5);
    }
    Ok((num / den).clamp(0.0, 1.0))
}

/// `a` dominates `b` when no worse in both losses and better in one.
pub fn pareto_dominates(a: LossPair, b: LossPair) -> bool {
    a.l_pred <= b.l_pred && a.l_recon <= b.l_recon && a != b
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CombinationMode {
    MgdaUb,
    Fixed {
        c_pred: f64,
        c_recon: f64,
    },
    /// Backpropagate one head at a time, switching every `period` epochs.
    Alternating {
        period: usize,
    },
}

impl CombinationMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CombinationMode::MgdaUb => Ok(()),
            CombinationMode::Fixed { c_pred, c_recon } => {
                if c_pred < 0.0 || c_recon < 0.0 || ((c_pred + c_recon) - 1.0).abs() > 1e-9 {
                    Err(Error::Config(format!(
                        "fixed weights must be nonnegative and sum to 1, got ({c_pred}, {c_recon})"
                    )))
                } else {
                    Ok(())
                }
            }
            CombinationMode::Alternating { period: 0 } => {
                Err(Error::Config("alternating period must be positive".into()))
            }
            CombinationMode::Alternating { .. } => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Bias-corrected Adam update of every parameter in `partitions`.
    /// Parameters outside them keep their values and moments.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamGrads, partitions: &[Partition]) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (partition, name, value) in params.iter_mut() {
            if !partitions.contains(&partition) {
                continue;
            }
            let Some(g) = grads.get(name) else { continue };
            if g.shape() != value.shape() {
                return Err(Error::shape(
                    "adam",
                    format!("`{name}`: grad {:?} vs param {:?}", g.shape(), value.shape()),
                ));
            }
            let m = self
                .m
                .entry(name.to_owned())
                .or_insert_with(|| Tensor::zeros(value.shape()));
            let v = self
                .v
                .entry(name.to_owned())
                .or_insert_with(|| Tensor::zeros(value.shape()));
            for (((p, &g), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// What one optimisation step did.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// Losses before the update; a disabled head reports 0.
    pub losses: LossPair,
    /// Weight on the forecast loss.
    pub alpha: f64,
    pub grads: ParamGrads,
}

/// Losses of one forward pass, on the tape.
pub struct Losses<'t> {
    pub pred: Option<Var<'t>>,
    pub recon: Option<Var<'t>>,
}

pub fn losses<'t>(fwd: &Forward<'t>, target: &Tensor) -> Result<Losses<'t>> {
    let tape = fwd.input.tape();
    let pred = match fwd.pred {
        Some(p) => Some(loss_pred(p, tape.constant(target.clone())?)?),
        None => None,
    };
    let recon = match &fwd.recon {
        Some(r) => Some(loss_recon(r.recon, fwd.input, r.mu, r.logvar)?),
        None => None,
    };
    Ok(Losses { pred, recon })
}

/// Flattened `∇_Z loss`, averaged over the batch axis.
fn z_gradient(tape: &Tape, loss: Var<'_>) -> Result<Vec<f64>> {
    let g = tape.backward(loss)?.at_tag(Z_TAG)?;
    let batch = g.shape()[0];
    let per = g.len() / batch;
    let mut out = vec![0.0; per];
    for chunk in g.data().chunks(per) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v / batch as f64;
        }
    }
    Ok(out)
}

/// One forward/backward/update over a batch.
///
/// `x` is `[B, d, N]`, `target` is `[B, N]`. `epoch` drives the alternating
/// schedule. The RNG supplies the VAE noise.
pub fn combined_step<R: Rng>(
    model: &mut Model,
    adam: &mut AdamState,
    x: &Tensor,
    target: &Tensor,
    mode: CombinationMode,
    epoch: usize,
    rng: &mut R,
) -> Result<StepReport> {
    let eps = model.config.use_recon.then(|| {
        let b = x.shape()[0];
        let l = model.config.latent;
        let data = (0..b * l).map(|_| rng.sample(StandardNormal)).collect();
        Tensor::new(vec![b, l], data).expect("shape matches")
    });

    let tape = Tape::new();
    let bound = model.params.bind(&tape)?;
    let fwd = model.forward(&tape, &bound, x, eps.as_ref())?;
    let ls = losses(&fwd, target)?;
    let value = |v: Option<Var<'_>>| v.map_or(0.0, |v| v.value().item().unwrap_or(0.0));
    let pair = LossPair {
        l_pred: value(ls.pred),
        l_recon: value(ls.recon),
    };

    let (total, alpha, partitions) = match (ls.pred, ls.recon) {
        (Some(p), None) => (p, 1.0, vec![Partition::Shared, Partition::Pred]),
        (None, Some(r)) => (r, 0.0, vec![Partition::Shared, Partition::Recon]),
        (Some(p), Some(r)) => match mode {
            CombinationMode::MgdaUb => {
                let g = GradPair {
                    g_pred: z_gradient(&tape, p)?,
                    g_recon: z_gradient(&tape, r)?,
                };
                let alpha = mgda_alpha(&g)?;
                (
                    p.scale(alpha)?.add(r.scale(1.0 - alpha)?)?,
                    alpha,
                    Partition::ALL.to_vec(),
                )
            }
            CombinationMode::Fixed { c_pred, c_recon } => (
                p.scale(c_pred)?.add(r.scale(c_recon)?)?,
                c_pred,
                Partition::ALL.to_vec(),
            ),
            CombinationMode::Alternating { period } => {
                if (epoch / period.max(1)).is_multiple_of(2) {
                    (p, 1.0, vec![Partition::Shared, Partition::Pred])
                } else {
                    (r, 0.0, vec![Partition::Shared, Partition::Recon])
                }
            }
        },
        (None, None) => return Err(Error::Config("model has no heads".into())),
    };

    let grads = bound.grads(&tape.backward(total)?);
    adam.step(&mut model.params, &grads, &partitions)?;
    Ok(StepReport {
        losses: pair,
        alpha,
        grads,
    })
}
