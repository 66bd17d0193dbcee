//! Variational reconstruction head.
//!
//! The encoder reads the flattened shared output, emits a latent mean and
//! log-variance, and the decoder maps a latent sample back to a `[d, N]`
//! window aligned row-for-row with the input.

use crate::error::{Error, Result};
use crate::numgrad::{Bound, ParamSpec, Partition, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeDims {
    pub n: usize,
    pub window: usize,
    pub hidden: usize,
    pub latent: usize,
}

impl VaeDims {
    /// Default sizes: hidden `ceil(d*N/2)`, latent `max(2, N/2)`.
    pub fn with_defaults(n: usize, window: usize) -> Self {
        VaeDims {
            n,
            window,
            hidden: (window * n).div_ceil(2),
            latent: (n / 2).max(2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let flat = self.window * self.n;
        if self.hidden == 0 || self.latent == 0 {
            return Err(Error::Config("VAE sizes must be positive".into()));
        }
        if self.latent >= flat {
            return Err(Error::Config(format!(
                "latent size {} must be below d*N = {flat}",
                self.latent
            )));
        }
        Ok(())
    }
}

pub fn param_specs(dims: &VaeDims) -> Vec<ParamSpec> {
    let flat = dims.window * dims.n;
    let (h, l) = (dims.hidden, dims.latent);
    vec![
        ParamSpec::weight(Partition::Recon, "recon.enc.w", &[flat, h], flat),
        ParamSpec::bias(Partition::Recon, "recon.enc.b", h),
        ParamSpec::weight(Partition::Recon, "recon.mu.w", &[h, l], h),
        ParamSpec::weight(Partition::Recon, "recon.logvar.w", &[h, l], h),
        ParamSpec::weight(Partition::Recon, "recon.dec.w1", &[l, h], l),
        ParamSpec::bias(Partition::Recon, "recon.dec.b1", h),
        ParamSpec::weight(Partition::Recon, "recon.dec.w2", &[h, flat], h),
        ParamSpec::bias(Partition::Recon, "recon.dec.b2", flat),
    ]
}

/// Latent mean and log-variance, each `[B, L]`.
pub fn encode<'t>(z_shared: Var<'t>, p: &Bound<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let shape = z_shared.shape();
    let &[b, d, n] = shape.as_slice() else {
        return Err(Error::shape("encode", format!("expected [B, d, N], got {shape:?}")));
    };
    let w = p.get("recon.enc.w")?;
    if w.shape()[0] != d * n {
        return Err(Error::shape(
            "encode",
            format!("input flattens to {} but encoder expects {}", d * n, w.shape()[0]),
        ));
    }
    let hidden = z_shared
        .reshape(&[b, d * n])?
        .matmul(w)?
        .add(p.get("recon.enc.b")?)?
        .relu()?;
    Ok((
        hidden.matmul(p.get("recon.mu.w")?)?,
        hidden.matmul(p.get("recon.logvar.w")?)?,
    ))
}

/// `z = mu + exp(logvar/2) * eps`; `eps = None` is evaluation mode (`z = mu`).
pub fn reparameterize<'t>(mu: Var<'t>, logvar: Var<'t>, eps: Option<&Tensor>) -> Result<Var<'t>> {
    if mu.shape() != logvar.shape() {
        return Err(Error::shape(
            "reparameterize",
            format!("mu {:?} vs logvar {:?}", mu.shape(), logvar.shape()),
        ));
    }
    let Some(eps) = eps else { return Ok(mu) };
    if eps.shape() != mu.shape().as_slice() {
        return Err(Error::shape(
            "reparameterize",
            format!("eps {:?} vs mu {:?}", eps.shape(), mu.shape()),
        ));
    }
    let eps = mu.tape().constant(eps.clone())?;
    mu.add(logvar.scale(0.5)?.exp()?.mul(eps)?)
}

/// Decodes `[B, L]` latents into `[B, d, N]` reconstructions.
pub fn decode<'t>(z: Var<'t>, p: &Bound<'t>, window: usize, n: usize) -> Result<Var<'t>> {
    let w1 = p.get("recon.dec.w1")?;
    let shape = z.shape();
    if shape.len() != 2 || shape[1] != w1.shape()[0] {
        return Err(Error::shape(
            "decode",
            format!("latent {shape:?} vs decoder input {}", w1.shape()[0]),
        ));
    }
    z.matmul(w1)?
        .add(p.get("recon.dec.b1")?)?
        .relu()?
        .matmul(p.get("recon.dec.w2")?)?
        .add(p.get("recon.dec.b2")?)?
        .reshape(&[shape[0], window, n])
}

/// Sum over all entries of `0.5 * (-logvar + mu^2 + exp(logvar) - 1)`.
pub fn kl_term<'t>(mu: Var<'t>, logvar: Var<'t>) -> Result<Var<'t>> {
    if mu.shape() != logvar.shape() {
        return Err(Error::shape("kl", "mu and logvar differ in shape"));
    }
    let count = mu.value().len() as f64;
    let tape = mu.tape();
    logvar
        .exp()?
        .sub(logvar)?
        .add(mu.mul(mu)?)?
        .sum()?
        .sub(tape.constant(Tensor::scalar(count))?)?
        .scale(0.5)
}

/// Tape-free KL divergence of `N(mu, exp(logvar))` from the standard normal.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> Result<f64> {
    if mu.len() != logvar.len() {
        return Err(Error::shape("kl", "mu and logvar differ in length"));
    }
    Ok(mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| 0.5 * (-lv + m * m + lv.exp() - 1.0))
        .sum())
}

/// One latent draw with the pieces that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSample {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub eps: Vec<f64>,
    pub z: Vec<f64>,
}

impl LatentSample {
    pub fn new(mu: Vec<f64>, logvar: Vec<f64>, eps: Vec<f64>) -> Result<Self> {
        if mu.len() != logvar.len() || mu.len() != eps.len() {
            return Err(Error::shape("latent", "mu, logvar and eps must share a length"));
        }
        let z = mu
            .iter()
            .zip(&logvar)
            .zip(&eps)
            .map(|((m, lv), e)| m + (lv / 2.0).exp() * e)
            .collect();
        Ok(LatentSample { mu, logvar, eps, z })
    }
}
