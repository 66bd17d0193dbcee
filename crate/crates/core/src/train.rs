//! Epoch loop over shuffled mini-batches of training windows.

use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::WindowBatch;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::mtl::{self, AdamState, CombinationMode, LossPair};
use crate::numgrad::Tape;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub mode: CombinationMode,
    pub seed: u64,
}

/// Per-epoch means of the step losses and weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_pred: f64,
    pub l_recon: f64,
    pub alpha: f64,
    pub wall_ms: u128,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} l_pred={:.6} l_recon={:.6} alpha={:.4} wall_ms={}",
            self.epoch, self.l_pred, self.l_recon, self.alpha, self.wall_ms
        )
    }
}

pub fn train(
    model: &mut Model,
    windows: &WindowBatch,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    if windows.is_empty() {
        return Err(Error::Data("no training windows".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    opts.mode.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut adam = AdamState::new(opts.lr);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut logs = Vec::with_capacity(opts.epochs);

    for epoch in 0..opts.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut lp, mut lr, mut alpha, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for (step, idx) in order.chunks(opts.batch_size).enumerate() {
            let (x, y) = windows.tensors(idx)?;
            let report = mtl::combined_step(model, &mut adam, &x, &y, opts.mode, epoch, &mut rng).map_err(|e| {
                Error::Diverged {
                    epoch,
                    step,
                    source: Box::new(e),
                }
            })?;
            lp += report.losses.l_pred;
            lr += report.losses.l_recon;
            alpha += report.alpha;
            steps += 1;
        }
        let n = steps as f64;
        let log = EpochLog {
            epoch,
            l_pred: lp / n,
            l_recon: lr / n,
            alpha: alpha / n,
            wall_ms: started.elapsed().as_millis(),
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}

/// Mean losses over `windows` in evaluation mode (no latent noise).
pub fn evaluate_losses(model: &Model, windows: &WindowBatch, batch_size: usize) -> Result<LossPair> {
    let idx: Vec<usize> = (0..windows.len()).collect();
    let (mut lp, mut lr) = (0.0, 0.0);
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = windows.tensors(chunk)?;
        let tape = Tape::new();
        let bound = model.params.bind(&tape)?;
        let fwd = model.forward(&tape, &bound, &x, None)?;
        let ls = mtl::losses(&fwd, &y)?;
        let w = chunk.len() as f64;
        lp += ls.pred.map_or(0.0, |v| v.value().item().unwrap_or(0.0)) * w;
        lr += ls.recon.map_or(0.0, |v| v.value().item().unwrap_or(0.0)) * w;
    }
    let n = windows.len() as f64;
    Ok(LossPair {
        l_pred: lp / n,
        l_recon: lr / n,
    })
}
