//! A trained model bundled with its normalization, robust statistics and
//! threshold, ready to score new data.
//!
//! Timestamp `t` is scored from two windows: the forecast of `t` comes from
//! rows `[t-d, t)`, and the reconstruction error uses the last row of the
//! reconstruction of rows `[t-d+1, t]`. Inside a row range `[s, e)` the
//! scored timestamps are therefore `s+d .. e`. Split scoring borrows up to
//! `d` rows of history from before the split so that its own rows are
//! scored.

use std::ops::Range;

use crate::data::{NormalizationStats, Split, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numgrad::{Tape, Tensor};
use crate::scoring::{self, ErrSeries, RobustStats, ScoreRecord, Scores};

const EVAL_BATCH: usize = 256;

/// Raw head outputs aligned to scored timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutputs {
    pub times: Vec<usize>,
    pub truth: Vec<Vec<f64>>,
    pub pred: Option<Vec<Vec<f64>>>,
    pub recon: Option<Vec<Vec<f64>>>,
}

/// Runs the model in evaluation mode over every timestamp of `range`.
pub fn head_outputs(model: &Model, values: &[Vec<f64>], range: Range<usize>) -> Result<HeadOutputs> {
    let d = model.config.window;
    let n = model.config.n_sensors;
    if range.end > values.len() || range.len() <= d {
        return Err(Error::Data(format!(
            "range {range:?} is too short for window length {d}"
        )));
    }
    // windows start at p and cover rows p..p+d
    let starts: Vec<usize> = (range.start..=range.end - d).collect();
    let mut preds = Vec::with_capacity(starts.len());
    let mut last_rows = Vec::with_capacity(starts.len());
    for chunk in starts.chunks(EVAL_BATCH) {
        let mut data = Vec::with_capacity(chunk.len() * d * n);
        for &p in chunk {
            for row in &values[p..p + d] {
                if row.len() != n {
                    return Err(Error::Data(format!("row has {} sensors, model expects {n}", row.len())));
                }
                data.extend_from_slice(row);
            }
        }
        let x = Tensor::new(vec![chunk.len(), d, n], data)?;
        let tape = Tape::new();
        let bound = model.params.bind(&tape)?;
        let fwd = model.forward(&tape, &bound, &x, None)?;
        if let Some(p) = fwd.pred {
            let v = p.value();
            preds.extend(v.data().chunks(n).map(<[f64]>::to_vec));
        }
        if let Some(r) = &fwd.recon {
            let v = r.recon.value();
            last_rows.extend(v.data().chunks(d * n).map(|w| w[(d - 1) * n..].to_vec()));
        }
    }

    let times: Vec<usize> = (range.start + d..range.end).collect();
    let truth = times.iter().map(|&t| values[t].clone()).collect();
    let pred = model
        .config
        .use_pred
        .then(|| times.iter().map(|&t| preds[t - d - range.start].clone()).collect());
    let recon = model.config.use_recon.then(|| {
        times
            .iter()
            .map(|&t| last_rows[t + 1 - d - range.start].clone())
            .collect()
    });
    Ok(HeadOutputs {
        times,
        truth,
        pred,
        recon,
    })
}

/// Row range that scores every timestamp of `split` it can.
pub fn with_history(split: Range<usize>, window: usize) -> Range<usize> {
    split.start.saturating_sub(window)..split.end
}

pub fn errors_of(out: &HeadOutputs) -> Result<ErrSeries> {
    scoring::compute_errors(out.pred.as_deref(), out.recon.as_deref(), &out.truth)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detector {
    pub model: Model,
    pub normalization: NormalizationStats,
    pub robust: RobustStats,
    pub threshold: f64,
}

/// Scores for one row range.
#[derive(Clone, Debug, PartialEq)]
pub struct Scored {
    pub times: Vec<usize>,
    pub scores: Scores,
    pub aggregate: Vec<f64>,
}

impl Detector {
    /// Fits robust statistics and the threshold on the validation split of
    /// an already-normalized dataset.
    pub fn calibrate(model: Model, normalization: NormalizationStats, normalized: &TimeSeriesDataset) -> Result<Self> {
        let val = normalized
            .split_range(Split::Val)
            .ok_or_else(|| Error::Data("validation split is empty".into()))?;
        let out = head_outputs(&model, &normalized.values, with_history(val, model.config.window))?;
        let errs = errors_of(&out)?;
        let robust = RobustStats::fit(&errs)?;
        let scores = scoring::robust_normalize(&errs, &robust)?;
        let threshold = scoring::calibrate_threshold(&scoring::aggregate_series(&scores))?;
        Ok(Detector {
            model,
            normalization,
            robust,
            threshold,
        })
    }

    /// Scores rows `range` of already-normalized values.
    pub fn score_normalized(&self, values: &[Vec<f64>], range: Range<usize>) -> Result<Scored> {
        let out = head_outputs(&self.model, values, range)?;
        let errs = errors_of(&out)?;
        let scores = scoring::robust_normalize(&errs, &self.robust)?;
        let aggregate = scoring::aggregate_series(&scores);
        Ok(Scored {
            times: out.times,
            scores,
            aggregate,
        })
    }

    /// Scores the rows of one split of an already-normalized dataset.
    pub fn score_split(&self, normalized: &TimeSeriesDataset, which: Split) -> Result<Scored> {
        let range = normalized
            .split_range(which)
            .ok_or_else(|| Error::Data(format!("{which:?} split is empty")))?;
        self.score_normalized(&normalized.values, with_history(range, self.model.config.window))
    }

    /// Normalizes raw rows with the stored statistics, then scores them all.
    pub fn score_raw(&self, raw: &[Vec<f64>]) -> Result<Scored> {
        let values: Vec<Vec<f64>> = raw.iter().map(|r| self.normalization.apply_row(r)).collect();
        self.score_normalized(&values, 0..values.len())
    }

    pub fn records(&self, scored: &Scored, labels: Option<&[u8]>) -> Vec<ScoreRecord> {
        scoring::score_records(&scored.times, &scored.scores, self.threshold, labels)
    }
}
