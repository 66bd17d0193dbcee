//! Deviation scoring, threshold calibration and point-wise metrics.
//!
//! Error and score matrices are time-major: `rows[t][i]` is sensor `i` at
//! the `t`-th scored timestamp.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to the inter-quartile range before dividing.
pub const IQR_FLOOR: f64 = 1e-6;

/// Absolute errors of each enabled head.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrSeries {
    pub pred: Option<Vec<Vec<f64>>>,
    pub recon: Option<Vec<Vec<f64>>>,
}

impl ErrSeries {
    pub fn len(&self) -> usize {
        self.pred.as_ref().or(self.recon.as_ref()).map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn abs_diff(a: &[Vec<f64>], truth: &[Vec<f64>], what: &str) -> Result<Vec<Vec<f64>>> {
    if a.len() != truth.len() {
        return Err(Error::Data(format!(
            "{what}: {} timestamps vs {} truth rows",
            a.len(),
            truth.len()
        )));
    }
    a.iter()
        .zip(truth)
        .enumerate()
        .map(|(t, (row, h))| {
            if row.len() != h.len() {
                return Err(Error::Data(format!(
                    "{what}: row {t} has {} sensors, truth {}",
                    row.len(),
                    h.len()
                )));
            }
            Ok(row.iter().zip(h).map(|(x, y)| (y - x).abs()).collect())
        })
        .collect()
}

/// `|h - ĥ|` and `|h - r̂|` per sensor and timestamp.
pub fn compute_errors(
    predictions: Option<&[Vec<f64>]>,
    reconstructions: Option<&[Vec<f64>]>,
    truth: &[Vec<f64>],
) -> Result<ErrSeries> {
    if predictions.is_none() && reconstructions.is_none() {
        return Err(Error::InvalidArgument("no head outputs to score".into()));
    }
    Ok(ErrSeries {
        pred: predictions.map(|p| abs_diff(p, truth, "predictions")).transpose()?,
        recon: reconstructions
            .map(|r| abs_diff(r, truth, "reconstructions"))
            .transpose()?,
    })
}

/// Quantile of sorted data with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorStats {
    pub median: f64,
    pub iqr: f64,
}

impl SensorStats {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Data("no validation errors to fit".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(SensorStats {
            median: quantile(&sorted, 0.5),
            iqr: quantile(&sorted, 0.75) - quantile(&sorted, 0.25),
        })
    }

    pub fn normalize(&self, err: f64) -> f64 {
        (err - self.median) / self.iqr.max(IQR_FLOOR)
    }
}

/// Median and IQR per sensor and head, fitted on validation errors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RobustStats {
    pub pred: Option<Vec<SensorStats>>,
    pub recon: Option<Vec<SensorStats>>,
}

fn fit_columns(rows: &[Vec<f64>]) -> Result<Vec<SensorStats>> {
    let n = rows
        .first()
        .ok_or_else(|| Error::Data("no validation errors to fit".into()))?
        .len();
    (0..n)
        .map(|i| SensorStats::fit(&rows.iter().map(|r| r[i]).collect::<Vec<_>>()))
        .collect()
}

impl RobustStats {
    pub fn fit(errs: &ErrSeries) -> Result<Self> {
        if errs.is_empty() {
            return Err(Error::Data("no validation errors to fit".into()));
        }
        Ok(RobustStats {
            pred: errs.pred.as_deref().map(fit_columns).transpose()?,
            recon: errs.recon.as_deref().map(fit_columns).transpose()?,
        })
    }
}

/// Normalized scores `a_i(t)` for each enabled head.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scores {
    pub pred: Option<Vec<Vec<f64>>>,
    pub recon: Option<Vec<Vec<f64>>>,
}

fn normalize_rows(rows: &[Vec<f64>], stats: &[SensorStats]) -> Result<Vec<Vec<f64>>> {
    rows.iter()
        .map(|r| {
            if r.len() != stats.len() {
                return Err(Error::Data(format!("{} sensors vs {} fitted", r.len(), stats.len())));
            }
            Ok(r.iter().zip(stats).map(|(e, s)| s.normalize(*e)).collect())
        })
        .collect()
}

pub fn robust_normalize(errs: &ErrSeries, stats: &RobustStats) -> Result<Scores> {
    let pick = |e: &Option<Vec<Vec<f64>>>, s: &Option<Vec<SensorStats>>, what: &str| match (e, s) {
        (Some(e), Some(s)) => normalize_rows(e, s).map(Some),
        (None, _) => Ok(None),
        (Some(_), None) => Err(Error::Data(format!("no fitted {what} statistics"))),
    };
    Ok(Scores {
        pred: pick(&errs.pred, &stats.pred, "forecast")?,
        recon: pick(&errs.recon, &stats.recon, "reconstruction")?,
    })
}

/// Largest normalized score across both heads and all sensors.
pub fn aggregate(a_pred: Option<&[f64]>, a_recon: Option<&[f64]>) -> f64 {
    a_pred
        .into_iter()
        .chain(a_recon)
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn aggregate_series(scores: &Scores) -> Vec<f64> {
    let len = scores.pred.as_ref().or(scores.recon.as_ref()).map_or(0, Vec::len);
    (0..len)
        .map(|t| {
            aggregate(
                scores.pred.as_ref().map(|s| s[t].as_slice()),
                scores.recon.as_ref().map(|s| s[t].as_slice()),
            )
        })
        .collect()
}

/// The validation maximum of `A(t)`.
pub fn calibrate_threshold(validation: &[f64]) -> Result<f64> {
    if validation.is_empty() {
        return Err(Error::Data("empty validation score series".into()));
    }
    Ok(validation.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// `1` where the score strictly exceeds the threshold.
pub fn verdicts(scores: &[f64], threshold: f64) -> Vec<u8> {
    scores.iter().map(|&a| u8::from(a > threshold)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Point-wise precision, recall and F1. Empty denominators yield 0.
pub fn metrics(verdicts: &[u8], labels: &[u8]) -> Result<Metrics> {
    if verdicts.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} verdicts vs {} labels",
            verdicts.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&v, &l) in verdicts.iter().zip(labels) {
        if l > 1 || v > 1 {
            return Err(Error::Data("verdicts and labels must be binary".into()));
        }
        match (v, l) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => tn += 1,
        }
    }
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    Ok(Metrics {
        precision,
        recall,
        f1: f1_score(precision, recall),
        tp,
        fp,
        fn_,
        tn,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRecord {
    pub t: usize,
    pub a_pred: Option<Vec<f64>>,
    pub a_recon: Option<Vec<f64>>,
    pub score: f64,
    pub verdict: u8,
    pub label: Option<u8>,
}

/// Builds records for timestamps `times` from per-head scores.
pub fn score_records(times: &[usize], scores: &Scores, threshold: f64, labels: Option<&[u8]>) -> Vec<ScoreRecord> {
    let agg = aggregate_series(scores);
    times
        .iter()
        .enumerate()
        .map(|(k, &t)| ScoreRecord {
            t,
            a_pred: scores.pred.as_ref().map(|s| s[k].clone()),
            a_recon: scores.recon.as_ref().map(|s| s[k].clone()),
            score: agg[k],
            verdict: u8::from(agg[k] > threshold),
            label: labels.map(|l| l[t]),
        })
        .collect()
}

/// Score CSV: a `# threshold=<v>` line, then `t,A,verdict[,label][,per-sensor...]`.
pub fn write_score_csv(records: &[ScoreRecord], threshold: f64, sensor_names: &[String], per_sensor: bool) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# threshold={threshold:?}");
    let has_label = records.first().is_some_and(|r| r.label.is_some());
    let mut header = vec!["t".to_owned(), "A".to_owned(), "verdict".to_owned()];
    if has_label {
        header.push("label".into());
    }
    let first = records.first();
    if per_sensor {
        if first.is_some_and(|r| r.a_pred.is_some()) {
            header.extend(sensor_names.iter().map(|s| format!("pred_{s}")));
        }
        if first.is_some_and(|r| r.a_recon.is_some()) {
            header.extend(sensor_names.iter().map(|s| format!("recon_{s}")));
        }
    }
    let _ = writeln!(out, "{}", header.join(","));
    for r in records {
        let mut fields = vec![r.t.to_string(), format!("{:?}", r.score), r.verdict.to_string()];
        if has_label {
            fields.push(r.label.unwrap_or(0).to_string());
        }
        if per_sensor {
            for s in r.a_pred.iter().chain(&r.a_recon) {
                fields.extend(s.iter().map(|v| format!("{v:?}")));
            }
        }
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

/// Minimal view of a score CSV, as read back for plotting.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTrace {
    pub threshold: f64,
    pub t: Vec<usize>,
    pub score: Vec<f64>,
    pub verdict: Vec<u8>,
    pub label: Option<Vec<u8>>,
}

pub fn parse_score_csv(text: &str) -> Result<ScoreTrace> {
    let mut lines = text.lines();
    let first = lines.next().ok_or_else(|| Error::Data("empty score file".into()))?;
    let threshold = first
        .strip_prefix("# threshold=")
        .ok_or_else(|| Error::Parse {
            row: 1,
            column: 1,
            message: "missing `# threshold=` line".into(),
        })?
        .trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse {
            row: 1,
            column: 1,
            message: format!("bad threshold: {e}"),
        })?;
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Data("score file has no header".into()))?
        .split(',')
        .collect();
    let col = |name: &str| header.iter().position(|h| *h == name);
    let (Some(ct), Some(ca), Some(cv)) = (col("t"), col("A"), col("verdict")) else {
        return Err(Error::Parse {
            row: 2,
            column: 1,
            message: "header must contain t, A and verdict".into(),
        });
    };
    let cl = col("label");
    let mut trace = ScoreTrace {
        threshold,
        t: Vec::new(),
        score: Vec::new(),
        verdict: Vec::new(),
        label: cl.map(|_| Vec::new()),
    };
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = k + 3;
        let fields: Vec<&str> = line.split(',').collect();
        let get = |c: usize| -> Result<&str> {
            fields.get(c).copied().ok_or_else(|| Error::Parse {
                row,
                column: c + 1,
                message: "missing field".into(),
            })
        };
        let bad = |c: usize, what: &str| Error::Parse {
            row,
            column: c + 1,
            message: format!("invalid {what}"),
        };
        trace.t.push(get(ct)?.parse().map_err(|_| bad(ct, "timestamp"))?);
        trace.score.push(get(ca)?.parse().map_err(|_| bad(ca, "score"))?);
        trace.verdict.push(get(cv)?.parse().map_err(|_| bad(cv, "verdict"))?);
        if let (Some(c), Some(l)) = (cl, trace.label.as_mut()) {
            l.push(get(c)?.parse().map_err(|_| bad(c, "label"))?);
        }
    }
    if trace.t.is_empty() {
        return Err(Error::Data("score file has no rows".into()));
    }
    Ok(trace)
}
