//! CSV ingestion, normalization, chronological splits, sliding windows and a
//! seeded synthetic benchmark generator.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numgrad::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

/// Train/validation/test fractions; must be positive and sum to 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| *p <= 0.0 || !p.is_finite()) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must be positive and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }

    /// Row boundaries `(train_end, val_end)` for a series of `t` rows.
    pub fn boundaries(&self, t: usize) -> (usize, usize) {
        let train_end = (self.train * t as f64).round() as usize;
        let val_end = ((self.train + self.val) * t as f64).round() as usize;
        (train_end.min(t), val_end.min(t))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesDataset {
    pub sensor_names: Vec<String>,
    /// Row-major `T x N` readings.
    pub values: Vec<Vec<f64>>,
    pub labels: Option<Vec<u8>>,
    pub split: Vec<Split>,
}

impl TimeSeriesDataset {
    pub fn new(sensor_names: Vec<String>, values: Vec<Vec<f64>>, labels: Option<Vec<u8>>) -> Result<Self> {
        let n = sensor_names.len();
        if n < 2 {
            return Err(Error::Data(format!("need at least 2 sensors, got {n}")));
        }
        if let Some(bad) = values.iter().position(|r| r.len() != n) {
            return Err(Error::Data(format!(
                "row {bad} has {} values, expected {n}",
                values[bad].len()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != values.len() {
                return Err(Error::Data("label count differs from row count".into()));
            }
            if l.iter().any(|&v| v > 1) {
                return Err(Error::Data("labels must be 0 or 1".into()));
            }
        }
        let split = vec![Split::Train; values.len()];
        Ok(TimeSeriesDataset {
            sensor_names,
            values,
            labels,
            split,
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.sensor_names.len()
    }

    pub fn n_steps(&self) -> usize {
        self.values.len()
    }

    /// Marks rows chronologically: train first, then val, then test.
    pub fn with_splits(mut self, ratios: SplitRatios) -> Result<Self> {
        ratios.validate()?;
        let (train_end, val_end) = ratios.boundaries(self.n_steps());
        self.split = (0..self.n_steps())
            .map(|t| match t {
                t if t < train_end => Split::Train,
                t if t < val_end => Split::Val,
                _ => Split::Test,
            })
            .collect();
        Ok(self)
    }

    /// Half-open row range of a split, if present.
    pub fn split_range(&self, which: Split) -> Option<std::ops::Range<usize>> {
        let start = self.split.iter().position(|s| *s == which)?;
        let end = self.split.iter().rposition(|s| *s == which)? + 1;
        Some(start..end)
    }
}

pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<TimeSeriesDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, label_column)
}

pub fn parse_csv(text: &str, label_column: Option<&str>) -> Result<TimeSeriesDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let label_idx = match label_column {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Data(format!("label column `{name}` not found")))?,
        ),
        None => None,
    };
    let sensor_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != label_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut values = Vec::new();
    let mut labels = label_idx.map(|_| Vec::new());
    for (r, record) in reader.records().enumerate() {
        // header is row 1 in file terms
        let row = r + 2;
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row,
                column: record.len() + 1,
                message: format!("expected {} fields, got {}", headers.len(), record.len()),
            });
        }
        let mut vals = Vec::with_capacity(sensor_names.len());
        for (c, field) in record.iter().enumerate() {
            let column = c + 1;
            if Some(c) == label_idx {
                let label = match field {
                    "0" => 0,
                    "1" => 1,
                    other => {
                        return Err(Error::Parse {
                            row,
                            column,
                            message: format!("label must be 0 or 1, got `{other}`"),
                        })
                    }
                };
                if let Some(l) = labels.as_mut() {
                    l.push(label);
                }
            } else {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    row,
                    column,
                    message: format!("not a number: `{field}`"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row,
                        column,
                        message: "non-finite value".into(),
                    });
                }
                vals.push(v);
            }
        }
        values.push(vals);
    }
    TimeSeriesDataset::new(sensor_names, values, labels)
}

/// CSV text with sensor columns plus a trailing `label` column when labels exist.
pub fn to_csv(ds: &TimeSeriesDataset) -> String {
    let mut out = ds.sensor_names.join(",");
    if ds.labels.is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for (t, row) in ds.values.iter().enumerate() {
        let mut fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        if let Some(l) = &ds.labels {
            fields.push(l[t].to_string());
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Per-sensor min/max from the train split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationStats {
    pub fn fit(ds: &TimeSeriesDataset) -> Result<Self> {
        let n = ds.n_sensors();
        let mut min = vec![f64::INFINITY; n];
        let mut max = vec![f64::NEG_INFINITY; n];
        let mut seen = false;
        for (row, split) in ds.values.iter().zip(&ds.split) {
            if *split != Split::Train {
                continue;
            }
            seen = true;
            for (i, v) in row.iter().enumerate() {
                min[i] = min[i].min(*v);
                max[i] = max[i].max(*v);
            }
        }
        if !seen {
            return Err(Error::Data("train split is empty".into()));
        }
        Ok(NormalizationStats { min, max })
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(i, v)| {
                let range = self.max[i] - self.min[i];
                if range > 0.0 {
                    (v - self.min[i]) / range
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Min-max scales every row with train-split statistics. No clamping.
pub fn normalize(ds: &TimeSeriesDataset) -> Result<(TimeSeriesDataset, NormalizationStats)> {
    let stats = NormalizationStats::fit(ds)?;
    let mut out = ds.clone();
    out.values = ds.values.iter().map(|r| stats.apply_row(r)).collect();
    Ok((out, stats))
}

/// One sliding window: rows `[target_time - d, target_time)` and row `target_time`.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    /// `d x N`, oldest row first.
    pub x: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    pub target_time: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WindowBatch {
    pub windows: Vec<Window>,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Stacks selected windows into `([B, d, N], [B, N])` tensors.
    pub fn tensors(&self, idx: &[usize]) -> Result<(Tensor, Tensor)> {
        let first = self
            .windows
            .first()
            .ok_or_else(|| Error::Data("empty window batch".into()))?;
        let (d, n) = (first.x.len(), first.target.len());
        let mut xs = Vec::with_capacity(idx.len() * d * n);
        let mut ys = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            let w = &self.windows[i];
            xs.extend(w.x.iter().flatten());
            ys.extend(&w.target);
        }
        Ok((
            Tensor::new(vec![idx.len(), d, n], xs)?,
            Tensor::new(vec![idx.len(), n], ys)?,
        ))
    }
}

/// Windows whose rows and target all fall in `range`, stride 1.
pub fn windows_in(values: &[Vec<f64>], range: std::ops::Range<usize>, d: usize) -> Result<WindowBatch> {
    if d == 0 {
        return Err(Error::InvalidArgument("window length must be positive".into()));
    }
    if range.len() <= d {
        return Err(Error::Data(format!(
            "split of {} rows is too short for window length {d}",
            range.len()
        )));
    }
    let windows = (range.start + d..range.end)
        .map(|t| Window {
            x: values[t - d..t].to_vec(),
            target: values[t].clone(),
            target_time: t,
        })
        .collect();
    Ok(WindowBatch { windows })
}

/// Sliding windows for one split; targets never cross the split boundary.
pub fn make_windows(ds: &TimeSeriesDataset, which: Split, d: usize) -> Result<WindowBatch> {
    let range = ds
        .split_range(which)
        .ok_or_else(|| Error::Data(format!("split {which:?} is empty")))?;
    windows_in(&ds.values, range, d)
}

/// Knobs for the synthetic benchmark beyond the four required arguments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_sensors: usize,
    pub n_steps: usize,
    pub anomaly_rate: f64,
    pub seed: u64,
    /// Sinusoid period in steps.
    pub period: f64,
    pub amplitude: f64,
    pub noise_sigma: f64,
    /// Weight of sensor `i-1` at lag 1 added to sensor `i`.
    pub coupling: f64,
    /// Fraction of the series, counted from the end, where anomalies go.
    pub anomaly_region: f64,
}

impl SynthSpec {
    pub fn new(n_sensors: usize, n_steps: usize, anomaly_rate: f64, seed: u64) -> Self {
        SynthSpec {
            n_sensors,
            n_steps,
            anomaly_rate,
            seed,
            period: 40.0,
            amplitude: 1.0,
            noise_sigma: 0.05,
            coupling: 0.4,
            anomaly_region: 0.2,
        }
    }
}

pub fn synth_generate(n_sensors: usize, n_steps: usize, anomaly_rate: f64, seed: u64) -> Result<TimeSeriesDataset> {
    synth_generate_with(&SynthSpec::new(n_sensors, n_steps, anomaly_rate, seed))
}

/// Coupled phase-shifted sinusoids with injected level-shift segments.
pub fn synth_generate_with(spec: &SynthSpec) -> Result<TimeSeriesDataset> {
    let SynthSpec {
        n_sensors: n,
        n_steps: t_len,
        anomaly_rate,
        ..
    } = *spec;
    if n < 2 {
        return Err(Error::InvalidArgument("synthetic data needs at least 2 sensors".into()));
    }
    if !(anomaly_rate > 0.0 && anomaly_rate < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "anomaly rate must lie in (0, 0.5), got {anomaly_rate}"
        )));
    }
    if !(spec.anomaly_region > 0.0 && spec.anomaly_region <= 1.0) {
        return Err(Error::InvalidArgument("anomaly region must lie in (0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidArgument(format!("noise sigma: {e}")))?;

    let phases: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let omega = 2.0 * PI / spec.period;
    let mut values = vec![vec![0.0; n]; t_len];
    for t in 0..t_len {
        for i in 0..n {
            let mut v = spec.amplitude * (omega * t as f64 + phases[i]).sin() + noise.sample(&mut rng);
            if i > 0 && t > 0 {
                v += spec.coupling * values[t - 1][i - 1];
            }
            values[t][i] = v;
        }
    }

    let target = (anomaly_rate * t_len as f64).round() as usize;
    let region_len = ((spec.anomaly_region * t_len as f64).round() as usize)
        .max(target * 3)
        .min(t_len);
    let region_start = t_len - region_len;
    let mut labels = vec![0u8; t_len];
    let mut labeled = 0usize;
    let mut attempts = 0;
    while labeled < target && attempts < 10_000 {
        attempts += 1;
        let remaining = target - labeled;
        let len = rng.random_range(5..=20usize).min(remaining.max(5));
        if len > region_len {
            break;
        }
        let start = region_start + rng.random_range(0..=region_len - len);
        // keep one normal row between segments
        let lo = start.saturating_sub(1);
        let hi = (start + len + 1).min(t_len);
        if labels[lo..hi].contains(&1) {
            continue;
        }
        let n_affected = rng.random_range(1..=3usize.min(n));
        let mut sensors: Vec<usize> = (0..n).collect();
        for k in 0..n_affected {
            let j = rng.random_range(k..n);
            sensors.swap(k, j);
        }
        for &s in &sensors[..n_affected] {
            let magnitude = (rng.random_range(0.5..=1.5) * spec.amplitude).max(3.0 * spec.noise_sigma);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            for row in &mut values[start..start + len] {
                row[s] += sign * magnitude;
            }
        }
        labels[start..start + len].iter_mut().for_each(|l| *l = 1);
        labeled += len;
    }

    let names = (0..n).map(|i| format!("s{i}")).collect();
    TimeSeriesDataset::new(names, values, Some(labels))
}
