//! Self-describing JSON checkpoints and atomic file output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::NormalizationStats;
use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::numgrad::ParamStore;
use crate::scoring::RobustStats;

pub const FORMAT: &str = "mgadn-checkpoint";
pub const VERSION: u32 = 1;

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
/// A failure leaves no file at `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map_or_else(|| "out".into(), |n| n.to_string_lossy().into_owned());
    path.with_file_name(format!(".{name}.{}.tmp", std::process::id()))
}

/// Everything needed to score new data without retraining.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// The run configuration, echoed for provenance.
    pub config: RunConfig,
    pub model: ModelConfig,
    pub params: ParamStore,
    pub normalization: NormalizationStats,
    pub sensor_names: Vec<String>,
    pub robust: RobustStats,
    pub threshold: f64,
    pub seed: u64,
}

/// Only the gating fields, read before the full payload.
#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
}

impl Checkpoint {
    pub fn new(config: RunConfig, detector: &Detector, sensor_names: Vec<String>) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            seed: config.seed,
            config,
            model: detector.model.config.clone(),
            params: detector.model.params.clone(),
            normalization: detector.normalization.clone(),
            sensor_names,
            robust: detector.robust.clone(),
            threshold: detector.threshold,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let header: Header = serde_json::from_str(text)?;
        if header.format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "not a checkpoint (format `{}`)",
                header.format
            )));
        }
        if header.version > VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {} is newer than supported version {VERSION}",
                header.version
            )));
        }
        let ck: Checkpoint = serde_json::from_str(text)?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn validate(&self) -> Result<()> {
        let n = self.model.n_sensors;
        if self.sensor_names.len() != n || self.normalization.min.len() != n || self.normalization.max.len() != n {
            return Err(Error::Checkpoint(format!("sensor count disagrees with model size {n}")));
        }
        if !self.threshold.is_finite() {
            return Err(Error::Checkpoint("threshold is not finite".into()));
        }
        Ok(())
    }

    pub fn detector(&self) -> Result<Detector> {
        Ok(Detector {
            model: Model::from_parts(self.model.clone(), self.params.clone())?,
            normalization: self.normalization.clone(),
            robust: self.robust.clone(),
            threshold: self.threshold,
        })
    }
}
