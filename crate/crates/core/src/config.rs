//! Run configuration: every tunable of every stage, loaded from TOML.
//! Unknown keys are rejected and values are validated on load.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::DEFAULT_Q;
use crate::classifier::TrainConfig;
use crate::error::{Error, Result};
use crate::geometry::DEFAULT_CLIP_LENGTH;
use crate::lk::LkConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Process noise `Q` of the per-coordinate Kalman filter.
    pub q: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig { q: DEFAULT_Q }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClipConfig {
    pub length: usize,
    /// Window stride for evaluation and detection.
    pub stride: usize,
    /// Window stride for the training split; smaller than `length` overlaps clips.
    pub train_stride: usize,
}

impl Default for ClipConfig {
    fn default() -> Self {
        ClipConfig { length: DEFAULT_CLIP_LENGTH, stride: DEFAULT_CLIP_LENGTH, train_stride: DEFAULT_CLIP_LENGTH }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub lk: LkConfig,
    pub calibration: CalibrationConfig,
    pub clips: ClipConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.lk.validate()?;
        self.train.validate()?;
        if !(self.calibration.q > 0.0 && self.calibration.q.is_finite()) {
            return Err(Error::Config("calibration: q must be positive".into()));
        }
        let c = &self.clips;
        if c.length < 2 || c.stride == 0 || c.train_stride == 0 {
            return Err(Error::Config("clips: length must be >= 2 and strides >= 1".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("serializable config")
    }
}
