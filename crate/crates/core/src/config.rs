// SPDX-License-Identifier: Apache-2.0

//! Pipeline configuration.
//!
//! Every section has defaults, so `{"scene_dir": "scene", "out_dir": "out"}`
//! is a complete config. Unknown keys are rejected at every level. Stage
//! seeds inside the nested sections are ignored by the pipeline, which
//! derives them from the top-level `seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deformation::{FieldArchitecture, TrainConfig};
use crate::ego_motion::{RansacConfig, DEFAULT_TAU_DYN};
use crate::flow_lift::LiftConfig;
use crate::io::{self, IoError};
use crate::scale::ScaleConfig;
use crate::segmentation::SegmentConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{0} does not exist")]
    MissingPath(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Scene directory as written by `simulate`.
    pub scene_dir: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ransac: RansacConfig,
    /// Dynamic threshold on the compensated radial velocity, m/s.
    #[serde(default = "default_tau_dyn")]
    pub tau_dyn: f64,
    #[serde(default)]
    pub segment: SegmentConfig,
    #[serde(default)]
    pub scale: ScaleConfig,
    #[serde(default)]
    pub lift: LiftConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub architecture: FieldArchitecture,
    /// Score against the scene's ground truth when `scene.json` is present.
    #[serde(default = "yes")]
    pub evaluate: bool,
}

fn default_tau_dyn() -> f64 {
    DEFAULT_TAU_DYN
}

fn yes() -> bool {
    true
}

impl PipelineConfig {
    pub fn new(scene_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            scene_dir: scene_dir.into(),
            out_dir: out_dir.into(),
            seed: 0,
            ransac: RansacConfig::default(),
            tau_dyn: DEFAULT_TAU_DYN,
            segment: SegmentConfig::default(),
            scale: ScaleConfig::default(),
            lift: LiftConfig::default(),
            train: TrainConfig::default(),
            architecture: FieldArchitecture::default(),
            evaluate: true,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let cfg: Self = io::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parameter checks only; paths are checked when the pipeline runs.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.ransac.validate().map_err(|e| invalid(&e))?;
        self.segment.validate().map_err(|e| invalid(&e))?;
        self.scale.validate().map_err(|e| invalid(&e))?;
        self.train.validate().map_err(|e| invalid(&e))?;
        if !(self.tau_dyn > 0.0) {
            return Err(ConfigError::Invalid("tau_dyn must be positive".into()));
        }
        if !(self.lift.max_association_distance > 0.0 && self.lift.max_speed > 0.0) {
            return Err(ConfigError::Invalid(
                "lift.max_association_distance and lift.max_speed must be positive".into(),
            ));
        }
        let a = &self.architecture;
        if a.num_layers == 0 || a.hidden == 0 || !(a.log_scale_bound > 0.0) {
            return Err(ConfigError::Invalid(
                "architecture needs layers, hidden units and a positive scale bound".into(),
            ));
        }
        Ok(())
    }

    /// Canonical JSON bytes, the input of the manifest's config hash.
    pub fn canonical_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("config serialises")
    }
}
