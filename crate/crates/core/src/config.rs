//! Tunable parameters and the flat `key = value` configuration file.
//!
//! Keys are `section.field`, for example
//!
//! ```text
//! # detector and filter overrides
//! detector.lane_change_threshold = 0.9
//! filter.association_radius_m = 25
//! confusion.rows = [[0.9,0.02,0.08],[0.02,0.9,0.08],[0.05,0.05,0.9]]
//! cluster.min_pts = 4
//! learn_rounds = 3
//! ```
//!
//! Values are JSON scalars or arrays; `null` clears an optional threshold.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::detect::DetectorConfig;
use crate::error::{Error, Result};
use crate::filter::{FilterConfig, MotionConfusion};
use crate::learn::ClusterParams;
use crate::preprocess::{ReorientConfig, DEFAULT_SNAP_RADIUS_M};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub snap_radius_m: f64,
    pub reorient: ReorientConfig,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            snap_radius_m: DEFAULT_SNAP_RADIUS_M,
            reorient: ReorientConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub preprocess: PreprocessConfig,
    pub detector: DetectorConfig,
    pub filter: FilterConfig,
    pub confusion: MotionConfusion,
    pub cluster: ClusterParams,
    /// Learn/re-estimate passes over a fleet corpus.
    pub learn_rounds: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            preprocess: PreprocessConfig::default(),
            detector: DetectorConfig::default(),
            filter: FilterConfig::default(),
            confusion: MotionConfusion::calibrated(),
            cluster: ClusterParams::default(),
            learn_rounds: 2,
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.cluster.validate()?;
        MotionConfusion::new(self.confusion.rows()).map_err(|e| Error::Config(e.to_string()))?;
        if !(self.filter.association_radius_m > 0.0) || !(self.filter.default_sigma > 0.0) {
            return Err(Error::Config("filter radius and sigma must be positive".into()));
        }
        if !(self.preprocess.snap_radius_m > 0.0) {
            return Err(Error::Config("snap radius must be positive".into()));
        }
        if self.learn_rounds == 0 {
            return Err(Error::Config("learn_rounds must be at least 1".into()));
        }
        Ok(())
    }

    /// Defaults overridden by the `key = value` lines of `text`.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut tree = serde_json::to_value(Config::default()).expect("config serializes");
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let parsed: Value = serde_json::from_str(value)
                .map_err(|_| Error::Config(format!("line {}: cannot parse value {value:?}", i + 1)))?;
            let mut slot = &mut tree;
            for part in key.split('.') {
                slot = slot
                    .get_mut(part)
                    .ok_or_else(|| Error::Config(format!("line {}: unknown key {key:?}", i + 1)))?;
            }
            if slot.is_object() {
                return Err(Error::Config(format!("line {}: {key:?} is a section, not a value", i + 1)));
            }
            *slot = parsed;
        }
        let cfg: Config = serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::from_text("# nothing\n").unwrap(), Config::default());
    }

    #[test]
    fn overrides_apply() {
        let cfg = Config::from_text("detector.lane_change_threshold = 1.1\ncluster.min_pts=4\ndetector.tunnel_var_threshold = 2.5\n").unwrap();
        assert_eq!(cfg.detector.lane_change_threshold, 1.1);
        assert_eq!(cfg.cluster.min_pts, 4);
        assert_eq!(cfg.detector.tunnel_var_threshold, Some(2.5));
    }

    #[test]
    fn unknown_and_malformed_lines_fail() {
        assert!(matches!(Config::from_text("detector.nope = 1"), Err(Error::Config(_))));
        assert!(matches!(Config::from_text("detector = 1"), Err(Error::Config(_))));
        assert!(matches!(Config::from_text("filter.default_sigma 2"), Err(Error::Config(_))));
        assert!(matches!(Config::from_text("filter.default_sigma = -1"), Err(Error::Config(_))));
    }
}
