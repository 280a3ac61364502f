//! Run configuration, read from TOML and overridden by command-line flags.
//!
//! ```toml
//! workers = 4
//! seed = 7
//!
//! [pipeline]
//! detect_level = 0
//! dedup_iou = 0.5
//! [pipeline.stain]
//! delta_u = 0.3
//! delta_sl = 0.35
//! delta_su = 0.65
//! [pipeline.score.post]
//! enabled = true
//! eps_px = 100.0
//! min_size = 6
//! mode = "stained-only"
//!
//! [her2]
//! cv_folds = 5
//! aggregation = "pooled"
//! [her2.forest]
//! n_trees = 100
//! ```
//!
//! Every table accepts only its documented keys.

use crate::error::{CliError, CliResult};
use ihc_core::her2::{FeatureConfig, ForestConfig, SlideAggregation};
use ihc_core::pipeline::{sha256_hex, PipelineConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Her2Settings {
    pub features: FeatureConfig,
    pub forest: ForestConfig,
    pub cv_folds: usize,
    pub aggregation: SlideAggregation,
}

impl Default for Her2Settings {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            forest: ForestConfig::default(),
            cv_folds: 5,
            aggregation: SlideAggregation::Pooled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub workers: usize,
    pub seed: u64,
    pub pipeline: PipelineConfig,
    pub her2: Her2Settings,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            workers: 1,
            seed: 0,
            pipeline: PipelineConfig::default(),
            her2: Her2Settings::default(),
        }
    }
}

impl CliConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::ConfigInvalid(e.to_string().trim().to_string()))
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                Self::parse(&text)
            }
        }
    }

    /// Applies `--workers` and `--seed`; the seed also drives the forest.
    pub fn with_overrides(mut self, workers: Option<usize>, seed: Option<u64>) -> Self {
        if let Some(w) = workers {
            self.workers = w;
        }
        if let Some(s) = seed {
            self.seed = s;
            self.her2.forest.seed = s;
        }
        self.workers = self.workers.max(1);
        self
    }

    /// Hash of everything that can change outputs. Worker count is excluded
    /// because results do not depend on it.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        if let Some(o) = v.as_object_mut() {
            o.remove("workers");
        }
        sha256_hex(v.to_string().as_bytes())
    }
}
