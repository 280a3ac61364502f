//! Nucleus instances: detection, ingestion of external masks and matching
//! against ground truth.

mod detect;
mod edt;
mod io;
mod report;

pub(crate) use detect::detect_in_pixels;
pub use detect::{detect_nuclei_baseline, nuclear_candidate_map, DetectorConfig};
pub use edt::squared_distance_transform;
pub use io::{
    import_instances, read_instances_json, write_instances_json, write_label_png, InstanceFile, InstanceRecord,
    INSTANCE_SCHEMA, INSTANCE_SCHEMA_VERSION,
};
pub use report::{detection_report, f1_score, DetectionReport};

use crate::mask::PixelRuns;
use crate::stain::StainClass;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

/// Coordinate frame of an instance mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    /// Pixels of the patch the instance was detected in.
    Patch,
    /// Level-0 slide pixels.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NucleusInstance {
    pub id: u64,
    pub frame: Frame,
    pub mask: PixelRuns,
    /// Mean pixel position `(x, y)`.
    pub centroid: (f64, f64),
    pub area_px: u64,
    pub stain: Option<StainClass>,
    pub patch_of_origin: Option<usize>,
}

impl NucleusInstance {
    /// Builds an instance from its mask, deriving centroid and area. `None` if
    /// the mask is empty.
    pub fn from_mask(id: u64, mask: PixelRuns, frame: Frame) -> Option<Self> {
        let centroid = mask.centroid()?;
        Some(Self {
            id,
            frame,
            area_px: mask.area(),
            mask,
            centroid,
            stain: None,
            patch_of_origin: None,
        })
    }

    pub fn with_stain(mut self, stain: StainClass) -> Self {
        self.stain = Some(stain);
        self
    }

    pub fn is_stained(&self) -> bool {
        self.stain.is_some_and(|s| s.is_stained())
    }
}

#[derive(Debug, Error)]
pub enum NucleiError {
    #[error("cannot read {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },
    #[error("bad label image: {0}")]
    BadLabelImage(String),
    #[error("instance file does not match schema: {0}")]
    SchemaMismatch(String),
    #[error("cannot write {path}: {reason}")]
    Write { path: PathBuf, reason: String },
}
