//! Whole-slide immunohistochemistry quantification.
//!
//! Slides are tiled into patches, nuclei are detected or imported per patch
//! and graded by stain colour, patch results are stitched into slide
//! coordinates, restricted to the tumour region, cleaned of isolated false
//! positives and finally turned into Allred, Ki67 or HER2 scores.

pub mod her2;
pub mod mask;
pub mod metrics;
pub mod nuclei;
pub mod pipeline;
pub mod post;
pub mod roi;
pub mod score;
pub mod slideio;
pub mod stain;
pub mod synth;

use serde::{Deserialize, Serialize};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// IHC biomarker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Marker {
    Er,
    Pr,
    Ki67,
    Her2,
}

impl Marker {
    pub fn name(self) -> &'static str {
        match self {
            Marker::Er => "er",
            Marker::Pr => "pr",
            Marker::Ki67 => "ki67",
            Marker::Her2 => "her2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.trim().to_ascii_lowercase().as_str() {
            "er" => Marker::Er,
            "pr" => Marker::Pr,
            "ki67" => Marker::Ki67,
            "her2" => Marker::Her2,
            _ => return None,
        })
    }
}

impl std::fmt::Display for Marker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
