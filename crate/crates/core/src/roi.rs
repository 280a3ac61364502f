//! Tumour-region masks and restriction of nuclei to them.
//!
//! A mask file is either a binary PNG with a `<file>.json` sidecar carrying
//! `{"level": L, "downsample": D}`, or an RLE JSON document
//!
//! ```text
//! { "width": W, "height": H, "level": L, "downsample": D,
//!   "runs": [[start, len], ...] }      // row-major linear offsets
//! ```
//!
//! `downsample` may be omitted only at level 0.

use crate::mask::BinaryMask;
use crate::metrics::{binary_pixel_metrics, BinaryMetrics};
use crate::nuclei::NucleusInstance;
use crate::slideio::SlideImage;
use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RoiError {
    #[error("cannot read mask {path}: {reason}")]
    UnreadableMask { path: PathBuf, reason: String },
    #[error("mask {path} has no frame: {reason}")]
    FrameMissing { path: PathBuf, reason: String },
    #[error("mask dimensions differ: {0}")]
    DimensionMismatch(String),
    #[error("cannot write mask {path}: {reason}")]
    Write { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoiProvenance {
    External,
    TissueFallback,
    FullSlide,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiMask {
    pub mask: BinaryMask,
    /// Level-0 pixels per mask pixel.
    pub downsample: f64,
    pub provenance: RoiProvenance,
}

impl RoiMask {
    pub fn new(mask: BinaryMask, downsample: f64, provenance: RoiProvenance) -> Self {
        Self {
            mask,
            downsample,
            provenance,
        }
    }

    pub fn full_slide(slide: &SlideImage) -> Self {
        let (w, h) = slide.dimensions();
        Self::new(BinaryMask::full(w, h, 0), 1.0, RoiProvenance::FullSlide)
    }

    pub fn level(&self) -> usize {
        self.mask.level()
    }

    /// Membership of a level-0 point.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        if !(x >= 0.0 && y >= 0.0) {
            return false;
        }
        let mx = (x / self.downsample).floor();
        let my = (y / self.downsample).floor();
        mx < self.mask.width() as f64 && my < self.mask.height() as f64 && self.mask.get(mx as u32, my as u32)
    }

    /// Writes a binary PNG (255 = inside) plus its frame sidecar.
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<(), RoiError> {
        let path = path.as_ref();
        let werr = |e: &dyn std::fmt::Display| RoiError::Write {
            path: path.to_path_buf(),
            reason: e.to_string(),
        };
        let mut img = GrayImage::new(self.mask.width(), self.mask.height());
        for (x, y) in self.mask.iter_set() {
            img.put_pixel(x, y, Luma([255]));
        }
        img.save(path).map_err(|e| werr(&e))?;
        let side = Sidecar {
            level: Some(self.level()),
            downsample: Some(self.downsample),
        };
        let text = serde_json::to_string_pretty(&side).map_err(|e| werr(&e))?;
        std::fs::write(sidecar_path(path), text + "\n").map_err(|e| werr(&e))
    }

    pub fn write_rle_json(&self, path: impl AsRef<Path>) -> Result<(), RoiError> {
        let path = path.as_ref();
        let doc = RleDoc {
            width: self.mask.width(),
            height: self.mask.height(),
            level: Some(self.level()),
            downsample: Some(self.downsample),
            runs: self.mask.to_linear_runs().into_iter().map(|(s, l)| [s, l]).collect(),
        };
        let text = serde_json::to_string(&doc).map_err(|e| RoiError::Write {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        std::fs::write(path, text + "\n").map_err(|e| RoiError::Write {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    level: Option<usize>,
    downsample: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RleDoc {
    width: u32,
    height: u32,
    level: Option<usize>,
    downsample: Option<f64>,
    runs: Vec<[u64; 2]>,
}

pub fn sidecar_path(png: &Path) -> PathBuf {
    let mut s = png.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn resolve_frame(path: &Path, level: Option<usize>, downsample: Option<f64>) -> Result<(usize, f64), RoiError> {
    let missing = |reason: &str| RoiError::FrameMissing {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let level = level.ok_or_else(|| missing("no level declared"))?;
    let ds = match downsample {
        Some(d) if d.is_finite() && d >= 1.0 => d,
        Some(d) => return Err(missing(&format!("downsample {d} is not >= 1"))),
        None if level == 0 => 1.0,
        None => return Err(missing("level > 0 needs a downsample")),
    };
    Ok((level, ds))
}

/// Loads an externally produced ROI mask.
pub fn import_roi(path: impl AsRef<Path>) -> Result<RoiMask, RoiError> {
    let path = path.as_ref();
    let unreadable = |reason: String| RoiError::UnreadableMask {
        path: path.to_path_buf(),
        reason,
    };
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let text = std::fs::read_to_string(path).map_err(|e| unreadable(e.to_string()))?;
        let doc: RleDoc = serde_json::from_str(&text).map_err(|e| unreadable(e.to_string()))?;
        let (level, ds) = resolve_frame(path, doc.level, doc.downsample)?;
        let runs: Vec<(u64, u64)> = doc.runs.iter().map(|r| (r[0], r[1])).collect();
        let mask = BinaryMask::from_linear_runs(doc.width, doc.height, level, &runs)
            .ok_or_else(|| unreadable(format!("runs exceed {}x{}", doc.width, doc.height)))?;
        return Ok(RoiMask::new(mask, ds, RoiProvenance::External));
    }
    let side = sidecar_path(path);
    let side: Sidecar = match std::fs::read_to_string(&side) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| unreadable(format!("bad sidecar: {e}")))?,
        Err(_) => {
            return Err(RoiError::FrameMissing {
                path: path.to_path_buf(),
                reason: format!("sidecar {} not found", side.display()),
            })
        }
    };
    let (level, ds) = resolve_frame(path, side.level, side.downsample)?;
    let img = image::ImageReader::open(path)
        .map_err(|e| unreadable(e.to_string()))?
        .decode()
        .map_err(|e| unreadable(e.to_string()))?
        .to_luma8();
    let mask = BinaryMask::from_fn(img.width(), img.height(), level, |x, y| img.get_pixel(x, y).0[0] != 0);
    Ok(RoiMask::new(mask, ds, RoiProvenance::External))
}

/// Keeps instances whose level-0 centroid falls on a set ROI pixel.
pub fn mask_instances(instances: Vec<NucleusInstance>, roi: &RoiMask) -> Vec<NucleusInstance> {
    instances
        .into_iter()
        .filter(|n| roi.contains_point(n.centroid.0, n.centroid.1))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiOverlapReport {
    pub tumor: BinaryMetrics,
    pub others: BinaryMetrics,
}

/// Pixelwise comparison, tumour class on the masks and "others" on their
/// complements.
pub fn roi_overlap_report(predicted: &RoiMask, ground_truth: &RoiMask) -> Result<RoiOverlapReport, RoiError> {
    let (p, g) = (&predicted.mask, &ground_truth.mask);
    if !p.same_shape(g) || p.level() != g.level() || (predicted.downsample - ground_truth.downsample).abs() > 1e-9 {
        return Err(RoiError::DimensionMismatch(format!(
            "{}x{}@L{} ds {} vs {}x{}@L{} ds {}",
            p.width(),
            p.height(),
            p.level(),
            predicted.downsample,
            g.width(),
            g.height(),
            g.level(),
            ground_truth.downsample
        )));
    }
    let mm = |e: crate::metrics::MetricsError| RoiError::DimensionMismatch(e.to_string());
    Ok(RoiOverlapReport {
        tumor: binary_pixel_metrics(p, g).map_err(mm)?,
        others: binary_pixel_metrics(&p.not(), &g.not()).map_err(mm)?,
    })
}
