//! Slide ingestion, tissue detection, patch streaming and stitching.
//!
//! A [`SlideImage`] is a read-only pyramid. Level 0 is the full-resolution
//! scan; each further level is a coarser copy with a larger downsample factor.
//! Pixel data for a level is decoded on first access and shared afterwards, so
//! a slide may be read from many worker threads at once.

mod patches;
mod stitch;
mod tiff_io;
mod tissue;

pub use patches::{extract_patches, plan_patches, Patch, PatchParams, PatchRegion};
pub use stitch::{discard_cut_instances, stitch, PatchOrigin};
pub use tiff_io::write_pyramidal_tiff;
pub use tissue::{tissue_mask, TissueParams};

pub use crate::mask::BinaryMask;

use image::RgbImage;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SlideError {
    #[error("cannot read slide {path}: {reason}")]
    UnreadableFile { path: PathBuf, reason: String },
    #[error("unsupported slide format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt pyramid: {0}")]
    CorruptPyramid(String),
    #[error("level {level} out of range (slide has {count} levels)")]
    LevelOutOfRange { level: usize, count: usize },
    #[error("tissue mask yields no patches")]
    EmptyTissueMask,
    #[error("invalid patch parameters: {0}")]
    InvalidParams(String),
    #[error("mask frame does not match slide: {0}")]
    MaskFrameMismatch(String),
}

/// Geometry of one pyramid level.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LevelInfo {
    pub width: u32,
    pub height: u32,
    pub downsample: f64,
}

#[derive(Debug)]
enum Source {
    Memory,
    Png(PathBuf),
    Tiff { path: PathBuf, ifds: Vec<usize> },
}

#[derive(Debug)]
pub struct SlideImage {
    levels: Vec<LevelInfo>,
    mpp: Option<f64>,
    source: Source,
    cache: Vec<OnceLock<Arc<RgbImage>>>,
}

/// Maximum disagreement, in pixels, between a level's size and `level0 / downsample`.
const PYRAMID_TOLERANCE_PX: f64 = 1.0;

pub(crate) fn validate_pyramid(levels: &[LevelInfo]) -> Result<(), SlideError> {
    let Some(base) = levels.first() else {
        return Err(SlideError::CorruptPyramid("no levels".into()));
    };
    if base.downsample != 1.0 {
        return Err(SlideError::CorruptPyramid(format!(
            "level 0 downsample is {}, expected 1",
            base.downsample
        )));
    }
    for (i, pair) in levels.windows(2).enumerate() {
        let (prev, cur) = (pair[0], pair[1]);
        if !(cur.downsample > prev.downsample) {
            return Err(SlideError::CorruptPyramid(format!(
                "downsample of level {} ({}) does not exceed level {} ({})",
                i + 1,
                cur.downsample,
                i,
                prev.downsample
            )));
        }
    }
    for (i, l) in levels.iter().enumerate().skip(1) {
        let ew = base.width as f64 / l.downsample;
        let eh = base.height as f64 / l.downsample;
        if (ew - l.width as f64).abs() > PYRAMID_TOLERANCE_PX || (eh - l.height as f64).abs() > PYRAMID_TOLERANCE_PX {
            return Err(SlideError::CorruptPyramid(format!(
                "level {i} is {}x{} but downsample {} implies {:.1}x{:.1}",
                l.width, l.height, l.downsample, ew, eh
            )));
        }
    }
    Ok(())
}

impl SlideImage {
    /// Single-level slide backed by an in-memory image.
    pub fn from_rgb(image: RgbImage) -> Self {
        Self::from_levels(vec![(image, 1.0)]).expect("single level is always a valid pyramid")
    }

    /// Pyramid from explicit `(pixels, downsample)` pairs, level 0 first.
    pub fn from_levels(levels: Vec<(RgbImage, f64)>) -> Result<Self, SlideError> {
        let info: Vec<LevelInfo> = levels
            .iter()
            .map(|(img, ds)| LevelInfo {
                width: img.width(),
                height: img.height(),
                downsample: *ds,
            })
            .collect();
        validate_pyramid(&info)?;
        let cache = levels
            .into_iter()
            .map(|(img, _)| {
                let cell = OnceLock::new();
                let _ = cell.set(Arc::new(img));
                cell
            })
            .collect();
        Ok(Self {
            levels: info,
            mpp: None,
            source: Source::Memory,
            cache,
        })
    }

    /// Builds a pyramid from a base image by box-averaging at each integer factor.
    pub fn pyramid(base: RgbImage, factors: &[u32]) -> Result<Self, SlideError> {
        let mut levels = Vec::with_capacity(factors.len() + 1);
        for &f in factors {
            levels.push((box_downsample(&base, f), f as f64));
        }
        levels.insert(0, (base, 1.0));
        Self::from_levels(levels)
    }

    pub fn with_mpp(mut self, mpp: Option<f64>) -> Self {
        self.mpp = mpp;
        self
    }

    pub fn levels(&self) -> &[LevelInfo] {
        &self.levels
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, level: usize) -> Result<LevelInfo, SlideError> {
        self.levels.get(level).copied().ok_or(SlideError::LevelOutOfRange {
            level,
            count: self.levels.len(),
        })
    }

    /// Microns per pixel at level 0, when known.
    pub fn mpp(&self) -> Option<f64> {
        self.mpp
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.levels[0].width, self.levels[0].height)
    }

    /// Full pixel raster of one level. Decodes on first use.
    pub fn level_image(&self, level: usize) -> Result<Arc<RgbImage>, SlideError> {
        let info = self.level(level)?;
        if let Some(img) = self.cache[level].get() {
            return Ok(img.clone());
        }
        let img = match &self.source {
            Source::Memory => unreachable!("in-memory levels are populated at construction"),
            Source::Png(path) => read_png_rgb(path)?,
            Source::Tiff { path, ifds } => tiff_io::read_level(path, ifds[level])?,
        };
        if img.dimensions() != (info.width, info.height) {
            return Err(SlideError::CorruptPyramid(format!(
                "level {level} decoded as {:?}, header says {}x{}",
                img.dimensions(),
                info.width,
                info.height
            )));
        }
        let _ = self.cache[level].set(Arc::new(img));
        Ok(self.cache[level].get().expect("just set").clone())
    }

    /// Copies a rectangle out of one level. The rectangle must lie inside the level.
    pub fn read_region(&self, level: usize, x: u32, y: u32, w: u32, h: u32) -> Result<RgbImage, SlideError> {
        let info = self.level(level)?;
        if x + w > info.width || y + h > info.height {
            return Err(SlideError::InvalidParams(format!(
                "region {x},{y} {w}x{h} exceeds level {level} ({}x{})",
                info.width, info.height
            )));
        }
        let img = self.level_image(level)?;
        Ok(image::imageops::crop_imm(img.as_ref(), x, y, w, h).to_image())
    }
}

fn box_downsample(base: &RgbImage, factor: u32) -> RgbImage {
    let w = (base.width() / factor).max(1);
    let h = (base.height() / factor).max(1);
    RgbImage::from_fn(w, h, |x, y| {
        let mut acc = [0u32; 3];
        let mut n = 0;
        for dy in 0..factor {
            for dx in 0..factor {
                let (sx, sy) = (x * factor + dx, y * factor + dy);
                if sx < base.width() && sy < base.height() {
                    let p = base.get_pixel(sx, sy).0;
                    for c in 0..3 {
                        acc[c] += p[c] as u32;
                    }
                    n += 1;
                }
            }
        }
        image::Rgb([0, 1, 2].map(|c| ((acc[c] + n / 2) / n) as u8))
    })
}

fn read_png_rgb(path: &Path) -> Result<RgbImage, SlideError> {
    let img = image::open(path).map_err(|e| SlideError::UnreadableFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(img.to_rgb8())
}

/// Opens a slide from disk. Plain PNGs become single-level slides; TIFFs are
/// read as one level per image directory.
pub fn open_slide(path: impl AsRef<Path>) -> Result<SlideImage, SlideError> {
    let path = path.as_ref();
    let unreadable = |e: std::io::Error| SlideError::UnreadableFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut magic = [0u8; 8];
    let mut f = File::open(path).map_err(unreadable)?;
    let n = f.read(&mut magic).map_err(unreadable)?;
    let magic = &magic[..n];
    if magic.starts_with(b"\x89PNG\r\n\x1a\n") {
        let (w, h) = image::image_dimensions(path).map_err(|e| SlideError::UnreadableFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(SlideImage {
            levels: vec![LevelInfo {
                width: w,
                height: h,
                downsample: 1.0,
            }],
            mpp: None,
            source: Source::Png(path.to_path_buf()),
            cache: vec![OnceLock::new()],
        })
    } else if magic.starts_with(b"II*\0") || magic.starts_with(b"MM\0*") {
        let header = tiff_io::read_header(path)?;
        validate_pyramid(&header.levels)?;
        let count = header.levels.len();
        Ok(SlideImage {
            levels: header.levels,
            mpp: header.mpp,
            source: Source::Tiff {
                path: path.to_path_buf(),
                ifds: header.ifds,
            },
            cache: (0..count).map(|_| OnceLock::new()).collect(),
        })
    } else {
        Err(SlideError::UnsupportedFormat(format!(
            "{} is neither PNG nor TIFF",
            path.display()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn in_memory_pyramid_levels() {
        let base = RgbImage::from_pixel(64, 48, image::Rgb([10, 20, 30]));
        let s = SlideImage::pyramid(base, &[4]).unwrap();
        assert_eq!(
            s.levels()[1],
            LevelInfo {
                width: 16,
                height: 12,
                downsample: 4.0
            }
        );
        assert_eq!(s.level_image(1).unwrap().get_pixel(3, 3).0, [10, 20, 30]);
    }

    #[test]
    fn pyramid_order_is_enforced() {
        let a = RgbImage::new(32, 32);
        let b = RgbImage::new(16, 16);
        let err = SlideImage::from_levels(vec![(a, 1.0), (b.clone(), 2.0), (b, 2.0)]).unwrap_err();
        assert!(matches!(err, SlideError::CorruptPyramid(_)));
    }

    #[test]
    fn inconsistent_level_size_is_corrupt() {
        let a = RgbImage::new(100, 100);
        let b = RgbImage::new(30, 25);
        assert!(matches!(
            SlideImage::from_levels(vec![(a, 1.0), (b, 4.0)]),
            Err(SlideError::CorruptPyramid(_))
        ));
    }

    #[test]
    fn level_out_of_range() {
        let s = SlideImage::from_rgb(RgbImage::new(4, 4));
        assert!(matches!(s.level(3), Err(SlideError::LevelOutOfRange { level: 3, count: 1 })));
    }

    #[test]
    fn unknown_magic_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        std::fs::write(&p, b"GIF89a....").unwrap();
        assert!(matches!(open_slide(&p), Err(SlideError::UnsupportedFormat(_))));
        assert!(matches!(
            open_slide(dir.path().join("missing.tiff")),
            Err(SlideError::UnreadableFile { .. })
        ));
    }
}
