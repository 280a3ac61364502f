//! Slide-level orchestration: tissue mask, patch detection on a worker pool,
//! stitching, ROI restriction and scoring.

use crate::nuclei::{detect_in_pixels, DetectorConfig, NucleusInstance};
use crate::roi::{RoiMask, RoiProvenance};
use crate::score::{score_slide, ScoreConfig, ScoreError, SlideScore};
use crate::slideio::{
    discard_cut_instances, plan_patches, stitch, tissue_mask, PatchOrigin, PatchParams, SlideError, SlideImage,
    TissueParams,
};
use crate::stain::{classify_mean, mean_cmyk, StainError, StainThresholds};
use crate::Marker;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Slide(#[from] SlideError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Stain(#[from] StainError),
    #[error("invalid pipeline config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Pyramid level nuclei are detected on.
    pub detect_level: usize,
    /// Level for the tissue mask; the coarsest level when unset.
    pub tissue_level: Option<usize>,
    pub tissue: TissueParams,
    pub patches: PatchParams,
    pub detector: DetectorConfig,
    pub stain: StainThresholds,
    /// IoU above which overlapping instances from neighbouring patches merge.
    pub dedup_iou: f64,
    pub score: ScoreConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            detect_level: 0,
            tissue_level: None,
            tissue: TissueParams::default(),
            patches: PatchParams::with_halo(512, 64),
            detector: DetectorConfig::default(),
            stain: StainThresholds::default(),
            dedup_iou: 0.5,
            score: ScoreConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.detector.validate().map_err(PipelineError::Config)?;
        self.stain.validate()?;
        if !(0.0..=1.0).contains(&self.dedup_iou) {
            return Err(PipelineError::Config(format!("dedup_iou {} outside [0,1]", self.dedup_iou)));
        }
        self.score.allred.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serialises").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: impl AsRef<Path>) -> std::io::Result<String> {
    use std::io::Read;
    let mut f = std::fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))
}

fn tissue_level(slide: &SlideImage, cfg: &PipelineConfig) -> usize {
    cfg.tissue_level.unwrap_or(slide.level_count() - 1)
}

/// Detects and grades nuclei over the tissue of `slide`, returning stitched
/// level-0 instances. The result does not depend on `workers`.
pub fn detect_slide(
    slide: &SlideImage,
    marker: Marker,
    cfg: &PipelineConfig,
    workers: usize,
) -> Result<Vec<NucleusInstance>, PipelineError> {
    let tissue = tissue_mask(slide, tissue_level(slide, cfg), &cfg.tissue)?;
    detect_with_tissue(slide, marker, cfg, &tissue, workers)
}

fn detect_with_tissue(
    slide: &SlideImage,
    marker: Marker,
    cfg: &PipelineConfig,
    tissue: &crate::mask::BinaryMask,
    workers: usize,
) -> Result<Vec<NucleusInstance>, PipelineError> {
    cfg.validate()?;
    let regions = plan_patches(slide, cfg.detect_level, &cfg.patches, tissue)?;
    let level = slide.level(cfg.detect_level)?;
    log::info!("{} patches on level {}", regions.len(), cfg.detect_level);
    let per_patch = pool(workers)?.install(|| {
        regions
            .par_iter()
            .map(|region| -> Result<_, PipelineError> {
                let patch = region.read(slide)?;
                let mut found = detect_in_pixels(&patch.pixels, &cfg.detector);
                for n in &mut found {
                    let mean = mean_cmyk(&n.mask, &patch.pixels).ok_or(StainError::EmptyMask)?;
                    n.stain = Some(classify_mean(mean, &cfg.stain, marker));
                    n.patch_of_origin = Some(region.index);
                }
                let kept = discard_cut_instances(found, region, &level);
                Ok((PatchOrigin::from(region), kept))
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(stitch(per_patch, cfg.dedup_iou))
}

/// Grades instances that arrive already segmented, in the level-0 frame.
pub fn classify_instances(
    slide: &SlideImage,
    instances: Vec<NucleusInstance>,
    marker: Marker,
    th: &StainThresholds,
) -> Result<Vec<NucleusInstance>, PipelineError> {
    th.validate()?;
    let img = slide.level_image(0)?;
    instances
        .into_iter()
        .map(|mut n| {
            let mean = mean_cmyk(&n.mask, &img).ok_or(StainError::EmptyMask)?;
            n.stain = Some(classify_mean(mean, th, marker));
            Ok(n)
        })
        .collect()
}

/// The tissue mask as a stand-in ROI, flagged as such.
pub fn tissue_roi(slide: &SlideImage, cfg: &PipelineConfig) -> Result<RoiMask, PipelineError> {
    let tl = tissue_level(slide, cfg);
    let tissue = tissue_mask(slide, tl, &cfg.tissue)?;
    Ok(RoiMask::new(tissue, slide.level(tl)?.downsample, RoiProvenance::TissueFallback))
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub instances: Vec<NucleusInstance>,
    pub score: SlideScore,
}

/// Full slide scoring. Without an external ROI the tissue mask stands in and
/// the score records that provenance.
pub fn run_pipeline(
    slide: &SlideImage,
    roi: Option<RoiMask>,
    marker: Marker,
    cfg: &PipelineConfig,
    workers: usize,
) -> Result<PipelineOutput, PipelineError> {
    let fallback = tissue_roi(slide, cfg)?;
    let instances = detect_with_tissue(slide, marker, cfg, &fallback.mask, workers)?;
    let roi = match roi {
        Some(r) => r,
        None => {
            log::warn!("no tumour ROI supplied; scoring over the tissue mask");
            fallback
        }
    };
    let mut score = score_slide(instances.clone(), &roi, marker, &cfg.score)?;
    score.config_hash = cfg.hash();
    Ok(PipelineOutput { instances, score })
}

/// Scores pre-segmented instances against an ROI.
pub fn score_instances(
    slide: &SlideImage,
    instances: Vec<NucleusInstance>,
    roi: &RoiMask,
    marker: Marker,
    cfg: &PipelineConfig,
) -> Result<SlideScore, PipelineError> {
    let graded = classify_instances(slide, instances, marker, &cfg.stain)?;
    let mut score = score_slide(graded, roi, marker, &cfg.score)?;
    score.config_hash = cfg.hash();
    Ok(score)
}

pub fn score_json(score: &SlideScore) -> String {
    serde_json::to_string_pretty(score).expect("score serialises") + "\n"
}
