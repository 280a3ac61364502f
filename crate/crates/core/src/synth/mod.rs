//! Synthetic IHC slides with exact ground truth.
//!
//! Nuclei are flat-coloured disks on pink stroma, so every pixel of a nucleus
//! has the same CMYK value and the intended stain class is known exactly.
//! Stained nuclei are placed in spatial clusters inside the tumour polygon;
//! optional artifacts are isolated light-brown disks next to unstained
//! nuclei that the stain rule grades as lightly stained.

mod her2;

pub use her2::{generate_her2_dataset, generate_her2_region, Her2RegionSpec};

use crate::mask::{BinaryMask, PixelRuns};
use crate::nuclei::{write_label_png, Frame, NucleusInstance};
use crate::roi::{RoiMask, RoiProvenance};
use crate::score::{score_counts, AllredConfig, MarkerScore, StainCounts};
use crate::slideio::{write_pyramidal_tiff, SlideImage};
use crate::stain::{cmyk_to_rgb, CmykPixel, StainClass};
use crate::Marker;
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("could not place {what} after {attempts} attempts")]
    PlacementImpossible { what: String, attempts: usize },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("write {path}: {reason}")]
    Write { path: PathBuf, reason: String },
}

pub const MANIFEST_SCHEMA: &str = "ihc-synth-manifest";
pub const MANIFEST_VERSION: u32 = 1;

pub const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
/// Eosin-pink stroma: low yellow, no cyan, so neither blue nor brown.
pub const STROMA: Rgb<u8> = Rgb([235, 200, 215]);
pub const ARTIFACT: Rgb<u8> = Rgb([225, 170, 120]);

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassCounts {
    pub unstained: usize,
    pub light: usize,
    pub moderate: usize,
    pub dark: usize,
}

impl ClassCounts {
    pub fn stained(&self) -> usize {
        self.light + self.moderate + self.dark
    }

    pub fn total(&self) -> usize {
        self.unstained + self.stained()
    }
}

/// Black-component ranges per class. Stained bands must not overlap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KBands {
    pub unstained: (f64, f64),
    pub light: (f64, f64),
    pub moderate: (f64, f64),
    pub dark: (f64, f64),
}

impl Default for KBands {
    fn default() -> Self {
        Self {
            unstained: (0.15, 0.45),
            light: (0.10, 0.30),
            moderate: (0.40, 0.60),
            dark: (0.70, 0.85),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlideSpec {
    pub width: u32,
    pub height: u32,
    /// White border around the stroma.
    pub tissue_margin: u32,
    /// Tumour polygon in level-0 pixels.
    pub roi_polygon: Vec<(f64, f64)>,
    /// Pyramid downsample factors below level 0; the ROI is rasterised at
    /// the first of them.
    pub pyramid: Vec<u32>,
    pub marker: Marker,
    pub in_roi: ClassCounts,
    pub outside_roi: ClassCounts,
    pub bands: KBands,
    pub radius: (u32, u32),
    /// Minimum free pixels between two disks.
    pub gap_px: u32,
    pub cluster_size: usize,
    /// Centre spacing of consecutive cluster members.
    pub cluster_step: (f64, f64),
    pub artifacts: usize,
    /// Minimum centre distance from an artifact to any stained nucleus or
    /// other artifact.
    pub artifact_clearance: f64,
    pub seed: u64,
}

impl SlideSpec {
    fn base(marker: Marker, seed: u64) -> Self {
        Self {
            width: 1536,
            height: 1536,
            tissue_margin: 48,
            roi_polygon: vec![(160.0, 200.0), (1300.0, 140.0), (1400.0, 1250.0), (700.0, 1420.0), (120.0, 1150.0)],
            pyramid: vec![4],
            marker,
            in_roi: ClassCounts::default(),
            outside_roi: ClassCounts::default(),
            bands: KBands::default(),
            radius: (5, 8),
            gap_px: 3,
            cluster_size: 8,
            cluster_step: (20.0, 30.0),
            artifacts: 0,
            artifact_clearance: 60.0,
            seed,
        }
    }

    /// 600 tumour nuclei, 240 of them moderately stained.
    pub fn er_preset(seed: u64) -> Self {
        Self {
            in_roi: ClassCounts {
                unstained: 360,
                moderate: 240,
                ..ClassCounts::default()
            },
            outside_roi: ClassCounts {
                unstained: 40,
                dark: 20,
                ..ClassCounts::default()
            },
            ..Self::base(Marker::Er, seed)
        }
    }

    /// 200 tumour nuclei, 30 of them stained.
    pub fn ki67_preset(seed: u64) -> Self {
        Self {
            in_roi: ClassCounts {
                unstained: 170,
                moderate: 30,
                ..ClassCounts::default()
            },
            outside_roi: ClassCounts {
                unstained: 30,
                moderate: 10,
                ..ClassCounts::default()
            },
            ..Self::base(Marker::Ki67, seed)
        }
    }

    /// ER slide with light-brown artifacts isolated by more than the default
    /// cluster radius, so only the cluster filter can remove them.
    pub fn er_artifact_preset(seed: u64) -> Self {
        Self {
            in_roi: ClassCounts {
                unstained: 300,
                moderate: 32,
                dark: 16,
                ..ClassCounts::default()
            },
            outside_roi: ClassCounts {
                unstained: 20,
                ..ClassCounts::default()
            },
            artifacts: 12,
            artifact_clearance: 130.0,
            ..Self::base(Marker::Er, seed)
        }
    }

    pub fn with_artifacts(mut self, n: usize) -> Self {
        self.artifacts = n;
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.width <= 2 * self.tissue_margin || self.height <= 2 * self.tissue_margin {
            return bad("tissue margin leaves no tissue".into());
        }
        if self.roi_polygon.len() < 3 {
            return bad("ROI polygon needs at least 3 vertices".into());
        }
        if self.pyramid.is_empty() || self.pyramid.windows(2).any(|w| w[0] >= w[1]) || self.pyramid[0] < 2 {
            return bad("pyramid factors must start at 2 or more and increase".into());
        }
        if self.radius.0 < 1 || self.radius.0 > self.radius.1 {
            return bad(format!("radius range {:?}", self.radius));
        }
        let b = &self.bands;
        for (name, (lo, hi)) in [("unstained", b.unstained), ("light", b.light), ("moderate", b.moderate), ("dark", b.dark)] {
            if !(0.0 <= lo && lo <= hi && hi < 1.0) {
                return bad(format!("{name} band ({lo}, {hi}) outside [0,1)"));
            }
        }
        if !(b.light.1 < b.moderate.0 && b.moderate.1 < b.dark.0) {
            return bad("light/moderate/dark bands overlap".into());
        }
        // 8-bit quantisation moves K by up to ~0.004
        let th = crate::stain::StainThresholds::default();
        let m = 0.01;
        if !(b.light.1 < th.delta_sl - m
            && b.moderate.0 > th.delta_sl + m
            && b.moderate.1 < th.delta_su - m
            && b.dark.0 > th.delta_su + m)
        {
            return bad(format!(
                "bands must sit clear of the default grade thresholds {} / {}",
                th.delta_sl, th.delta_su
            ));
        }
        let min_step = (2 * self.radius.1 + self.gap_px) as f64;
        if self.cluster_step.0 < min_step || self.cluster_step.0 > self.cluster_step.1 {
            return bad(format!("cluster_step must lie in [{min_step}, ..] and be ordered"));
        }
        if self.cluster_size == 0 {
            return bad("cluster_size must be positive".into());
        }
        Ok(())
    }

    fn roi_level(&self) -> usize {
        1
    }

    fn roi_downsample(&self) -> u32 {
        self.pyramid[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NucleusRecord {
    pub id: u64,
    pub center: [u32; 2],
    pub radius: u32,
    pub class: StainClass,
    pub in_roi: bool,
    pub rgb: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub center: [u32; 2],
    pub radius: u32,
    pub rgb: [u8; 3],
    pub in_roi: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthManifest {
    pub schema: String,
    pub version: u32,
    pub seed: u64,
    pub marker: Marker,
    pub width: u32,
    pub height: u32,
    pub pyramid: Vec<u32>,
    pub roi_level: usize,
    pub roi_downsample: f64,
    pub nuclei: Vec<NucleusRecord>,
    pub artifacts: Vec<ArtifactRecord>,
    pub expected_counts: StainCounts,
    pub expected_score: Option<MarkerScore>,
    pub empty_slide: bool,
    /// Output files by role, relative to the manifest.
    pub files: BTreeMap<String, String>,
}

impl GroundTruthManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let m: Self = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if m.schema != MANIFEST_SCHEMA || m.version != MANIFEST_VERSION {
            return Err(format!("expected {MANIFEST_SCHEMA} v{MANIFEST_VERSION}, found {} v{}", m.schema, m.version));
        }
        Ok(m)
    }
}

fn counts_from_records(marker: Marker, nuclei: &[NucleusRecord]) -> StainCounts {
    StainCounts::from_classes(marker, nuclei.iter().filter(|n| n.in_roi).map(|n| n.class))
}

fn expected_score(counts: &StainCounts) -> Option<MarkerScore> {
    score_counts(counts, &AllredConfig::default()).ok()
}

/// Recomputes expectations from the per-nucleus records. An empty list
/// means the manifest is consistent.
pub fn verify_manifest(m: &GroundTruthManifest) -> Vec<String> {
    let mut issues = Vec::new();
    let counts = counts_from_records(m.marker, &m.nuclei);
    let stored = &m.expected_counts;
    if stored.marker != m.marker {
        issues.push(format!("counts marker {} differs from manifest marker {}", stored.marker, m.marker));
    }
    for (name, want, have) in [
        ("n_unstained", counts.n_unstained, stored.n_unstained),
        ("n_light", counts.n_light, stored.n_light),
        ("n_moderate", counts.n_moderate, stored.n_moderate),
        ("n_dark", counts.n_dark, stored.n_dark),
        ("n_stained_ungraded", counts.n_stained_ungraded, stored.n_stained_ungraded),
    ] {
        if want != have {
            issues.push(format!(
                "{name}: records give {want}, manifest stores {have} (delta {})",
                have as i64 - want as i64
            ));
        }
    }
    let empty = counts.total() == 0;
    if empty != m.empty_slide {
        issues.push(format!("empty_slide is {} but records give {} tumour nuclei", m.empty_slide, counts.total()));
    }
    let want = expected_score(&counts);
    match (&want, &m.expected_score) {
        (Some(MarkerScore::Allred(w)), Some(MarkerScore::Allred(h))) => {
            for (name, a, b) in [("IS", w.is, h.is), ("PS", w.ps, h.ps), ("TS", w.ts, h.ts)] {
                if a != b {
                    issues.push(format!("{name}: records give {a}, manifest stores {b}"));
                }
            }
            if w.category != h.category {
                issues.push(format!("category: records give {:?}, manifest stores {:?}", w.category, h.category));
            }
        }
        (Some(MarkerScore::Proliferation(w)), Some(MarkerScore::Proliferation(h))) => {
            if w.prs != h.prs {
                issues.push(format!("PRS: records give {}, manifest stores {}", w.prs, h.prs));
            }
            if w.category != h.category {
                issues.push(format!("category: records give {:?}, manifest stores {:?}", w.category, h.category));
            }
        }
        (None, None) => {}
        (w, h) => issues.push(format!("expected score: records give {w:?}, manifest stores {h:?}")),
    }
    let mut ids: Vec<u64> = m.nuclei.iter().map(|n| n.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        issues.push("duplicate nucleus ids".into());
    }
    issues
}

/// A generated slide held in memory.
#[derive(Debug, Clone)]
pub struct SynthSlide {
    pub image: RgbImage,
    pub roi: RoiMask,
    /// True nuclei (artifacts excluded) in the level-0 frame.
    pub truth: Vec<NucleusInstance>,
    pub manifest: GroundTruthManifest,
}

impl SynthSlide {
    pub fn slide(&self) -> SlideImage {
        SlideImage::pyramid(self.image.clone(), &self.manifest.pyramid).expect("generator pyramid is valid")
    }

    /// Writes `slide.tiff`, `roi.png` (+ sidecar), `labels.png` and
    /// `manifest.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<GroundTruthManifest, SynthError> {
        let dir = dir.as_ref();
        let werr = |p: &Path, e: &dyn std::fmt::Display| SynthError::Write {
            path: p.to_path_buf(),
            reason: e.to_string(),
        };
        std::fs::create_dir_all(dir).map_err(|e| werr(dir, &e))?;
        let slide = self.slide();
        let levels: Vec<(std::sync::Arc<RgbImage>, f64)> = (0..slide.level_count())
            .map(|i| (slide.level_image(i).expect("in-memory level"), slide.levels()[i].downsample))
            .collect();
        let refs: Vec<(&RgbImage, f64)> = levels.iter().map(|(im, d)| (im.as_ref(), *d)).collect();
        let tiff = dir.join("slide.tiff");
        write_pyramidal_tiff(&tiff, &refs, 256, None).map_err(|e| werr(&tiff, &e))?;
        let roi = dir.join("roi.png");
        self.roi.write_png(&roi).map_err(|e| werr(&roi, &e))?;
        let labels = dir.join("labels.png");
        write_label_png(&labels, &self.truth, self.image.width(), self.image.height()).map_err(|e| werr(&labels, &e))?;
        let mut m = self.manifest.clone();
        m.files.insert("slide".into(), "slide.tiff".into());
        m.files.insert("roi".into(), "roi.png".into());
        m.files.insert("roi_sidecar".into(), "roi.png.json".into());
        m.files.insert("labels".into(), "labels.png".into());
        let mp = dir.join("manifest.json");
        std::fs::write(&mp, m.to_json()).map_err(|e| werr(&mp, &e))?;
        Ok(m)
    }
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Rasterises a level-0 polygon at `downsample`, sampling pixel centres.
pub fn rasterize_polygon(poly: &[(f64, f64)], width: u32, height: u32, downsample: u32, level: usize) -> BinaryMask {
    let ds = downsample as f64;
    BinaryMask::from_fn(width.div_ceil(downsample), height.div_ceil(downsample), level, |x, y| {
        point_in_polygon(poly, (x as f64 + 0.5) * ds, (y as f64 + 0.5) * ds)
    })
}

pub(crate) fn disk_pixels(cx: u32, cy: u32, r: u32) -> Vec<(u32, u32)> {
    let (cx, cy, r) = (cx as i64, cy as i64, r as i64);
    let mut v = Vec::new();
    for y in cy - r..=cy + r {
        for x in cx - r..=cx + r {
            if (x - cx).pow(2) + (y - cy).pow(2) <= r * r && x >= 0 && y >= 0 {
                v.push((x as u32, y as u32));
            }
        }
    }
    v
}

pub(crate) fn blue(k: f64) -> [u8; 3] {
    cmyk_to_rgb(CmykPixel { c: 0.7, m: 0.5, y: 0.0, k })
}

pub(crate) fn brown(k: f64) -> [u8; 3] {
    cmyk_to_rgb(CmykPixel { c: 0.0, m: 0.5, y: 1.0, k })
}

/// Disks already placed, bucketed for neighbour queries.
pub(crate) struct Placer {
    cell: f64,
    grid: HashMap<(i64, i64), Vec<usize>>,
    pub disks: Vec<(u32, u32, u32)>,
    gap: u32,
    max_r: u32,
}

impl Placer {
    pub fn new(gap: u32, max_r: u32) -> Self {
        Self {
            cell: (2 * max_r + gap).max(1) as f64,
            grid: HashMap::new(),
            disks: Vec::new(),
            gap,
            max_r,
        }
    }

    fn key(&self, x: f64, y: f64) -> (i64, i64) {
        ((x / self.cell).floor() as i64, (y / self.cell).floor() as i64)
    }

    pub fn fits(&self, x: u32, y: u32, r: u32) -> bool {
        let (kx, ky) = self.key(x as f64, y as f64);
        let reach = ((r + self.max_r + self.gap) as f64 / self.cell).ceil() as i64;
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                if let Some(b) = self.grid.get(&(kx + dx, ky + dy)) {
                    for &i in b {
                        let (ox, oy, or) = self.disks[i];
                        let min = (r + or + self.gap) as f64;
                        let d2 = (ox as f64 - x as f64).powi(2) + (oy as f64 - y as f64).powi(2);
                        if d2 < min * min {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    pub fn add(&mut self, x: u32, y: u32, r: u32) {
        let k = self.key(x as f64, y as f64);
        self.grid.entry(k).or_default().push(self.disks.len());
        self.disks.push((x, y, r));
    }
}

const ATTEMPTS: usize = 20_000;

struct Gen<'a> {
    spec: &'a SlideSpec,
    rng: ChaCha8Rng,
    roi: RoiMask,
    placer: Placer,
    nuclei: Vec<NucleusRecord>,
    stained_centres: Vec<(f64, f64)>,
}

impl Gen<'_> {
    fn in_tissue(&self, x: u32, y: u32, r: u32) -> bool {
        let m = self.spec.tissue_margin;
        x >= m + r && y >= m + r && x + r < self.spec.width - m && y + r < self.spec.height - m
    }

    fn sample_k(&mut self, class: StainClass) -> f64 {
        let b = &self.spec.bands;
        let (lo, hi) = match class {
            StainClass::Unstained => b.unstained,
            StainClass::Light => b.light,
            StainClass::Moderate => b.moderate,
            StainClass::Dark => b.dark,
            StainClass::Stained => b.moderate,
        };
        if hi > lo {
            self.rng.gen_range(lo..hi)
        } else {
            lo
        }
    }

    fn radius(&mut self) -> u32 {
        self.rng.gen_range(self.spec.radius.0..=self.spec.radius.1)
    }

    fn push(&mut self, x: u32, y: u32, r: u32, class: StainClass) {
        let k = self.sample_k(class);
        let rgb = if class.is_stained() { brown(k) } else { blue(k) };
        let label = match (self.spec.marker, class.is_stained()) {
            (Marker::Ki67, true) => StainClass::Stained,
            _ => class,
        };
        self.placer.add(x, y, r);
        if class.is_stained() {
            self.stained_centres.push((x as f64, y as f64));
        }
        let in_roi = self.roi.contains_point(x as f64, y as f64);
        self.nuclei.push(NucleusRecord {
            id: self.nuclei.len() as u64 + 1,
            center: [x, y],
            radius: r,
            class: label,
            in_roi,
            rgb,
        });
    }

    fn random_point(&mut self, want_roi: bool, r: u32) -> Option<(u32, u32)> {
        for _ in 0..ATTEMPTS {
            let x = self.rng.gen_range(0..self.spec.width);
            let y = self.rng.gen_range(0..self.spec.height);
            if self.in_tissue(x, y, r) && self.roi.contains_point(x as f64, y as f64) == want_roi && self.placer.fits(x, y, r) {
                return Some((x, y));
            }
        }
        None
    }

    fn scatter(&mut self, n: usize, class: StainClass, want_roi: bool) -> Result<(), SynthError> {
        for _ in 0..n {
            let r = self.radius();
            let (x, y) = self.random_point(want_roi, r).ok_or_else(|| SynthError::PlacementImpossible {
                what: format!("{class:?} nucleus"),
                attempts: ATTEMPTS,
            })?;
            self.push(x, y, r, class);
        }
        Ok(())
    }

    /// Grows one cluster as a random walk; every member lies within
    /// `cluster_step.1` of an earlier member.
    fn cluster(&mut self, classes: &[StainClass]) -> Result<(), SynthError> {
        'restart: for _ in 0..200 {
            let r0 = self.radius();
            let Some((x0, y0)) = self.random_point(true, r0) else { break };
            let mut members = vec![(x0, y0, r0)];
            let mut trial = Placer::new(self.spec.gap_px, self.spec.radius.1);
            for &(x, y, r) in &self.placer.disks {
                trial.add(x, y, r);
            }
            trial.add(x0, y0, r0);
            while members.len() < classes.len() {
                let mut placed = false;
                for _ in 0..300 {
                    let &(px, py, _) = &members[self.rng.gen_range(0..members.len())];
                    let r = self.radius();
                    let step = self.rng.gen_range(self.spec.cluster_step.0..=self.spec.cluster_step.1);
                    let a = self.rng.gen_range(0.0..std::f64::consts::TAU);
                    let (fx, fy) = ((px as f64 + step * a.cos()).round(), (py as f64 + step * a.sin()).round());
                    if fx < 0.0 || fy < 0.0 {
                        continue;
                    }
                    let (x, y) = (fx as u32, fy as u32);
                    let d = ((x as f64 - px as f64).powi(2) + (y as f64 - py as f64).powi(2)).sqrt();
                    if d > self.spec.cluster_step.1 {
                        continue;
                    }
                    if self.in_tissue(x, y, r) && self.roi.contains_point(x as f64, y as f64) && trial.fits(x, y, r) {
                        trial.add(x, y, r);
                        members.push((x, y, r));
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    continue 'restart;
                }
            }
            for (&(x, y, r), &class) in members.iter().zip(classes) {
                self.push(x, y, r, class);
            }
            return Ok(());
        }
        Err(SynthError::PlacementImpossible {
            what: format!("cluster of {}", classes.len()),
            attempts: 200,
        })
    }

    fn artifacts(&mut self) -> Result<Vec<ArtifactRecord>, SynthError> {
        let hosts: Vec<(u32, u32, u32)> = self
            .nuclei
            .iter()
            .filter(|n| !n.class.is_stained() && n.in_roi)
            .map(|n| (n.center[0], n.center[1], n.radius))
            .collect();
        let mut out: Vec<ArtifactRecord> = Vec::new();
        let clear2 = self.spec.artifact_clearance.powi(2);
        for _ in 0..self.spec.artifacts {
            let mut placed = None;
            for _ in 0..ATTEMPTS {
                if hosts.is_empty() {
                    break;
                }
                let (hx, hy, hr) = hosts[self.rng.gen_range(0..hosts.len())];
                let r = self.radius();
                let d = (hr + r + self.spec.gap_px) as f64 + self.rng.gen_range(0.0..4.0);
                let a = self.rng.gen_range(0.0..std::f64::consts::TAU);
                let (fx, fy) = ((hx as f64 + d * a.cos()).round(), (hy as f64 + d * a.sin()).round());
                if fx < 0.0 || fy < 0.0 {
                    continue;
                }
                let (x, y) = (fx as u32, fy as u32);
                let far = |&(sx, sy): &(f64, f64)| (sx - x as f64).powi(2) + (sy - y as f64).powi(2) > clear2;
                if self.in_tissue(x, y, r)
                    && self.roi.contains_point(x as f64, y as f64)
                    && self.placer.fits(x, y, r)
                    && self.stained_centres.iter().all(far)
                    && out.iter().map(|a| (a.center[0] as f64, a.center[1] as f64)).all(|p| far(&p))
                {
                    placed = Some((x, y, r));
                    break;
                }
            }
            let (x, y, r) = placed.ok_or_else(|| SynthError::PlacementImpossible {
                what: "artifact".into(),
                attempts: ATTEMPTS,
            })?;
            self.placer.add(x, y, r);
            out.push(ArtifactRecord {
                center: [x, y],
                radius: r,
                rgb: ARTIFACT.0,
                in_roi: true,
            });
        }
        Ok(out)
    }
}

fn cluster_sizes(n: usize, size: usize) -> Vec<usize> {
    if n == 0 {
        return vec![];
    }
    let k = n.div_ceil(size);
    (0..k).map(|i| n / k + usize::from(i < n % k)).collect()
}

/// Generates a slide, its ROI, the true instances and the manifest.
pub fn generate_slide(spec: &SlideSpec) -> Result<SynthSlide, SynthError> {
    spec.validate()?;
    let ds = spec.roi_downsample();
    let roi_mask = rasterize_polygon(&spec.roi_polygon, spec.width, spec.height, ds, spec.roi_level());
    let mut g = Gen {
        spec,
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        roi: RoiMask::new(roi_mask, ds as f64, RoiProvenance::External),
        placer: Placer::new(spec.gap_px, spec.radius.1),
        nuclei: Vec::new(),
        stained_centres: Vec::new(),
    };

    let mut stained: Vec<StainClass> = Vec::new();
    stained.extend(std::iter::repeat_n(StainClass::Light, spec.in_roi.light));
    stained.extend(std::iter::repeat_n(StainClass::Moderate, spec.in_roi.moderate));
    stained.extend(std::iter::repeat_n(StainClass::Dark, spec.in_roi.dark));
    // interleave grades across clusters
    let shuffled = {
        use rand::seq::SliceRandom;
        let mut s = stained.clone();
        s.shuffle(&mut g.rng);
        s
    };
    let mut rest = shuffled.as_slice();
    for size in cluster_sizes(rest.len(), spec.cluster_size) {
        let (head, tail) = rest.split_at(size);
        g.cluster(head)?;
        rest = tail;
    }
    g.scatter(spec.in_roi.unstained, StainClass::Unstained, true)?;
    for (n, class) in [
        (spec.outside_roi.unstained, StainClass::Unstained),
        (spec.outside_roi.light, StainClass::Light),
        (spec.outside_roi.moderate, StainClass::Moderate),
        (spec.outside_roi.dark, StainClass::Dark),
    ] {
        g.scatter(n, class, false)?;
    }
    let artifacts = g.artifacts()?;

    let mut image = RgbImage::from_pixel(spec.width, spec.height, WHITE);
    let m = spec.tissue_margin;
    for y in m..spec.height - m {
        for x in m..spec.width - m {
            image.put_pixel(x, y, STROMA);
        }
    }
    let mut truth = Vec::with_capacity(g.nuclei.len());
    for n in &g.nuclei {
        let px = disk_pixels(n.center[0], n.center[1], n.radius);
        for &(x, y) in &px {
            image.put_pixel(x, y, Rgb(n.rgb));
        }
        let inst = NucleusInstance::from_mask(n.id, PixelRuns::from_pixels(px), Frame::Global).expect("disk is non-empty");
        truth.push(inst.with_stain(n.class));
    }
    for a in &artifacts {
        for (x, y) in disk_pixels(a.center[0], a.center[1], a.radius) {
            image.put_pixel(x, y, Rgb(a.rgb));
        }
    }

    let counts = counts_from_records(spec.marker, &g.nuclei);
    let manifest = GroundTruthManifest {
        schema: MANIFEST_SCHEMA.into(),
        version: MANIFEST_VERSION,
        seed: spec.seed,
        marker: spec.marker,
        width: spec.width,
        height: spec.height,
        pyramid: spec.pyramid.clone(),
        roi_level: spec.roi_level(),
        roi_downsample: ds as f64,
        empty_slide: counts.total() == 0,
        expected_score: expected_score(&counts),
        expected_counts: counts,
        nuclei: g.nuclei,
        artifacts,
        files: BTreeMap::new(),
    };
    Ok(SynthSlide {
        image,
        roi: g.roi,
        truth,
        manifest,
    })
}
