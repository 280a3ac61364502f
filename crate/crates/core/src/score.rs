//! Allred (ER/PR) and proliferation (Ki67) scores from stain-class counts.

use crate::nuclei::NucleusInstance;
use crate::post::{apply_cluster_filter, ClusterReport, PostConfig};
use crate::roi::{mask_instances, RoiMask, RoiProvenance};
use crate::stain::StainClass;
use crate::Marker;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("no tumour nuclei to score")]
    EmptySlide,
    #[error("nucleus {0} has no stain label")]
    Unlabelled(u64),
    #[error("{0} ungraded stained nuclei cannot be scored for {1}")]
    UngradedStain(u64, Marker),
    #[error("invalid scoring config: {0}")]
    InvalidConfig(String),
    #[error("marker {0} is not scored from nucleus counts")]
    UnsupportedMarker(Marker),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Negative,
    Equivocal,
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StainCounts {
    pub marker: Marker,
    pub n_unstained: u64,
    pub n_light: u64,
    pub n_moderate: u64,
    pub n_dark: u64,
    /// Stained nuclei without an intensity grade (Ki67 labels).
    pub n_stained_ungraded: u64,
}

impl StainCounts {
    pub fn new(marker: Marker, n_unstained: u64, n_light: u64, n_moderate: u64, n_dark: u64) -> Self {
        Self {
            marker,
            n_unstained,
            n_light,
            n_moderate,
            n_dark,
            n_stained_ungraded: 0,
        }
    }

    pub fn ki67(n_unstained: u64, n_stained: u64) -> Self {
        Self {
            n_stained_ungraded: n_stained,
            ..Self::new(Marker::Ki67, n_unstained, 0, 0, 0)
        }
    }

    pub fn n_stained(&self) -> u64 {
        self.n_light + self.n_moderate + self.n_dark + self.n_stained_ungraded
    }

    pub fn total(&self) -> u64 {
        self.n_unstained + self.n_stained()
    }

    pub fn add(&mut self, class: StainClass) {
        match class {
            StainClass::Unstained => self.n_unstained += 1,
            StainClass::Light => self.n_light += 1,
            StainClass::Moderate => self.n_moderate += 1,
            StainClass::Dark => self.n_dark += 1,
            StainClass::Stained => self.n_stained_ungraded += 1,
        }
    }

    pub fn from_classes(marker: Marker, classes: impl IntoIterator<Item = StainClass>) -> Self {
        let mut c = Self::new(marker, 0, 0, 0, 0);
        for class in classes {
            c.add(class);
        }
        c
    }

    pub fn from_instances(marker: Marker, instances: &[NucleusInstance]) -> Result<Self, ScoreError> {
        let mut c = Self::new(marker, 0, 0, 0, 0);
        for n in instances {
            c.add(n.stain.ok_or(ScoreError::Unlabelled(n.id))?);
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntensityRule {
    /// Half-up rounded mean of the grades 1/2/3.
    WeightedMean,
    /// Most frequent grade; ties go to the stronger grade.
    Predominant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllredConfig {
    /// Inclusive upper bounds `[num, den]` of the stained fraction for
    /// PS 1..=4; anything above the last is PS 5.
    pub ps_bins: Vec<[u64; 2]>,
    pub intensity_rule: IntensityRule,
    pub positive_min_ts: u8,
}

impl Default for AllredConfig {
    fn default() -> Self {
        Self {
            ps_bins: vec![[1, 100], [1, 10], [1, 3], [2, 3]],
            intensity_rule: IntensityRule::WeightedMean,
            positive_min_ts: 3,
        }
    }
}

impl AllredConfig {
    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.ps_bins.len() != 4 {
            return Err(ScoreError::InvalidConfig("ps_bins needs exactly 4 upper bounds".into()));
        }
        if self.ps_bins.iter().any(|b| b[1] == 0 || b[0] > b[1]) {
            return Err(ScoreError::InvalidConfig("ps_bins entries must be fractions in [0,1]".into()));
        }
        let increasing = self
            .ps_bins
            .windows(2)
            .all(|w| (w[0][0] as u128) * (w[1][1] as u128) < (w[1][0] as u128) * (w[0][1] as u128));
        if !increasing {
            return Err(ScoreError::InvalidConfig("ps_bins must be strictly increasing".into()));
        }
        Ok(())
    }
}

fn nonempty(c: &StainCounts) -> Result<(), ScoreError> {
    if c.total() == 0 {
        Err(ScoreError::EmptySlide)
    } else {
        Ok(())
    }
}

fn graded(c: &StainCounts) -> Result<(), ScoreError> {
    if c.n_stained_ungraded > 0 {
        Err(ScoreError::UngradedStain(c.n_stained_ungraded, c.marker))
    } else {
        Ok(())
    }
}

pub fn proportion_score(c: &StainCounts, cfg: &AllredConfig) -> Result<u8, ScoreError> {
    nonempty(c)?;
    let s = c.n_stained() as u128;
    let t = c.total() as u128;
    if s == 0 {
        return Ok(0);
    }
    // s/t <= num/den, in exact integers
    let ps = cfg
        .ps_bins
        .iter()
        .position(|&[num, den]| s * den as u128 <= num as u128 * t)
        .map_or(5, |i| i as u8 + 1);
    Ok(ps)
}

pub fn intensity_score(c: &StainCounts, cfg: &AllredConfig) -> Result<u8, ScoreError> {
    nonempty(c)?;
    graded(c)?;
    let s = c.n_light + c.n_moderate + c.n_dark;
    if s == 0 {
        return Ok(0);
    }
    Ok(match cfg.intensity_rule {
        IntensityRule::WeightedMean => {
            let sum = (c.n_light + 2 * c.n_moderate + 3 * c.n_dark) as u128;
            // floor(sum/s + 1/2)
            ((2 * sum + s as u128) / (2 * s as u128)) as u8
        }
        IntensityRule::Predominant => {
            let grades = [(1u8, c.n_light), (2, c.n_moderate), (3, c.n_dark)];
            grades.iter().max_by_key(|&&(g, n)| (n, g)).map(|&(g, _)| g).unwrap_or(0)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllredScore {
    #[serde(rename = "IS")]
    pub is: u8,
    #[serde(rename = "PS")]
    pub ps: u8,
    #[serde(rename = "TS")]
    pub ts: u8,
    pub category: Category,
}

pub fn allred_category(ts: u8, cfg: &AllredConfig) -> Category {
    if ts < cfg.positive_min_ts {
        Category::Negative
    } else {
        Category::Positive
    }
}

pub fn allred(c: &StainCounts, cfg: &AllredConfig) -> Result<AllredScore, ScoreError> {
    let is = intensity_score(c, cfg)?;
    let ps = proportion_score(c, cfg)?;
    let ts = is + ps;
    Ok(AllredScore {
        is,
        ps,
        ts,
        category: allred_category(ts, cfg),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProliferationScore {
    #[serde(rename = "PRS")]
    pub prs: f64,
    pub category: Category,
}

pub const PRS_POSITIVE_MIN: f64 = 15.0;

pub fn prs_category(prs: f64) -> Category {
    if prs < PRS_POSITIVE_MIN {
        Category::Negative
    } else {
        Category::Positive
    }
}

pub fn ki67_prs(c: &StainCounts) -> Result<ProliferationScore, ScoreError> {
    nonempty(c)?;
    let (s, t) = (c.n_stained(), c.total());
    let prs = 100.0 * s as f64 / t as f64;
    // exact integer comparison so that e.g. 30/200 is not lost to rounding
    let negative = (100 * s as u128) < (PRS_POSITIVE_MIN as u128) * t as u128;
    Ok(ProliferationScore {
        prs,
        category: if negative { Category::Negative } else { Category::Positive },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MarkerScore {
    Allred(AllredScore),
    Proliferation(ProliferationScore),
}

impl MarkerScore {
    pub fn category(&self) -> Category {
        match self {
            MarkerScore::Allred(a) => a.category,
            MarkerScore::Proliferation(p) => p.category,
        }
    }
}

pub fn score_counts(c: &StainCounts, cfg: &AllredConfig) -> Result<MarkerScore, ScoreError> {
    match c.marker {
        Marker::Er | Marker::Pr => Ok(MarkerScore::Allred(allred(c, cfg)?)),
        Marker::Ki67 => Ok(MarkerScore::Proliferation(ki67_prs(c)?)),
        Marker::Her2 => Err(ScoreError::UnsupportedMarker(Marker::Her2)),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreConfig {
    pub allred: AllredConfig,
    pub post: PostConfig,
}

/// Slide result with its audit trail. `config_hash` is filled in by the
/// caller that knows the full run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideScore {
    pub marker: Marker,
    pub scores: MarkerScore,
    pub category: Category,
    pub counts: StainCounts,
    pub roi_provenance: RoiProvenance,
    pub n_detected: usize,
    pub n_in_roi: usize,
    pub cluster_report: ClusterReport,
    pub config_hash: String,
}

/// ROI restriction, cluster filter, counting and scoring in that order.
pub fn score_slide(
    instances: Vec<NucleusInstance>,
    roi: &RoiMask,
    marker: Marker,
    cfg: &ScoreConfig,
) -> Result<SlideScore, ScoreError> {
    cfg.allred.validate()?;
    let n_detected = instances.len();
    let in_roi = mask_instances(instances, roi);
    let n_in_roi = in_roi.len();
    let (kept, cluster_report) = apply_cluster_filter(in_roi, &cfg.post);
    let counts = StainCounts::from_instances(marker, &kept)?;
    let scores = score_counts(&counts, &cfg.allred)?;
    Ok(SlideScore {
        marker,
        category: scores.category(),
        scores,
        counts,
        roi_provenance: roi.provenance,
        n_detected,
        n_in_roi,
        cluster_report,
        config_hash: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn er(u: u64, l: u64, m: u64, d: u64) -> StainCounts {
        StainCounts::new(Marker::Er, u, l, m, d)
    }

    #[test]
    fn proportion_examples() {
        let cfg = AllredConfig::default();
        assert_eq!(proportion_score(&er(100, 0, 0, 0), &cfg), Ok(0));
        assert_eq!(proportion_score(&er(50, 0, 50, 0), &cfg), Ok(4));
        assert_eq!(proportion_score(&er(0, 0, 100, 0), &cfg), Ok(5));
        assert_eq!(proportion_score(&er(0, 0, 0, 0), &cfg), Err(ScoreError::EmptySlide));
    }

    #[test]
    fn proportion_bin_edges_are_right_closed() {
        let cfg = AllredConfig::default();
        assert_eq!(proportion_score(&er(99, 1, 0, 0), &cfg), Ok(1));
        assert_eq!(proportion_score(&er(98, 2, 0, 0), &cfg), Ok(2));
        assert_eq!(proportion_score(&er(90, 10, 0, 0), &cfg), Ok(2));
        assert_eq!(proportion_score(&er(89, 11, 0, 0), &cfg), Ok(3));
        assert_eq!(proportion_score(&er(2, 1, 0, 0), &cfg), Ok(3));
        assert_eq!(proportion_score(&er(1, 2, 0, 0), &cfg), Ok(4));
        assert_eq!(proportion_score(&er(999, 2, 0, 0), &cfg), Ok(1));
    }

    #[test]
    fn intensity_examples() {
        let cfg = AllredConfig::default();
        assert_eq!(intensity_score(&er(10, 0, 7, 0), &cfg), Ok(2));
        assert_eq!(intensity_score(&er(0, 50, 0, 50), &cfg), Ok(2));
        assert_eq!(intensity_score(&er(10, 0, 0, 0), &cfg), Ok(0));
        // mean 2.5 rounds up
        assert_eq!(intensity_score(&er(0, 0, 1, 1), &cfg), Ok(3));
        let pre = AllredConfig {
            intensity_rule: IntensityRule::Predominant,
            ..cfg.clone()
        };
        assert_eq!(intensity_score(&er(0, 5, 1, 4), &pre), Ok(1));
        assert_eq!(intensity_score(&er(0, 4, 1, 4), &pre), Ok(3));
        assert!(matches!(intensity_score(&StainCounts::ki67(1, 1), &cfg), Err(ScoreError::UngradedStain(1, _))));
    }

    #[test]
    fn allred_examples() {
        let cfg = AllredConfig::default();
        let neg = allred(&er(100, 0, 0, 0), &cfg).unwrap();
        assert_eq!((neg.is, neg.ps, neg.ts, neg.category), (0, 0, 0, Category::Negative));
        let pos = allred(&er(50, 0, 50, 0), &cfg).unwrap();
        assert_eq!((pos.is, pos.ps, pos.ts, pos.category), (2, 4, 6, Category::Positive));
        let low = allred(&er(995, 5, 0, 0), &cfg).unwrap();
        assert_eq!((low.is, low.ps, low.ts, low.category), (1, 1, 2, Category::Negative));
    }

    #[test]
    fn ts_three_is_positive() {
        let cfg = AllredConfig::default();
        assert_eq!(allred_category(2, &cfg), Category::Negative);
        assert_eq!(allred_category(3, &cfg), Category::Positive);
        // 5% light: IS 1 + PS 2
        assert_eq!(allred(&er(95, 5, 0, 0), &cfg).unwrap().ts, 3);
        assert_eq!(allred(&er(95, 5, 0, 0), &cfg).unwrap().category, Category::Positive);
    }

    #[test]
    fn prs_examples() {
        let z = ki67_prs(&StainCounts::ki67(200, 0)).unwrap();
        assert_eq!((z.prs, z.category), (0.0, Category::Negative));
        let b = ki67_prs(&StainCounts::ki67(170, 30)).unwrap();
        assert_eq!((b.prs, b.category), (15.0, Category::Positive));
        let f = ki67_prs(&StainCounts::ki67(0, 200)).unwrap();
        assert_eq!((f.prs, f.category), (100.0, Category::Positive));
        assert_eq!(prs_category(14.999), Category::Negative);
        assert_eq!(prs_category(15.0), Category::Positive);
        assert_eq!(ki67_prs(&StainCounts::ki67(0, 0)), Err(ScoreError::EmptySlide));
    }

    #[test]
    fn graded_classes_count_as_stained_for_ki67() {
        let c = StainCounts::from_classes(Marker::Ki67, [StainClass::Light, StainClass::Stained, StainClass::Unstained]);
        assert_eq!(c.n_stained(), 2);
        assert!((ki67_prs(&c).unwrap().prs - 200.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bins_validation() {
        assert!(AllredConfig::default().validate().is_ok());
        let bad = AllredConfig {
            ps_bins: vec![[1, 10], [1, 100], [1, 3], [2, 3]],
            ..AllredConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
