//! CMYK-based stain grading of nuclei.
//!
//! Blue (hematoxylin) nuclei have a near-zero yellow component and brown (DAB)
//! nuclei a near-zero cyan component; among brown nuclei the black component
//! grows with stain intensity. Grading therefore splits stained from unstained
//! on Y and grades intensity on K against two thresholds.
//!
//! All components are on the unit scale `[0, 1]`.

use crate::mask::PixelRuns;
use crate::Marker;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StainError {
    #[error("nucleus mask covers no pixels of the image")]
    EmptyMask,
    #[error("calibration samples lack class {0:?}")]
    MissingClass(StainClass),
    #[error("classes not separable: {0}")]
    NonSeparableClasses(String),
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CmykPixel {
    pub c: f64,
    pub m: f64,
    pub y: f64,
    pub k: f64,
}

/// Naive device CMYK: `K = 1 - max(R,G,B)/255`, chromatic channels normalised
/// by `1 - K`. Pure black maps to `C = M = Y = 0, K = 1`.
pub fn rgb_to_cmyk(rgb: [u8; 3]) -> CmykPixel {
    let [r, g, b] = rgb.map(|v| v as f64 / 255.0);
    let k = 1.0 - r.max(g).max(b);
    if k >= 1.0 {
        return CmykPixel {
            c: 0.0,
            m: 0.0,
            y: 0.0,
            k: 1.0,
        };
    }
    let s = 1.0 - k;
    CmykPixel {
        c: (1.0 - r - k) / s,
        m: (1.0 - g - k) / s,
        y: (1.0 - b - k) / s,
        k,
    }
}

/// Inverse of [`rgb_to_cmyk`], rounded to the nearest 8-bit value.
pub fn cmyk_to_rgb(p: CmykPixel) -> [u8; 3] {
    let ch = |v: f64| (255.0 * (1.0 - v) * (1.0 - p.k)).round().clamp(0.0, 255.0) as u8;
    [ch(p.c), ch(p.m), ch(p.y)]
}

/// Stain label of one nucleus. `Stained` is the ungraded positive label used
/// for Ki67, which only distinguishes stained from unstained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StainClass {
    Unstained,
    Light,
    Moderate,
    Dark,
    Stained,
}

impl StainClass {
    pub fn is_stained(self) -> bool {
        self != StainClass::Unstained
    }

    /// Two-level view used for Ki67.
    pub fn collapsed(self) -> StainClass {
        if self.is_stained() {
            StainClass::Stained
        } else {
            StainClass::Unstained
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StainClass::Unstained => "unstained",
            StainClass::Light => "light",
            StainClass::Moderate => "moderate",
            StainClass::Dark => "dark",
            StainClass::Stained => "stained",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.trim().to_ascii_lowercase().as_str() {
            "unstained" => StainClass::Unstained,
            "light" => StainClass::Light,
            "moderate" => StainClass::Moderate,
            "dark" => StainClass::Dark,
            "stained" => StainClass::Stained,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StainThresholds {
    /// Yellow level separating unstained from stained.
    pub delta_u: f64,
    /// Black level below which a stained nucleus is light.
    pub delta_sl: f64,
    /// Black level above which a stained nucleus is dark.
    pub delta_su: f64,
}

impl Default for StainThresholds {
    fn default() -> Self {
        Self {
            delta_u: 0.3,
            delta_sl: 0.35,
            delta_su: 0.65,
        }
    }
}

impl StainThresholds {
    pub fn validate(&self) -> Result<(), StainError> {
        for (name, v) in [("delta_u", self.delta_u), ("delta_sl", self.delta_sl), ("delta_su", self.delta_su)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(StainError::InvalidThresholds(format!("{name} = {v} outside [0,1]")));
            }
        }
        if self.delta_sl >= self.delta_su {
            return Err(StainError::InvalidThresholds(format!(
                "delta_sl ({}) must be below delta_su ({})",
                self.delta_sl, self.delta_su
            )));
        }
        Ok(())
    }
}

/// Mean CMYK over the mask pixels that fall inside `pixels`.
pub fn mean_cmyk(mask: &PixelRuns, pixels: &RgbImage) -> Option<CmykPixel> {
    let (w, h) = pixels.dimensions();
    let mut acc = [0.0f64; 4];
    let mut n = 0u64;
    for (x, y) in mask.iter_pixels() {
        if x < w && y < h {
            let p = rgb_to_cmyk(pixels.get_pixel(x, y).0);
            acc[0] += p.c;
            acc[1] += p.m;
            acc[2] += p.y;
            acc[3] += p.k;
            n += 1;
        }
    }
    (n > 0).then(|| {
        let n = n as f64;
        CmykPixel {
            c: acc[0] / n,
            m: acc[1] / n,
            y: acc[2] / n,
            k: acc[3] / n,
        }
    })
}

/// Grading rule on a nucleus' mean colour.
pub fn classify_mean(mean: CmykPixel, th: &StainThresholds, marker: Marker) -> StainClass {
    let stained = mean.y > th.delta_u && mean.y > mean.c;
    if !stained {
        return StainClass::Unstained;
    }
    match marker {
        Marker::Ki67 => StainClass::Stained,
        _ => {
            if mean.k < th.delta_sl {
                StainClass::Light
            } else if mean.k > th.delta_su {
                StainClass::Dark
            } else {
                StainClass::Moderate
            }
        }
    }
}

/// Grades one nucleus whose mask is in the frame of `pixels`.
pub fn classify_stain(
    mask: &PixelRuns,
    pixels: &RgbImage,
    th: &StainThresholds,
    marker: Marker,
) -> Result<StainClass, StainError> {
    let mean = mean_cmyk(mask, pixels).ok_or(StainError::EmptyMask)?;
    Ok(classify_mean(mean, th, marker))
}

/// Thresholds fitted to labelled samples plus the per-class sample counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Always `"unit"`: thresholds live on the `[0, 1]` component scale.
    pub scale: String,
    pub thresholds: StainThresholds,
    pub samples_per_class: BTreeMap<StainClass, usize>,
}

fn midpoint_split(lower: &[f64], upper: &[f64]) -> f64 {
    let max_lo = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_hi = upper.iter().copied().fold(f64::INFINITY, f64::min);
    (max_lo + min_hi) / 2.0
}

/// Places each threshold halfway between the neighbouring classes' extremes.
/// Every one of unstained/light/moderate/dark needs at least one sample.
pub fn calibrate_thresholds(samples: &[(CmykPixel, StainClass)]) -> Result<Calibration, StainError> {
    let pick = |class: StainClass, f: fn(&CmykPixel) -> f64| -> Vec<f64> {
        samples.iter().filter(|(_, c)| *c == class).map(|(p, _)| f(p)).collect()
    };
    let y_unstained = pick(StainClass::Unstained, |p| p.y);
    let k_light = pick(StainClass::Light, |p| p.k);
    let k_moderate = pick(StainClass::Moderate, |p| p.k);
    let k_dark = pick(StainClass::Dark, |p| p.k);
    for (vals, class) in [
        (&y_unstained, StainClass::Unstained),
        (&k_light, StainClass::Light),
        (&k_moderate, StainClass::Moderate),
        (&k_dark, StainClass::Dark),
    ] {
        if vals.is_empty() {
            return Err(StainError::MissingClass(class));
        }
    }
    let y_stained: Vec<f64> = samples.iter().filter(|(_, c)| c.is_stained()).map(|(p, _)| p.y).collect();
    let th = StainThresholds {
        delta_u: midpoint_split(&y_unstained, &y_stained),
        delta_sl: midpoint_split(&k_light, &k_moderate),
        delta_su: midpoint_split(&k_moderate, &k_dark),
    };
    if th.delta_sl >= th.delta_su {
        return Err(StainError::NonSeparableClasses(format!(
            "light/moderate split {} is not below moderate/dark split {}",
            th.delta_sl, th.delta_su
        )));
    }
    let mut samples_per_class = BTreeMap::new();
    for (_, c) in samples {
        *samples_per_class.entry(*c).or_insert(0) += 1;
    }
    Ok(Calibration {
        scale: "unit".into(),
        thresholds: th,
        samples_per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cmyk(c: f64, m: f64, y: f64, k: f64) -> CmykPixel {
        CmykPixel { c, m, y, k }
    }

    #[test]
    fn reference_colours() {
        assert_eq!(rgb_to_cmyk([255, 255, 255]), cmyk(0.0, 0.0, 0.0, 0.0));
        assert_eq!(rgb_to_cmyk([0, 0, 255]), cmyk(1.0, 1.0, 0.0, 0.0));
        let brown = rgb_to_cmyk([150, 75, 0]);
        assert_eq!(brown.c, 0.0);
        assert!((brown.y - 1.0).abs() < 1e-12);
        assert!((brown.k - 105.0 / 255.0).abs() < 1e-12);
        assert!((brown.k - 0.412).abs() < 5e-4);
        assert_eq!(rgb_to_cmyk([0, 0, 0]), cmyk(0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn eq5_branches() {
        let th = StainThresholds::default();
        assert_eq!(classify_mean(cmyk(0.9, 0.7, 0.02, 0.3), &th, Marker::Er), StainClass::Unstained);
        assert_eq!(classify_mean(cmyk(0.02, 0.4, 0.9, 0.20), &th, Marker::Er), StainClass::Light);
        assert_eq!(classify_mean(cmyk(0.02, 0.4, 0.9, 0.80), &th, Marker::Er), StainClass::Dark);
        assert_eq!(classify_mean(cmyk(0.02, 0.4, 0.9, 0.50), &th, Marker::Pr), StainClass::Moderate);
        assert_eq!(classify_mean(cmyk(0.02, 0.4, 0.9, 0.50), &th, Marker::Ki67), StainClass::Stained);
        assert_eq!(classify_mean(cmyk(0.9, 0.7, 0.02, 0.3), &th, Marker::Ki67), StainClass::Unstained);
    }

    #[test]
    fn yellow_must_dominate_cyan() {
        let th = StainThresholds::default();
        assert_eq!(classify_mean(cmyk(0.6, 0.2, 0.5, 0.4), &th, Marker::Er), StainClass::Unstained);
    }

    #[test]
    fn empty_mask_is_error() {
        let img = RgbImage::new(4, 4);
        let outside = PixelRuns::from_pixels([(10, 10)]);
        assert_eq!(
            classify_stain(&outside, &img, &StainThresholds::default(), Marker::Er),
            Err(StainError::EmptyMask)
        );
    }

    #[test]
    fn calibration_midpoints() {
        use StainClass::*;
        let mut s = Vec::new();
        for k in [0.1, 0.2, 0.3] {
            s.push((cmyk(0.0, 0.4, 0.5, k), Light));
        }
        for k in [0.4, 0.5, 0.6] {
            s.push((cmyk(0.0, 0.4, 0.7, k), Moderate));
        }
        for k in [0.7, 0.8, 0.9] {
            s.push((cmyk(0.0, 0.4, 1.0, k), Dark));
        }
        for y in [0.0, 0.05, 0.1] {
            s.push((cmyk(0.8, 0.5, y, 0.3), Unstained));
        }
        let cal = calibrate_thresholds(&s).unwrap();
        assert!((cal.thresholds.delta_sl - 0.35).abs() < 1e-12);
        assert!((cal.thresholds.delta_su - 0.65).abs() < 1e-12);
        assert!((cal.thresholds.delta_u - 0.3).abs() < 1e-12);
        assert_eq!(cal.samples_per_class[&Dark], 3);
        for (p, c) in &s {
            assert_eq!(classify_mean(*p, &cal.thresholds, Marker::Er), *c);
        }
    }

    #[test]
    fn calibration_needs_every_class() {
        let s = vec![
            (cmyk(0.8, 0.5, 0.0, 0.3), StainClass::Unstained),
            (cmyk(0.0, 0.4, 0.5, 0.2), StainClass::Light),
            (cmyk(0.0, 0.4, 0.7, 0.5), StainClass::Moderate),
        ];
        assert_eq!(calibrate_thresholds(&s), Err(StainError::MissingClass(StainClass::Dark)));
    }

    #[test]
    fn overlapping_k_ranges_are_not_separable() {
        let s = vec![
            (cmyk(0.8, 0.5, 0.0, 0.3), StainClass::Unstained),
            (cmyk(0.0, 0.4, 0.5, 0.7), StainClass::Light),
            (cmyk(0.0, 0.4, 0.7, 0.5), StainClass::Moderate),
            (cmyk(0.0, 0.4, 0.7, 0.2), StainClass::Dark),
        ];
        assert!(matches!(calibrate_thresholds(&s), Err(StainError::NonSeparableClasses(_))));
    }

    #[test]
    fn threshold_validation() {
        assert!(StainThresholds::default().validate().is_ok());
        let bad = StainThresholds {
            delta_sl: 0.7,
            ..StainThresholds::default()
        };
        assert!(bad.validate().is_err());
    }
}
