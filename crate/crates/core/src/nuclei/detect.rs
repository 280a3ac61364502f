//! Classical nucleus detector used when no external instance masks are given.
//!
//! Pixels whose cyan/yellow balance marks them as hematoxylin-blue or
//! DAB-brown form the candidate map. Its 8-connected components are area
//! filtered; components above the area ceiling are split at well separated
//! maxima of their distance transform, or dropped if they have only one.

use super::edt::squared_distance_transform;
use super::{Frame, NucleusInstance};
use crate::mask::PixelRuns;
use crate::slideio::Patch;
use crate::stain::rgb_to_cmyk;
use image::RgbImage;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// A pixel is blue-dominant when `C - Y` reaches this margin and
    /// brown-dominant when `Y - C` does. Unit CMYK scale.
    pub dominance_margin: f64,
    pub min_area_px: u64,
    pub max_area_px: u64,
    /// Minimum spacing between two distance-transform maxima for a split.
    pub split_min_distance_px: f64,
    /// Maxima closer than this to the background are ignored.
    pub min_peak_radius_px: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            dominance_margin: 0.2,
            min_area_px: 20,
            max_area_px: 400,
            split_min_distance_px: 6.0,
            min_peak_radius_px: 2.0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0 < self.min_area_px && self.min_area_px < self.max_area_px) {
            return Err(format!(
                "min_area_px ({}) must be positive and below max_area_px ({})",
                self.min_area_px, self.max_area_px
            ));
        }
        if !(self.split_min_distance_px > 0.0) {
            return Err("split_min_distance_px must be positive".into());
        }
        Ok(())
    }
}

#[inline]
fn is_nuclear(p: [u8; 3], margin: f64) -> bool {
    let c = rgb_to_cmyk(p);
    c.c - c.y >= margin || c.y - c.c >= margin
}

/// Row-major candidate map of nuclear pixels.
pub fn nuclear_candidate_map(pixels: &RgbImage, margin: f64) -> Vec<bool> {
    pixels.pixels().map(|p| is_nuclear(p.0, margin)).collect()
}

fn connected_components(fg: &[bool], w: usize, h: usize) -> Vec<Vec<(u32, u32)>> {
    let mut label = vec![u32::MAX; w * h];
    let mut comps = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !fg[start] || label[start] != u32::MAX {
            continue;
        }
        let id = comps.len() as u32;
        let mut pixels = Vec::new();
        label[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            pixels.push((x as u32, y as u32));
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if fg[j] && label[j] == u32::MAX {
                        label[j] = id;
                        stack.push(j);
                    }
                }
            }
        }
        comps.push(pixels);
    }
    comps
}

/// Splits one component at its distance-transform maxima. Returns `None`
/// when fewer than two maxima survive suppression.
fn split_component(pixels: &[(u32, u32)], cfg: &DetectorConfig) -> Option<Vec<Vec<(u32, u32)>>> {
    let x0 = pixels.iter().map(|p| p.0).min()? as i64 - 1;
    let y0 = pixels.iter().map(|p| p.1).min()? as i64 - 1;
    let x1 = pixels.iter().map(|p| p.0).max()? as i64 + 2;
    let y1 = pixels.iter().map(|p| p.1).max()? as i64 + 2;
    let (w, h) = ((x1 - x0) as usize, (y1 - y0) as usize);
    let mut fg = vec![false; w * h];
    for &(x, y) in pixels {
        fg[(y as i64 - y0) as usize * w + (x as i64 - x0) as usize] = true;
    }
    let dist = squared_distance_transform(&fg, w, h);
    let min_peak = cfg.min_peak_radius_px * cfg.min_peak_radius_px;

    let mut peaks: Vec<(f64, usize, usize)> = Vec::new();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let d = dist[y * w + x];
            if !fg[y * w + x] || d < min_peak {
                continue;
            }
            let is_max = (-1i64..=1).all(|dy| {
                (-1i64..=1).all(|dx| dist[(y as i64 + dy) as usize * w + (x as i64 + dx) as usize] <= d)
            });
            if is_max {
                peaks.push((d, x, y));
            }
        }
    }
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));
    let sep2 = cfg.split_min_distance_px * cfg.split_min_distance_px;
    let mut seeds: Vec<(f64, f64)> = Vec::new();
    for &(_, x, y) in &peaks {
        let (px, py) = (x as f64, y as f64);
        if seeds.iter().all(|&(sx, sy)| (sx - px).powi(2) + (sy - py).powi(2) >= sep2) {
            seeds.push((px, py));
        }
    }
    if seeds.len() < 2 {
        return None;
    }
    let mut parts = vec![Vec::new(); seeds.len()];
    for &(x, y) in pixels {
        let (lx, ly) = ((x as i64 - x0) as f64, (y as i64 - y0) as f64);
        let nearest = seeds
            .iter()
            .enumerate()
            .map(|(i, &(sx, sy))| (i, (sx - lx).powi(2) + (sy - ly).powi(2)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
            .expect("at least two seeds");
        parts[nearest].push((x, y));
    }
    Some(parts)
}

/// Detects nuclei in one patch. Instances are in the patch frame and carry
/// ids `1..=n` in row-major order of their first pixel.
pub fn detect_nuclei_baseline(patch: &Patch, cfg: &DetectorConfig) -> Vec<NucleusInstance> {
    detect_in_pixels(&patch.pixels, cfg)
}

pub(crate) fn detect_in_pixels(pixels: &RgbImage, cfg: &DetectorConfig) -> Vec<NucleusInstance> {
    let (w, h) = (pixels.width() as usize, pixels.height() as usize);
    let fg = nuclear_candidate_map(pixels, cfg.dominance_margin);
    let mut out = Vec::new();
    for comp in connected_components(&fg, w, h) {
        let area = comp.len() as u64;
        if area < cfg.min_area_px {
            continue;
        }
        let parts = if area > cfg.max_area_px {
            match split_component(&comp, cfg) {
                Some(parts) => parts,
                None => {
                    log::debug!("dropping unsplittable component of {area} px");
                    continue;
                }
            }
        } else {
            vec![comp]
        };
        for part in parts {
            if (part.len() as u64) < cfg.min_area_px {
                continue;
            }
            let id = out.len() as u64 + 1;
            if let Some(inst) = NucleusInstance::from_mask(id, PixelRuns::from_pixels(part), Frame::Patch) {
                out.push(inst);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    const BLUE: Rgb<u8> = Rgb([53, 89, 178]);

    fn canvas(w: u32, h: u32) -> RgbImage {
        RgbImage::from_pixel(w, h, Rgb([255, 255, 255]))
    }

    fn disk(img: &mut RgbImage, cx: i64, cy: i64, r: i64, c: Rgb<u8>) {
        for y in cy - r..=cy + r {
            for x in cx - r..=cx + r {
                if (x - cx).pow(2) + (y - cy).pow(2) <= r * r {
                    img.put_pixel(x as u32, y as u32, c);
                }
            }
        }
    }

    #[test]
    fn three_disjoint_disks() {
        let mut img = canvas(100, 60);
        for cx in [20, 50, 80] {
            disk(&mut img, cx, 30, 6, BLUE);
        }
        let got = detect_in_pixels(&img, &DetectorConfig::default());
        assert_eq!(got.len(), 3);
        let mut cx: Vec<f64> = got.iter().map(|n| n.centroid.0).collect();
        cx.sort_by(f64::total_cmp);
        assert_eq!(cx, vec![20.0, 50.0, 80.0]);
        assert!(got.iter().all(|n| n.centroid.1 == 30.0));
    }

    #[test]
    fn small_disk_filtered_by_area() {
        let mut img = canvas(100, 60);
        disk(&mut img, 20, 30, 6, BLUE);
        disk(&mut img, 50, 30, 6, BLUE);
        disk(&mut img, 80, 30, 2, BLUE); // 13 px < 20
        assert_eq!(detect_in_pixels(&img, &DetectorConfig::default()).len(), 2);
    }

    #[test]
    fn dumbbell_splits_into_planted_disks() {
        let mut img = canvas(80, 60);
        let centers = [(28, 30), (44, 30)];
        let brown = Rgb([140, 70, 0]);
        for &(cx, cy) in &centers {
            disk(&mut img, cx, cy, 10, brown);
        }
        let cfg = DetectorConfig {
            max_area_px: 400,
            ..DetectorConfig::default()
        };
        let got = detect_in_pixels(&img, &cfg);
        assert_eq!(got.len(), centers.len());
        for n in &got {
            let nearest = centers
                .iter()
                .map(|&(x, y)| ((n.centroid.0 - x as f64).powi(2) + (n.centroid.1 - y as f64).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest < 3.0, "centroid {:?} far from planted centre", n.centroid);
        }
        let total: u64 = got.iter().map(|n| n.area_px).sum();
        assert_eq!(total as usize, img.pixels().filter(|p| **p == brown).count());
    }

    #[test]
    fn oversized_single_blob_is_dropped() {
        let mut img = canvas(80, 80);
        disk(&mut img, 40, 40, 14, BLUE); // ~600 px, one maximum
        assert!(detect_in_pixels(&img, &DetectorConfig::default()).is_empty());
    }

    #[test]
    fn background_and_pink_stroma_are_not_nuclear() {
        assert!(!is_nuclear([255, 255, 255], 0.2));
        assert!(!is_nuclear([235, 200, 215], 0.2));
        assert!(is_nuclear([150, 75, 0], 0.2));
        assert!(is_nuclear([53, 89, 178], 0.2));
    }

    #[test]
    fn instances_are_disjoint() {
        let mut img = canvas(80, 60);
        disk(&mut img, 28, 30, 10, BLUE);
        disk(&mut img, 44, 30, 10, BLUE);
        disk(&mut img, 70, 10, 5, BLUE);
        let got = detect_in_pixels(&img, &DetectorConfig::default());
        for (i, a) in got.iter().enumerate() {
            for b in &got[i + 1..] {
                assert_eq!(a.mask.intersection_area(&b.mask), 0);
            }
        }
    }
}
