use super::Her2Error;
use crate::mask::BinaryMask;
use crate::nuclei::NucleusInstance;
use crate::stain::rgb_to_cmyk;
use image::RgbImage;
use serde::{Deserialize, Serialize};

/// One scored region: its pixels, a semantic membrane mask and the nuclei
/// inside it, all in the region's own pixel frame.
#[derive(Debug, Clone)]
pub struct MembraneRegion {
    pub id: String,
    pub pixels: RgbImage,
    pub membrane: BinaryMask,
    pub nuclei: Vec<NucleusInstance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub bins: usize,
    /// Dilation radius of the ring tested around each nucleus.
    pub ring_radius_px: u32,
    /// Ring coverage at or above which a membrane counts as complete.
    pub ring_completeness_frac: f64,
    /// Nuclei/membrane ratio reported when the membrane mask is empty.
    pub ratio_cap: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            bins: 16,
            ring_radius_px: 2,
            ring_completeness_frac: 0.9,
            ratio_cap: 10.0,
        }
    }
}

/// Additive raw counts behind a feature vector. Summing the counts of
/// several regions gives the counts of their union.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureCounts {
    pub membrane_hist: Vec<u64>,
    pub nuclei_hist: Vec<u64>,
    pub membrane_px: u64,
    pub nuclei_px: u64,
    pub n_nuclei: u64,
    pub n_complete: u64,
}

impl FeatureCounts {
    pub fn zero(bins: usize) -> Self {
        Self {
            membrane_hist: vec![0; bins],
            nuclei_hist: vec![0; bins],
            membrane_px: 0,
            nuclei_px: 0,
            n_nuclei: 0,
            n_complete: 0,
        }
    }

    pub fn merge(&mut self, other: &FeatureCounts) {
        for (a, b) in self.membrane_hist.iter_mut().zip(&other.membrane_hist) {
            *a += b;
        }
        for (a, b) in self.nuclei_hist.iter_mut().zip(&other.nuclei_hist) {
            *a += b;
        }
        self.membrane_px += other.membrane_px;
        self.nuclei_px += other.nuclei_px;
        self.n_nuclei += other.n_nuclei;
        self.n_complete += other.n_complete;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Her2FeatureVector {
    pub membrane_color_hist: Vec<f64>,
    pub nuclei_color_hist: Vec<f64>,
    pub hist_skewness: f64,
    pub nuclei_membrane_ratio: f64,
    pub pct_complete_membrane: f64,
    pub counts: FeatureCounts,
}

fn normalise(h: &[u64]) -> Vec<f64> {
    let total: u64 = h.iter().sum();
    if total == 0 {
        vec![0.0; h.len()]
    } else {
        h.iter().map(|&c| c as f64 / total as f64).collect()
    }
}

/// Standardised third moment of a histogram over its bin centres on `[0,1]`.
fn skewness(h: &[f64]) -> f64 {
    let n = h.len() as f64;
    let centre = |i: usize| (i as f64 + 0.5) / n;
    let mass: f64 = h.iter().sum();
    if mass == 0.0 {
        return 0.0;
    }
    let mean = h.iter().enumerate().map(|(i, w)| w * centre(i)).sum::<f64>() / mass;
    let m2 = h.iter().enumerate().map(|(i, w)| w * (centre(i) - mean).powi(2)).sum::<f64>() / mass;
    let m3 = h.iter().enumerate().map(|(i, w)| w * (centre(i) - mean).powi(3)).sum::<f64>() / mass;
    if m2 <= 0.0 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

impl Her2FeatureVector {
    pub fn from_counts(counts: FeatureCounts, cfg: &FeatureConfig) -> Self {
        let membrane_color_hist = normalise(&counts.membrane_hist);
        let nuclei_color_hist = normalise(&counts.nuclei_hist);
        let hist_skewness = skewness(&membrane_color_hist);
        let nuclei_membrane_ratio = if counts.membrane_px == 0 {
            cfg.ratio_cap
        } else {
            counts.nuclei_px as f64 / counts.membrane_px as f64
        };
        let pct_complete_membrane = if counts.n_nuclei == 0 {
            0.0
        } else {
            100.0 * counts.n_complete as f64 / counts.n_nuclei as f64
        };
        Self {
            membrane_color_hist,
            nuclei_color_hist,
            hist_skewness,
            nuclei_membrane_ratio,
            pct_complete_membrane,
            counts,
        }
    }

    /// Vector of the regions pooled into one.
    pub fn pooled<'a>(vectors: impl IntoIterator<Item = &'a Her2FeatureVector>, cfg: &FeatureConfig) -> Option<Self> {
        let mut it = vectors.into_iter();
        let mut acc = it.next()?.counts.clone();
        for v in it {
            acc.merge(&v.counts);
        }
        Some(Self::from_counts(acc, cfg))
    }

    /// Model input: both histograms, then skewness, ratio and completeness.
    pub fn values(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.membrane_color_hist.len() * 2 + 3);
        v.extend(&self.membrane_color_hist);
        v.extend(&self.nuclei_color_hist);
        v.push(self.hist_skewness);
        v.push(self.nuclei_membrane_ratio);
        v.push(self.pct_complete_membrane);
        v
    }

    pub fn value_names(bins: usize) -> Vec<String> {
        let mut v: Vec<String> = (0..bins).map(|i| format!("membrane_hist_{i:02}")).collect();
        v.extend((0..bins).map(|i| format!("nuclei_hist_{i:02}")));
        v.extend(["hist_skewness", "nuclei_membrane_ratio", "pct_complete_membrane"].map(String::from));
        v
    }

    /// Flat column names for tabular export; counts follow the values.
    pub fn column_names(bins: usize) -> Vec<String> {
        let mut v = Self::value_names(bins);
        v.extend((0..bins).map(|i| format!("membrane_count_{i:02}")));
        v.extend((0..bins).map(|i| format!("nuclei_count_{i:02}")));
        v.extend(["membrane_px", "nuclei_px", "n_nuclei", "n_complete"].map(String::from));
        v
    }

    pub fn to_columns(&self) -> Vec<String> {
        let mut v: Vec<String> = self.values().iter().map(|x| x.to_string()).collect();
        let c = &self.counts;
        v.extend(c.membrane_hist.iter().chain(&c.nuclei_hist).map(|x| x.to_string()));
        v.extend([c.membrane_px, c.nuclei_px, c.n_nuclei, c.n_complete].map(|x| x.to_string()));
        v
    }

    /// Rebuilds a vector from [`Self::to_columns`] output. Derived values are
    /// recomputed from the counts.
    pub fn from_columns(cols: &[&str], cfg: &FeatureConfig) -> Result<Self, String> {
        let b = cfg.bins;
        let expected = Self::column_names(b).len();
        if cols.len() != expected {
            return Err(format!("expected {expected} feature columns, found {}", cols.len()));
        }
        let ints: Result<Vec<u64>, String> = cols[2 * b + 3..]
            .iter()
            .map(|s| s.trim().parse::<u64>().map_err(|e| format!("bad count {s:?}: {e}")))
            .collect();
        let ints = ints?;
        let counts = FeatureCounts {
            membrane_hist: ints[..b].to_vec(),
            nuclei_hist: ints[b..2 * b].to_vec(),
            membrane_px: ints[2 * b],
            nuclei_px: ints[2 * b + 1],
            n_nuclei: ints[2 * b + 2],
            n_complete: ints[2 * b + 3],
        };
        Ok(Self::from_counts(counts, cfg))
    }
}

fn luminance_bin(p: [u8; 3], bins: usize) -> usize {
    let l = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
    ((l * bins as f64 / 256.0) as usize).min(bins - 1)
}

fn disk_offsets(r: u32) -> Vec<(i64, i64)> {
    let r = r as i64;
    let mut v = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r && (dx, dy) != (0, 0) {
                v.push((dx, dy));
            }
        }
    }
    v
}

pub fn extract_features(region: &MembraneRegion, cfg: &FeatureConfig) -> Result<Her2FeatureVector, Her2Error> {
    let (w, h) = region.pixels.dimensions();
    if cfg.bins == 0 {
        return Err(Her2Error::InvalidConfig("bins must be positive".into()));
    }
    if (region.membrane.width(), region.membrane.height()) != (w, h) {
        return Err(Her2Error::FrameMismatch {
            id: region.id.clone(),
            reason: format!(
                "membrane mask {}x{} vs pixels {w}x{h}",
                region.membrane.width(),
                region.membrane.height()
            ),
        });
    }
    if w == 0 || h == 0 || (region.membrane.count() == 0 && region.nuclei.is_empty()) {
        return Err(Her2Error::EmptyRegion(region.id.clone()));
    }
    let mut counts = FeatureCounts::zero(cfg.bins);
    for (x, y) in region.membrane.iter_set() {
        counts.membrane_hist[luminance_bin(region.pixels.get_pixel(x, y).0, cfg.bins)] += 1;
    }
    counts.membrane_px = region.membrane.count();

    let mut nuclear = BinaryMask::new(w, h, region.membrane.level());
    for n in &region.nuclei {
        for (x, y) in n.mask.iter_pixels() {
            if x < w && y < h {
                nuclear.set(x, y, true);
            }
        }
    }
    for (x, y) in nuclear.iter_set() {
        counts.nuclei_hist[luminance_bin(region.pixels.get_pixel(x, y).0, cfg.bins)] += 1;
    }
    counts.nuclei_px = nuclear.count();
    counts.n_nuclei = region.nuclei.len() as u64;

    let offsets = disk_offsets(cfg.ring_radius_px);
    let mut seen = BinaryMask::new(w, h, 0);
    for n in &region.nuclei {
        let mut ring = Vec::new();
        for (x, y) in n.mask.iter_pixels() {
            for &(dx, dy) in &offsets {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let (nx, ny) = (nx as u32, ny as u32);
                if !nuclear.get(nx, ny) && !seen.get(nx, ny) {
                    seen.set(nx, ny, true);
                    ring.push((nx, ny));
                }
            }
        }
        let covered = ring.iter().filter(|&&(x, y)| region.membrane.get(x, y)).count();
        if !ring.is_empty() && covered as f64 >= cfg.ring_completeness_frac * ring.len() as f64 {
            counts.n_complete += 1;
        }
        for (x, y) in ring {
            seen.set(x, y, false);
        }
    }
    Ok(Her2FeatureVector::from_counts(counts, cfg))
}

/// DAB-threshold membrane stand-in: brown-dominant pixels outside nuclei.
pub fn membrane_baseline(pixels: &RgbImage, nuclei: &[NucleusInstance], min_yellow_minus_cyan: f64) -> BinaryMask {
    let (w, h) = pixels.dimensions();
    let mut m = BinaryMask::from_fn(w, h, 0, |x, y| {
        let c = rgb_to_cmyk(pixels.get_pixel(x, y).0);
        c.y - c.c >= min_yellow_minus_cyan
    });
    for n in nuclei {
        for (x, y) in n.mask.iter_pixels() {
            if x < w && y < h {
                m.set(x, y, false);
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::PixelRuns;
    use crate::nuclei::Frame;
    use image::Rgb;

    fn disk_px(cx: i64, cy: i64, r: i64) -> Vec<(u32, u32)> {
        let mut v = Vec::new();
        for y in cy - r..=cy + r {
            for x in cx - r..=cx + r {
                if (x - cx).pow(2) + (y - cy).pow(2) <= r * r {
                    v.push((x as u32, y as u32));
                }
            }
        }
        v
    }

    fn region(ring_outer: Option<i64>) -> MembraneRegion {
        let mut pixels = RgbImage::from_pixel(64, 64, Rgb([240, 240, 240]));
        let mut nuclei = Vec::new();
        let mut membrane = BinaryMask::new(64, 64, 0);
        for (i, &(cx, cy)) in [(16, 16), (46, 20), (30, 46)].iter().enumerate() {
            let px = disk_px(cx, cy, 5);
            for &(x, y) in &px {
                pixels.put_pixel(x, y, Rgb([60, 90, 180]));
            }
            if let Some(r) = ring_outer {
                for (x, y) in disk_px(cx, cy, r) {
                    if !px.contains(&(x, y)) {
                        membrane.set(x, y, true);
                        pixels.put_pixel(x, y, Rgb([120, 60, 0]));
                    }
                }
            }
            nuclei.push(NucleusInstance::from_mask(i as u64 + 1, PixelRuns::from_pixels(px), Frame::Patch).unwrap());
        }
        MembraneRegion {
            id: "r".into(),
            pixels,
            membrane,
            nuclei,
        }
    }

    #[test]
    fn complete_rings_give_100() {
        let f = extract_features(&region(Some(8)), &FeatureConfig::default()).unwrap();
        assert_eq!(f.pct_complete_membrane, 100.0);
        assert!((f.membrane_color_hist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((f.nuclei_color_hist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn thin_ring_is_incomplete() {
        // radius-6 disk minus radius-5 disk does not cover the 2 px ring
        let f = extract_features(&region(Some(6)), &FeatureConfig::default()).unwrap();
        assert_eq!(f.pct_complete_membrane, 0.0);
    }

    #[test]
    fn no_membrane_hits_cap() {
        let cfg = FeatureConfig::default();
        let f = extract_features(&region(None), &cfg).unwrap();
        assert_eq!(f.nuclei_membrane_ratio, cfg.ratio_cap);
        assert_eq!(f.pct_complete_membrane, 0.0);
        assert!(f.membrane_color_hist.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn equal_areas_ratio_one() {
        let mut pixels = RgbImage::new(10, 10);
        pixels.put_pixel(0, 0, Rgb([1, 2, 3]));
        let membrane = BinaryMask::from_fn(10, 10, 0, |x, y| y < 2 && x < 5);
        let nuc = PixelRuns::from_pixels((0..10).map(|x| (x, 8)));
        let r = MembraneRegion {
            id: "e".into(),
            pixels,
            membrane,
            nuclei: vec![NucleusInstance::from_mask(1, nuc, Frame::Patch).unwrap()],
        };
        assert_eq!(extract_features(&r, &FeatureConfig::default()).unwrap().nuclei_membrane_ratio, 1.0);
    }

    #[test]
    fn symmetric_bimodal_has_zero_skew() {
        let mut h = vec![0.0; 16];
        h[2] = 0.5;
        h[13] = 0.5;
        assert_eq!(skewness(&h), 0.0);
        let mut r = vec![0.0; 16];
        r[1] = 0.8;
        r[14] = 0.2;
        assert!(skewness(&r) > 0.0);
    }

    #[test]
    fn empty_region_rejected() {
        let r = MembraneRegion {
            id: "z".into(),
            pixels: RgbImage::new(8, 8),
            membrane: BinaryMask::new(8, 8, 0),
            nuclei: vec![],
        };
        assert!(matches!(extract_features(&r, &FeatureConfig::default()), Err(Her2Error::EmptyRegion(_))));
    }

    #[test]
    fn columns_round_trip_and_pooling() {
        let cfg = FeatureConfig::default();
        let f = extract_features(&region(Some(8)), &cfg).unwrap();
        let cols = f.to_columns();
        let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
        assert_eq!(Her2FeatureVector::from_columns(&refs, &cfg).unwrap(), f);
        assert_eq!(Her2FeatureVector::pooled([&f], &cfg).unwrap(), f);
        let g = extract_features(&region(None), &cfg).unwrap();
        let p = Her2FeatureVector::pooled([&f, &g], &cfg).unwrap();
        assert_eq!(p.counts.n_nuclei, 6);
        assert_eq!(p.pct_complete_membrane, 50.0);
    }
}
