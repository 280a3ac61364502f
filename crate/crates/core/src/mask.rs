//! Raster masks shared by every stage of the pipeline.
//!
//! [`BinaryMask`] is a dense bitset tied to a pyramid level. [`PixelRuns`] is a
//! sparse row-run encoding used for individual nucleus instances, where a dense
//! raster per object would waste space.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

/// A dense binary raster in the coordinate frame of one pyramid level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    level: usize,
    words: Vec<u64>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, level: usize) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            level,
            words: vec![0; n.div_ceil(64)],
        }
    }

    pub fn full(width: u32, height: u32, level: usize) -> Self {
        let mut m = Self::new(width, height, level);
        for y in 0..height {
            m.fill_row_span(y, 0, width);
        }
        m
    }

    pub fn from_fn(width: u32, height: u32, level: usize, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut m = Self::new(width, height, level);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    /// Pyramid level whose pixel grid this mask is laid on.
    #[inline]
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn with_level(mut self, level: usize) -> Self {
        self.level = level;
        self
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    /// Returns false for coordinates outside the raster.
    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        if x >= self.width || y >= self.height {
            return false;
        }
        let i = self.index(x, y);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        assert!(x < self.width && y < self.height, "pixel ({x},{y}) out of mask bounds");
        let i = self.index(x, y);
        if value {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    fn fill_row_span(&mut self, y: u32, x0: u32, x1: u32) {
        for x in x0..x1 {
            self.set(x, y, true);
        }
    }

    /// Number of set pixels.
    pub fn count(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    /// Set pixels inside the half-open rectangle `[x0,x1) × [y0,y1)`, clipped to the raster.
    pub fn count_in_rect(&self, x0: u32, y0: u32, x1: u32, y1: u32) -> u64 {
        let x1 = x1.min(self.width);
        let y1 = y1.min(self.height);
        let mut n = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                n += self.get(x, y) as u64;
            }
        }
        n
    }

    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        (0..self.len()).filter_map(move |i| {
            if self.words[i / 64] >> (i % 64) & 1 == 1 {
                Some(((i % w) as u32, (i / w) as u32))
            } else {
                None
            }
        })
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn and(&self, other: &Self) -> Self {
        assert!(self.same_shape(other));
        let mut out = self.clone();
        out.words.iter_mut().zip(&other.words).for_each(|(a, b)| *a &= b);
        out
    }

    pub fn or(&self, other: &Self) -> Self {
        assert!(self.same_shape(other));
        let mut out = self.clone();
        out.words.iter_mut().zip(&other.words).for_each(|(a, b)| *a |= b);
        out
    }

    pub fn not(&self) -> Self {
        let mut out = self.clone();
        out.words.iter_mut().for_each(|w| *w = !*w);
        out.clear_tail();
        out
    }

    fn clear_tail(&mut self) {
        let n = self.len();
        if !n.is_multiple_of(64) {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << (n % 64)) - 1;
            }
        }
    }

    /// Row-major linear runs `(start, len)` of set pixels.
    pub fn to_linear_runs(&self) -> Vec<(u64, u64)> {
        let mut runs = Vec::new();
        let mut start: Option<u64> = None;
        for i in 0..self.len() as u64 {
            let bit = self.words[(i / 64) as usize] >> (i % 64) & 1 == 1;
            match (bit, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push((s, i - s));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, self.len() as u64 - s));
        }
        runs
    }

    /// Inverse of [`Self::to_linear_runs`]. Returns `None` if any run leaves the raster.
    pub fn from_linear_runs(width: u32, height: u32, level: usize, runs: &[(u64, u64)]) -> Option<Self> {
        let mut m = Self::new(width, height, level);
        let total = m.len() as u64;
        for &(start, len) in runs {
            let end = start.checked_add(len)?;
            if end > total {
                return None;
            }
            for i in start..end {
                m.words[(i / 64) as usize] |= 1 << (i % 64);
            }
        }
        Some(m)
    }

    /// Nearest-neighbour resample onto a grid that is `factor` times coarser.
    /// A coarse pixel is set iff the fine pixel at its top-left corner is set.
    pub fn downsample_nearest(&self, factor: u32, level: usize) -> Self {
        assert!(factor >= 1);
        let w = self.width.div_ceil(factor);
        let h = self.height.div_ceil(factor);
        Self::from_fn(w, h, level, |x, y| self.get(x * factor, y * factor))
    }
}

/// One horizontal run of set pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Run {
    pub y: u32,
    pub x: u32,
    pub len: u32,
}

impl Run {
    #[inline]
    pub fn end(&self) -> u32 {
        self.x + self.len
    }
}

impl PartialOrd for Run {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Run {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.y, self.x, self.len).cmp(&(other.y, other.x, other.len))
    }
}

/// Axis-aligned bounding box, inclusive-exclusive: `[x0,x1) × [y0,y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn intersects(&self, other: &BBox) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

/// A pixel set stored as sorted, non-overlapping, non-adjacent row runs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PixelRuns {
    runs: Vec<Run>,
}

impl PixelRuns {
    pub fn from_pixels(pixels: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut px: Vec<(u32, u32)> = pixels.into_iter().map(|(x, y)| (y, x)).collect();
        px.sort_unstable();
        px.dedup();
        let mut runs: Vec<Run> = Vec::new();
        for (y, x) in px {
            match runs.last_mut() {
                Some(r) if r.y == y && r.end() == x => r.len += 1,
                _ => runs.push(Run { y, x, len: 1 }),
            }
        }
        Self { runs }
    }

    /// Normalises arbitrary runs: sorts, merges overlaps and drops empty runs.
    pub fn from_runs(mut runs: Vec<Run>) -> Self {
        runs.retain(|r| r.len > 0);
        runs.sort_unstable();
        let mut out: Vec<Run> = Vec::with_capacity(runs.len());
        for r in runs {
            match out.last_mut() {
                Some(last) if last.y == r.y && r.x <= last.end() => {
                    let end = last.end().max(r.end());
                    last.len = end - last.x;
                }
                _ => out.push(r),
            }
        }
        Self { runs: out }
    }

    pub fn runs(&self) -> &[Run] {
        &self.runs
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn area(&self) -> u64 {
        self.runs.iter().map(|r| r.len as u64).sum()
    }

    /// Mean pixel coordinate. `None` for an empty set.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let area = self.area();
        if area == 0 {
            return None;
        }
        let (mut sx, mut sy) = (0f64, 0f64);
        for r in &self.runs {
            let n = r.len as f64;
            // sum of x over x..x+len-1
            sx += n * r.x as f64 + n * (n - 1.0) / 2.0;
            sy += n * r.y as f64;
        }
        Some((sx / area as f64, sy / area as f64))
    }

    pub fn bbox(&self) -> Option<BBox> {
        let first = self.runs.first()?;
        let last = self.runs.last()?;
        let x0 = self.runs.iter().map(|r| r.x).min()?;
        let x1 = self.runs.iter().map(|r| r.end()).max()?;
        Some(BBox {
            x0,
            y0: first.y,
            x1,
            y1: last.y + 1,
        })
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        let idx = self.runs.partition_point(|r| (r.y, r.x) <= (y, x));
        idx > 0 && {
            let r = &self.runs[idx - 1];
            r.y == y && x < r.end()
        }
    }

    pub fn iter_pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.runs.iter().flat_map(|r| (r.x..r.end()).map(move |x| (x, r.y)))
    }

    pub fn intersection_area(&self, other: &Self) -> u64 {
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.runs, &other.runs);
        let mut total = 0u64;
        while i < a.len() && j < b.len() {
            let (ra, rb) = (a[i], b[j]);
            if ra.y != rb.y {
                if ra.y < rb.y {
                    i += 1;
                } else {
                    j += 1;
                }
                continue;
            }
            let lo = ra.x.max(rb.x);
            let hi = ra.end().min(rb.end());
            if hi > lo {
                total += (hi - lo) as u64;
            }
            if ra.end() < rb.end() {
                i += 1;
            } else {
                j += 1;
            }
        }
        total
    }

    /// Intersection over union of two pixel sets; two empty sets have IoU 1.
    pub fn iou(&self, other: &Self) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn translate(&self, dx: u32, dy: u32) -> Self {
        Self {
            runs: self
                .runs
                .iter()
                .map(|r| Run {
                    y: r.y + dy,
                    x: r.x + dx,
                    len: r.len,
                })
                .collect(),
        }
    }

    /// Nearest-neighbour upsampling: every pixel becomes a `factor × factor` block.
    pub fn upscale(&self, factor: u32) -> Self {
        if factor == 1 {
            return self.clone();
        }
        let mut runs = Vec::with_capacity(self.runs.len() * factor as usize);
        for r in &self.runs {
            for dy in 0..factor {
                runs.push(Run {
                    y: r.y * factor + dy,
                    x: r.x * factor,
                    len: r.len * factor,
                });
            }
        }
        Self::from_runs(runs)
    }

    /// Whether any pixel lies on the given column or row.
    pub fn touches_column(&self, x: u32) -> bool {
        self.runs.iter().any(|r| r.x <= x && x < r.end())
    }

    pub fn touches_row(&self, y: u32) -> bool {
        self.runs.iter().any(|r| r.y == y)
    }
}

/// Total order used wherever instances must sort deterministically.
pub(crate) fn cmp_point(a: (f64, f64), b: (f64, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x0: u32, y0: u32, x1: u32, y1: u32) -> PixelRuns {
        PixelRuns::from_pixels((y0..y1).flat_map(|y| (x0..x1).map(move |x| (x, y))))
    }

    #[test]
    fn runs_merge_adjacent_pixels() {
        let r = PixelRuns::from_pixels([(3, 1), (1, 1), (2, 1), (5, 1), (0, 0)]);
        assert_eq!(
            r.runs(),
            &[Run { y: 0, x: 0, len: 1 }, Run { y: 1, x: 1, len: 3 }, Run { y: 1, x: 5, len: 1 }]
        );
        assert_eq!(r.area(), 5);
        assert!(r.contains(2, 1));
        assert!(!r.contains(4, 1));
    }

    #[test]
    fn centroid_of_rectangle() {
        let r = rect(2, 4, 6, 8);
        assert_eq!(r.centroid(), Some((3.5, 5.5)));
        assert_eq!(r.bbox(), Some(BBox { x0: 2, y0: 4, x1: 6, y1: 8 }));
    }

    #[test]
    fn half_overlap_iou_is_one_third() {
        let a = rect(0, 0, 10, 10);
        let b = rect(0, 5, 10, 15);
        assert_eq!(a.intersection_area(&b), 50);
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn upscale_scales_area() {
        let r = rect(1, 1, 3, 2);
        let up = r.upscale(4);
        assert_eq!(up.area(), r.area() * 16);
        assert_eq!(up.bbox(), Some(BBox { x0: 4, y0: 4, x1: 12, y1: 8 }));
    }

    #[test]
    fn bitmask_linear_runs_round_trip() {
        let m = BinaryMask::from_fn(7, 5, 1, |x, y| (x + 2 * y) % 3 == 0);
        let runs = m.to_linear_runs();
        let back = BinaryMask::from_linear_runs(7, 5, 1, &runs).unwrap();
        assert_eq!(m, back);
        assert!(BinaryMask::from_linear_runs(7, 5, 1, &[(30, 10)]).is_none());
    }

    #[test]
    fn not_keeps_padding_clear() {
        let m = BinaryMask::new(5, 3, 0);
        assert_eq!(m.not().count(), 15);
    }
}
