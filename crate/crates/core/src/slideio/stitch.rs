//! Reassembly of per-patch detections into one slide-wide instance list.

use super::{LevelInfo, PatchRegion};
use crate::mask::{cmp_point, BBox, PixelRuns};
use crate::nuclei::{Frame, NucleusInstance};
use std::cmp::Ordering;
use std::collections::HashMap;

/// Placement of a patch in level-0 coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchOrigin {
    pub index: usize,
    pub x: u32,
    pub y: u32,
    /// Integer level downsample; local pixels expand to `downsample²` blocks.
    pub downsample: u32,
}

impl PatchOrigin {
    /// Origin for instances that are already in the level-0 frame.
    pub fn identity() -> Self {
        Self {
            index: 0,
            x: 0,
            y: 0,
            downsample: 1,
        }
    }
}

impl From<&PatchRegion> for PatchOrigin {
    fn from(r: &PatchRegion) -> Self {
        Self {
            index: r.index,
            x: r.origin.0,
            y: r.origin.1,
            downsample: r.downsample.round().max(1.0) as u32,
        }
    }
}

/// Drops instances cut by an interior patch edge. With a halo at least as wide
/// as the largest nucleus, every such instance reappears whole in a
/// neighbouring patch. Edges that coincide with the slide boundary are kept.
pub fn discard_cut_instances(instances: Vec<NucleusInstance>, region: &PatchRegion, level: &LevelInfo) -> Vec<NucleusInstance> {
    let (lx, ly) = region.level_xy;
    let (w, h) = region.size;
    let left = lx > 0;
    let top = ly > 0;
    let right = lx + w < level.width;
    let bottom = ly + h < level.height;
    instances
        .into_iter()
        .filter(|n| {
            let m = &n.mask;
            !((left && m.touches_column(0))
                || (right && m.touches_column(w - 1))
                || (top && m.touches_row(0))
                || (bottom && m.touches_row(h - 1)))
        })
        .collect()
}

fn canonical_order(a: &NucleusInstance, b: &NucleusInstance) -> Ordering {
    b.area_px
        .cmp(&a.area_px)
        .then_with(|| cmp_point(a.centroid, b.centroid))
        .then_with(|| a.mask.runs().cmp(b.mask.runs()))
        .then_with(|| a.stain.cmp(&b.stain))
        .then_with(|| a.patch_of_origin.cmp(&b.patch_of_origin))
}

const CELL: u32 = 64;

fn cells(b: &BBox) -> impl Iterator<Item = (u32, u32)> {
    let (cx0, cx1) = (b.x0 / CELL, (b.x1 - 1) / CELL);
    let (cy0, cy1) = (b.y0 / CELL, (b.y1 - 1) / CELL);
    (cy0..=cy1).flat_map(move |cy| (cx0..=cx1).map(move |cx| (cx, cy)))
}

/// Translates per-patch instances to level 0 and merges duplicates.
///
/// Two instances are duplicates when their masks overlap and their IoU is at
/// least `dedup_iou`; the larger one is kept. The result does not depend on
/// the order of `per_patch`: it is sorted by centroid `(y, x)` and ids are
/// reassigned `1..=n` in that order.
pub fn stitch(per_patch: Vec<(PatchOrigin, Vec<NucleusInstance>)>, dedup_iou: f64) -> Vec<NucleusInstance> {
    let mut all: Vec<NucleusInstance> = per_patch
        .into_iter()
        .flat_map(|(origin, list)| {
            list.into_iter().filter_map(move |n| {
                let mask: PixelRuns = if n.frame == Frame::Global {
                    n.mask
                } else {
                    n.mask.upscale(origin.downsample).translate(origin.x, origin.y)
                };
                let stain = n.stain;
                let patch = n.patch_of_origin.or(Some(origin.index));
                NucleusInstance::from_mask(0, mask, Frame::Global).map(|mut g| {
                    g.stain = stain;
                    g.patch_of_origin = patch;
                    g
                })
            })
        })
        .collect();
    all.sort_by(canonical_order);

    let mut kept: Vec<NucleusInstance> = Vec::with_capacity(all.len());
    let mut grid: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
    for cand in all {
        let bb = cand.mask.bbox().expect("instances are non-empty");
        let mut seen: Vec<usize> = cells(&bb).flat_map(|c| grid.get(&c).into_iter().flatten().copied()).collect();
        seen.sort_unstable();
        seen.dedup();
        let duplicate = seen.iter().any(|&k| {
            let other = &kept[k];
            other.mask.bbox().is_some_and(|ob| ob.intersects(&bb)) && {
                let inter = other.mask.intersection_area(&cand.mask);
                inter > 0 && {
                    let union = other.area_px + cand.area_px - inter;
                    inter as f64 / union as f64 >= dedup_iou
                }
            }
        });
        if !duplicate {
            let k = kept.len();
            for c in cells(&bb) {
                grid.entry(c).or_default().push(k);
            }
            kept.push(cand);
        }
    }
    kept.sort_by(|a, b| cmp_point(a.centroid, b.centroid).then_with(|| canonical_order(a, b)));
    for (i, n) in kept.iter_mut().enumerate() {
        n.id = i as u64 + 1;
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x0: u32, y0: u32, x1: u32, y1: u32) -> PixelRuns {
        PixelRuns::from_pixels((y0..y1).flat_map(|y| (x0..x1).map(move |x| (x, y))))
    }

    fn local(mask: PixelRuns) -> NucleusInstance {
        NucleusInstance::from_mask(1, mask, Frame::Patch).unwrap()
    }

    fn origin(index: usize, x: u32, y: u32) -> PatchOrigin {
        PatchOrigin {
            index,
            x,
            y,
            downsample: 1,
        }
    }

    #[test]
    fn identical_duplicate_collapses() {
        // same nucleus at global (500..510, 20..30) seen from two overlapping patches
        let a = (origin(0, 0, 0), vec![local(rect(500, 20, 510, 30))]);
        let b = (origin(1, 448, 0), vec![local(rect(52, 20, 62, 30))]);
        let out = stitch(vec![a, b], 0.5);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].centroid, (504.5, 24.5));
        assert_eq!(out[0].patch_of_origin, Some(0));
    }

    #[test]
    fn disjoint_nuclei_are_translated() {
        let a = (origin(0, 0, 0), vec![local(rect(10, 10, 14, 14))]);
        let b = (origin(1, 512, 512), vec![local(rect(10, 10, 14, 14))]);
        let out = stitch(vec![a, b], 0.5);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].centroid, (11.5, 11.5));
        assert_eq!(out[1].centroid, (523.5, 523.5));
        assert_eq!((out[0].id, out[1].id), (1, 2));
    }

    #[test]
    fn larger_instance_wins_at_iou_point_six() {
        // 120 vs 90 px cannot overlap at exactly 0.6; 79 shared pixels gives 79/131.
        let a = rect(0, 0, 12, 10);
        let inside = a.iter_pixels().take(79);
        let outside = (0..11).map(|x| (x, 10));
        let b = PixelRuns::from_pixels(inside.chain(outside));
        let inter: u64 = a.iter_pixels().filter(|&(x, y)| b.contains(x, y)).count() as u64;
        let union = a.area() + b.area() - inter;
        let iou = inter as f64 / union as f64;
        assert_eq!((a.area(), b.area()), (120, 90));
        assert!((iou - 0.6).abs() < 0.005, "oracle IoU {iou}");
        let out = stitch(vec![(origin(0, 0, 0), vec![local(b)]), (origin(1, 0, 0), vec![local(a.clone())])], 0.5);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].area_px, 120);
        assert_eq!(out[0].mask, a);
    }

    #[test]
    fn downsampled_patch_expands_to_level_zero() {
        let p = PatchOrigin {
            index: 0,
            x: 64,
            y: 32,
            downsample: 4,
        };
        let out = stitch(vec![(p, vec![local(rect(0, 0, 2, 2))])], 0.5);
        assert_eq!(out[0].area_px, 64);
        assert_eq!(out[0].mask.bbox(), Some(BBox { x0: 64, y0: 32, x1: 72, y1: 40 }));
    }

    #[test]
    fn cut_instances_dropped_only_on_interior_edges() {
        let level = LevelInfo {
            width: 1024,
            height: 512,
            downsample: 1.0,
        };
        let region = PatchRegion {
            index: 0,
            level: 0,
            origin: (0, 0),
            level_xy: (0, 0),
            size: (512, 512),
            downsample: 1.0,
            tissue_frac: 1.0,
        };
        let left = local(rect(0, 100, 5, 105));
        let right = local(rect(508, 100, 512, 105));
        let inner = local(rect(100, 100, 110, 110));
        let kept = discard_cut_instances(vec![left, right, inner], &region, &level);
        assert_eq!(kept.len(), 2);
        assert!(kept.iter().all(|n| !n.mask.touches_column(511)));
    }

    #[test]
    fn empty_input() {
        assert!(stitch(vec![], 0.5).is_empty());
    }
}
