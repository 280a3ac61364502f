use super::{BinaryMask, SlideError, SlideImage};
use image::RgbImage;
use serde::{Deserialize, Serialize};

/// Grid layout for patch extraction. Sizes and stride are in pixels of the
/// extraction level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchParams {
    pub width: u32,
    pub height: u32,
    pub stride: u32,
    pub min_tissue_frac: f64,
    /// Append one extra column/row flush with the right/bottom edge when the
    /// stride does not land on it exactly.
    pub snap_to_edge: bool,
}

impl Default for PatchParams {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            stride: 512 - 64,
            min_tissue_frac: 0.05,
            snap_to_edge: true,
        }
    }
}

impl PatchParams {
    /// Square patches with a halo of `halo` pixels shared between neighbours.
    pub fn with_halo(size: u32, halo: u32) -> Self {
        Self {
            width: size,
            height: size,
            stride: size.saturating_sub(halo).max(1),
            ..Self::default()
        }
    }
}

/// Where a patch sits, without its pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchRegion {
    /// Position in extraction order.
    pub index: usize,
    pub level: usize,
    /// Top-left corner in level-0 pixels.
    pub origin: (u32, u32),
    /// Top-left corner in pixels of `level`.
    pub level_xy: (u32, u32),
    pub size: (u32, u32),
    pub downsample: f64,
    pub tissue_frac: f64,
}

#[derive(Debug, Clone)]
pub struct Patch {
    pub region: PatchRegion,
    pub pixels: RgbImage,
}

impl Patch {
    pub fn origin(&self) -> (u32, u32) {
        self.region.origin
    }

    pub fn level(&self) -> usize {
        self.region.level
    }

    pub fn size(&self) -> (u32, u32) {
        self.region.size
    }
}

fn grid_positions(extent: u32, size: u32, stride: u32, snap: bool) -> Vec<u32> {
    if extent <= size {
        return vec![0];
    }
    let mut out: Vec<u32> = (0..=extent - size).step_by(stride as usize).collect();
    if snap && out.last().is_some_and(|&p| p + size < extent) {
        out.push(extent - size);
    }
    out
}

/// Lays out the patch grid over `level` in row-major order and keeps the
/// cells whose tissue fraction reaches `min_tissue_frac`. The tissue mask may
/// be on any level of the same slide.
pub fn plan_patches(
    slide: &SlideImage,
    level: usize,
    params: &PatchParams,
    tissue: &BinaryMask,
) -> Result<Vec<PatchRegion>, SlideError> {
    if params.stride == 0 || params.width == 0 || params.height == 0 {
        return Err(SlideError::InvalidParams("patch size and stride must be positive".into()));
    }
    if !(0.0..=1.0).contains(&params.min_tissue_frac) {
        return Err(SlideError::InvalidParams(format!(
            "min_tissue_frac {} outside [0,1]",
            params.min_tissue_frac
        )));
    }
    let info = slide.level(level)?;
    let tinfo = slide.level(tissue.level())?;
    if (tissue.width(), tissue.height()) != (tinfo.width, tinfo.height) {
        return Err(SlideError::MaskFrameMismatch(format!(
            "tissue mask is {}x{} but level {} is {}x{}",
            tissue.width(),
            tissue.height(),
            tissue.level(),
            tinfo.width,
            tinfo.height
        )));
    }
    let pw = params.width.min(info.width);
    let ph = params.height.min(info.height);
    let scale = info.downsample / tinfo.downsample;
    let xs = grid_positions(info.width, pw, params.stride, params.snap_to_edge);
    let ys = grid_positions(info.height, ph, params.stride, params.snap_to_edge);

    let mut out = Vec::new();
    for &y in &ys {
        for &x in &xs {
            let mx0 = (x as f64 * scale).floor() as u32;
            let my0 = (y as f64 * scale).floor() as u32;
            let mx1 = (((x + pw) as f64 * scale).ceil() as u32).clamp(mx0 + 1, tissue.width().max(mx0 + 1));
            let my1 = (((y + ph) as f64 * scale).ceil() as u32).clamp(my0 + 1, tissue.height().max(my0 + 1));
            let area = (mx1 - mx0) as u64 * (my1 - my0) as u64;
            let frac = tissue.count_in_rect(mx0, my0, mx1, my1) as f64 / area as f64;
            if frac >= params.min_tissue_frac {
                out.push(PatchRegion {
                    index: out.len(),
                    level,
                    origin: (
                        (x as f64 * info.downsample).round() as u32,
                        (y as f64 * info.downsample).round() as u32,
                    ),
                    level_xy: (x, y),
                    size: (pw, ph),
                    downsample: info.downsample,
                    tissue_frac: frac,
                });
            }
        }
    }
    if out.is_empty() {
        log::warn!("no patch on level {level} reaches tissue fraction {}", params.min_tissue_frac);
        return Err(SlideError::EmptyTissueMask);
    }
    Ok(out)
}

impl PatchRegion {
    pub fn read(&self, slide: &SlideImage) -> Result<Patch, SlideError> {
        let pixels = slide.read_region(self.level, self.level_xy.0, self.level_xy.1, self.size.0, self.size.1)?;
        Ok(Patch { region: *self, pixels })
    }
}

/// [`plan_patches`] followed by a pixel read of every kept cell.
pub fn extract_patches(
    slide: &SlideImage,
    level: usize,
    params: &PatchParams,
    tissue: &BinaryMask,
) -> Result<Vec<Patch>, SlideError> {
    plan_patches(slide, level, params, tissue)?
        .into_iter()
        .map(|r| r.read(slide))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(size: u32, stride: u32, frac: f64) -> PatchParams {
        PatchParams {
            width: size,
            height: size,
            stride,
            min_tissue_frac: frac,
            snap_to_edge: true,
        }
    }

    fn slide(n: u32) -> SlideImage {
        SlideImage::from_rgb(RgbImage::new(n, n))
    }

    #[test]
    fn exact_tiling_row_major() {
        let s = slide(1024);
        let t = BinaryMask::full(1024, 1024, 0);
        let p = extract_patches(&s, 0, &params(512, 512, 0.5), &t).unwrap();
        let origins: Vec<_> = p.iter().map(|p| p.origin()).collect();
        assert_eq!(origins, vec![(0, 0), (512, 0), (0, 512), (512, 512)]);
        assert!(p.iter().all(|p| p.pixels.dimensions() == (512, 512)));
    }

    #[test]
    fn partial_tissue_filters_by_fraction() {
        let s = slide(1024);
        let t = BinaryMask::from_fn(1024, 1024, 0, |x, y| x < 512 && y < 512);
        let p = plan_patches(&s, 0, &params(512, 512, 0.5), &t).unwrap();
        // reference count of tissue pixels per cell
        let kept: Vec<_> = [(0u32, 0u32), (512, 0), (0, 512), (512, 512)]
            .into_iter()
            .filter(|&(x0, y0)| {
                let mut n = 0u64;
                for y in y0..y0 + 512 {
                    for x in x0..x0 + 512 {
                        n += t.get(x, y) as u64;
                    }
                }
                n as f64 / (512.0 * 512.0) >= 0.5
            })
            .collect();
        assert_eq!(kept, vec![(0, 0)]);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].origin, (0, 0));
    }

    #[test]
    fn zero_fraction_keeps_everything() {
        let s = slide(1024);
        let t = BinaryMask::new(1024, 1024, 0);
        assert_eq!(plan_patches(&s, 0, &params(512, 512, 0.0), &t).unwrap().len(), 4);
    }

    #[test]
    fn coarse_tissue_mask_is_mapped_through_downsample() {
        let base = RgbImage::new(1024, 1024);
        let s = SlideImage::pyramid(base, &[4]).unwrap();
        let t = BinaryMask::from_fn(256, 256, 1, |x, y| x < 128 && y < 128);
        let p = plan_patches(&s, 0, &params(512, 512, 0.5), &t).unwrap();
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn halo_stride_snaps_to_edge() {
        let s = slide(960);
        let t = BinaryMask::full(960, 960, 0);
        let p = plan_patches(&s, 0, &PatchParams::with_halo(512, 64), &t).unwrap();
        let xs: Vec<u32> = p.iter().filter(|r| r.level_xy.1 == 0).map(|r| r.level_xy.0).collect();
        assert_eq!(xs, vec![0, 448]);
        let s = slide(1100);
        let t = BinaryMask::full(1100, 1100, 0);
        let p = plan_patches(&s, 0, &PatchParams::with_halo(512, 64), &t).unwrap();
        let xs: Vec<u32> = p.iter().filter(|r| r.level_xy.1 == 0).map(|r| r.level_xy.0).collect();
        assert_eq!(xs, vec![0, 448, 588]);
    }

    #[test]
    fn empty_tissue_is_reported() {
        let s = slide(256);
        let t = BinaryMask::new(256, 256, 0);
        assert!(matches!(
            plan_patches(&s, 0, &params(128, 128, 0.1), &t),
            Err(SlideError::EmptyTissueMask)
        ));
    }

    #[test]
    fn bad_params_rejected() {
        let s = slide(256);
        let t = BinaryMask::full(256, 256, 0);
        assert!(plan_patches(&s, 0, &params(128, 0, 0.1), &t).is_err());
        assert!(plan_patches(&s, 0, &params(128, 128, 1.5), &t).is_err());
    }
}
