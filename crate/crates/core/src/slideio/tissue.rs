use super::{BinaryMask, SlideError, SlideImage};
use serde::{Deserialize, Serialize};

/// Background rejection thresholds, both on the 0–255 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TissueParams {
    pub white_threshold: u8,
    pub min_saturation: u8,
}

impl Default for TissueParams {
    fn default() -> Self {
        Self {
            white_threshold: 230,
            min_saturation: 25,
        }
    }
}

/// HSV saturation scaled to 0–255.
#[inline]
pub(crate) fn saturation(p: [u8; 3]) -> u8 {
    let max = p.iter().copied().max().unwrap_or(0) as u32;
    let min = p.iter().copied().min().unwrap_or(0) as u32;
    ((max - min) * 255).checked_div(max).unwrap_or(0) as u8
}

#[inline]
pub(crate) fn is_tissue(p: [u8; 3], params: &TissueParams) -> bool {
    let min = p.iter().copied().min().unwrap_or(0);
    min < params.white_threshold || saturation(p) >= params.min_saturation
}

/// Marks every non-background pixel of one level.
pub fn tissue_mask(slide: &SlideImage, level: usize, params: &TissueParams) -> Result<BinaryMask, SlideError> {
    let img = slide.level_image(level)?;
    Ok(BinaryMask::from_fn(img.width(), img.height(), level, |x, y| {
        is_tissue(img.get_pixel(x, y).0, params)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    #[test]
    fn white_is_background_brown_is_tissue() {
        let p = TissueParams::default();
        let white = SlideImage::from_rgb(RgbImage::from_pixel(8, 8, Rgb([255, 255, 255])));
        assert_eq!(tissue_mask(&white, 0, &p).unwrap().count(), 0);
        let brown = SlideImage::from_rgb(RgbImage::from_pixel(8, 8, Rgb([150, 75, 0])));
        assert_eq!(tissue_mask(&brown, 0, &p).unwrap().count(), 64);
    }

    #[test]
    fn half_and_half_matches_scalar_loop() {
        let img = RgbImage::from_fn(16, 10, |x, _| if x < 8 { Rgb([255, 255, 255]) } else { Rgb([150, 75, 0]) });
        let slide = SlideImage::from_rgb(img.clone());
        let m = tissue_mask(&slide, 0, &TissueParams::default()).unwrap();
        for y in 0..10 {
            for x in 0..16 {
                let p = img.get_pixel(x, y).0;
                let min = *p.iter().min().unwrap() as u32;
                let max = *p.iter().max().unwrap() as u32;
                let sat = ((max - min) * 255).checked_div(max).unwrap_or(0);
                assert_eq!(m.get(x, y), min < 230 || sat >= 25);
                assert_eq!(m.get(x, y), x >= 8);
            }
        }
    }

    #[test]
    fn missing_level_is_error() {
        let s = SlideImage::from_rgb(RgbImage::new(2, 2));
        assert!(matches!(
            tissue_mask(&s, 1, &TissueParams::default()),
            Err(SlideError::LevelOutOfRange { .. })
        ));
    }
}
