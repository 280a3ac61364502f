//! Instance exchange formats: 16-bit label PNGs and run-length JSON.
//!
//! JSON layout (`ihc-instances`, version 1):
//!
//! ```text
//! { "schema": "ihc-instances", "version": 1, "frame": "patch" | "global",
//!   "level": 0, "width": W, "height": H,
//!   "instances": [ { "id": 1, "centroid": [x, y], "area_px": n,
//!                    "stain": "moderate" | null, "patch_of_origin": 3 | null,
//!                    "runs": [[y, x, len], ...] } ] }
//! ```

use super::{Frame, NucleiError, NucleusInstance};
use crate::mask::{PixelRuns, Run};
use crate::stain::StainClass;
use image::{DynamicImage, ImageBuffer, Luma};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const INSTANCE_SCHEMA: &str = "ihc-instances";
pub const INSTANCE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub id: u64,
    pub centroid: [f64; 2],
    pub area_px: u64,
    pub stain: Option<StainClass>,
    pub patch_of_origin: Option<usize>,
    pub runs: Vec<[u32; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub schema: String,
    pub version: u32,
    pub frame: Frame,
    pub level: usize,
    pub width: u32,
    pub height: u32,
    pub instances: Vec<InstanceRecord>,
}

impl InstanceFile {
    pub fn new(instances: &[NucleusInstance], frame: Frame, level: usize, width: u32, height: u32) -> Self {
        Self {
            schema: INSTANCE_SCHEMA.to_string(),
            version: INSTANCE_SCHEMA_VERSION,
            frame,
            level,
            width,
            height,
            instances: instances
                .iter()
                .map(|n| InstanceRecord {
                    id: n.id,
                    centroid: [n.centroid.0, n.centroid.1],
                    area_px: n.area_px,
                    stain: n.stain,
                    patch_of_origin: n.patch_of_origin,
                    runs: n.mask.runs().iter().map(|r| [r.y, r.x, r.len]).collect(),
                })
                .collect(),
        }
    }

    /// Rebuilds instances, recomputing centroid and area from the runs.
    pub fn into_instances(self) -> Result<Vec<NucleusInstance>, NucleiError> {
        if self.schema != INSTANCE_SCHEMA || self.version != INSTANCE_SCHEMA_VERSION {
            return Err(NucleiError::SchemaMismatch(format!(
                "expected {INSTANCE_SCHEMA} v{INSTANCE_SCHEMA_VERSION}, found {} v{}",
                self.schema, self.version
            )));
        }
        let frame = self.frame;
        self.instances
            .into_iter()
            .map(|rec| {
                let runs = rec.runs.iter().map(|&[y, x, len]| Run { y, x, len }).collect();
                let mask = PixelRuns::from_runs(runs);
                let mut inst = NucleusInstance::from_mask(rec.id, mask, frame)
                    .ok_or_else(|| NucleiError::BadLabelImage(format!("instance {} has zero area", rec.id)))?;
                inst.stain = rec.stain;
                inst.patch_of_origin = rec.patch_of_origin;
                Ok(inst)
            })
            .collect()
    }
}

fn unreadable(path: &Path, e: impl std::fmt::Display) -> NucleiError {
    NucleiError::Unreadable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn write_err(path: &Path, e: impl std::fmt::Display) -> NucleiError {
    NucleiError::Write {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

pub fn write_instances_json(path: impl AsRef<Path>, file: &InstanceFile) -> Result<(), NucleiError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(file).map_err(|e| write_err(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| write_err(path, e))
}

pub fn read_instances_json(path: impl AsRef<Path>) -> Result<InstanceFile, NucleiError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| unreadable(path, e))?;
    serde_json::from_str(&text).map_err(|e| NucleiError::SchemaMismatch(e.to_string()))
}

/// Rasterises instances into a 16-bit label image (0 = background).
pub fn write_label_png(
    path: impl AsRef<Path>,
    instances: &[NucleusInstance],
    width: u32,
    height: u32,
) -> Result<(), NucleiError> {
    let path = path.as_ref();
    let mut img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::new(width, height);
    for n in instances {
        let label = u16::try_from(n.id)
            .ok()
            .filter(|&l| l > 0)
            .ok_or_else(|| write_err(path, format!("instance id {} does not fit a 16-bit label", n.id)))?;
        for (x, y) in n.mask.iter_pixels() {
            if x >= width || y >= height {
                return Err(write_err(path, format!("instance {} leaves the {width}x{height} raster", n.id)));
            }
            img.put_pixel(x, y, Luma([label]));
        }
    }
    img.save(path).map_err(|e| write_err(path, e))
}

fn labels_from_png(path: &Path) -> Result<(u32, u32, Vec<u16>), NucleiError> {
    let img = image::ImageReader::open(path)
        .map_err(|e| unreadable(path, e))?
        .decode()
        .map_err(|e| unreadable(path, e))?;
    let (w, h) = (img.width(), img.height());
    let data = match img {
        DynamicImage::ImageLuma16(b) => b.into_raw(),
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(u16::from).collect(),
        other => {
            return Err(NucleiError::BadLabelImage(format!(
                "label image must be single-channel, got {:?}",
                other.color()
            )))
        }
    };
    Ok((w, h, data))
}

/// Loads instances from a label PNG or an `ihc-instances` JSON file. The
/// file format is chosen by extension; `frame` is the frame the caller
/// expects and must agree with a JSON file's declared frame.
pub fn import_instances(path: impl AsRef<Path>, frame: Frame) -> Result<Vec<NucleusInstance>, NucleiError> {
    let path = path.as_ref();
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let file = read_instances_json(path)?;
        if file.frame != frame {
            return Err(NucleiError::SchemaMismatch(format!(
                "file frame is {:?}, caller expects {:?}",
                file.frame, frame
            )));
        }
        return file.into_instances();
    }
    let (w, _h, data) = labels_from_png(path)?;
    let mut pixels: BTreeMap<u16, Vec<(u32, u32)>> = BTreeMap::new();
    for (i, &l) in data.iter().enumerate() {
        if l != 0 {
            pixels.entry(l).or_default().push(((i % w as usize) as u32, (i / w as usize) as u32));
        }
    }
    Ok(pixels
        .into_iter()
        .filter_map(|(label, px)| NucleusInstance::from_mask(label as u64, PixelRuns::from_pixels(px), frame))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(id: u64, x0: u32, y0: u32, x1: u32, y1: u32) -> NucleusInstance {
        let m = PixelRuns::from_pixels((y0..y1).flat_map(|y| (x0..x1).map(move |x| (x, y))));
        NucleusInstance::from_mask(id, m, Frame::Patch).unwrap()
    }

    #[test]
    fn label_png_echoes_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.png");
        let inst = vec![rect(1, 0, 0, 3, 3), rect(2, 5, 5, 8, 7), rect(5, 10, 0, 12, 2)];
        write_label_png(&p, &inst, 16, 16).unwrap();
        let back = import_instances(&p, Frame::Patch).unwrap();
        assert_eq!(back.iter().map(|n| n.id).collect::<Vec<_>>(), vec![1, 2, 5]);
        assert_eq!(back, inst);
    }

    #[test]
    fn all_zero_label_image_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.png");
        write_label_png(&p, &[], 8, 8).unwrap();
        assert!(import_instances(&p, Frame::Global).unwrap().is_empty());
    }

    #[test]
    fn zero_area_json_instance_rejected() {
        let mut f = InstanceFile::new(&[rect(1, 0, 0, 2, 2)], Frame::Patch, 0, 8, 8);
        f.instances[0].runs.clear();
        assert!(matches!(f.into_instances(), Err(NucleiError::BadLabelImage(_))));
    }

    #[test]
    fn wrong_schema_or_frame_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.json");
        let mut f = InstanceFile::new(&[rect(1, 0, 0, 2, 2)], Frame::Patch, 0, 8, 8);
        write_instances_json(&p, &f).unwrap();
        assert!(matches!(import_instances(&p, Frame::Global), Err(NucleiError::SchemaMismatch(_))));
        f.version = 99;
        write_instances_json(&p, &f).unwrap();
        assert!(matches!(import_instances(&p, Frame::Patch), Err(NucleiError::SchemaMismatch(_))));
        std::fs::write(&p, "{\"schema\": 3}").unwrap();
        assert!(matches!(import_instances(&p, Frame::Patch), Err(NucleiError::SchemaMismatch(_))));
    }

    #[test]
    fn rgb_png_is_not_a_label_image() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        image::RgbImage::new(4, 4).save(&p).unwrap();
        assert!(matches!(import_instances(&p, Frame::Patch), Err(NucleiError::BadLabelImage(_))));
    }
}
