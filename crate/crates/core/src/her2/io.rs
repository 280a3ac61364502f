use super::{Her2Error, MembraneRegion};
use crate::mask::BinaryMask;
use crate::nuclei::{import_instances, write_label_png, Frame};
use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// File names of one region on disk: RGB pixels, a binary membrane PNG
/// (nonzero = membrane) and a 16-bit nuclei label PNG.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionFiles {
    pub image: PathBuf,
    pub membrane: PathBuf,
    pub nuclei: PathBuf,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Her2Error {
    Her2Error::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

impl MembraneRegion {
    pub fn read_files(id: &str, files: &RegionFiles) -> Result<Self, Her2Error> {
        let pixels = image::open(&files.image).map_err(|e| io_err(&files.image, e))?.to_rgb8();
        let mem = image::open(&files.membrane).map_err(|e| io_err(&files.membrane, e))?.to_luma8();
        let mismatch = |what: &str, w: u32, h: u32| Her2Error::FrameMismatch {
            id: id.to_string(),
            reason: format!("{what} is {w}x{h}, pixels are {}x{}", pixels.width(), pixels.height()),
        };
        if mem.dimensions() != pixels.dimensions() {
            return Err(mismatch("membrane mask", mem.width(), mem.height()));
        }
        let membrane = BinaryMask::from_fn(mem.width(), mem.height(), 0, |x, y| mem.get_pixel(x, y).0[0] > 0);
        let nuclei = import_instances(&files.nuclei, Frame::Patch).map_err(|e| io_err(&files.nuclei, e))?;
        if let Some(n) = nuclei.iter().find(|n| {
            n.mask
                .bbox()
                .is_some_and(|b| b.x1 > pixels.width() || b.y1 > pixels.height())
        }) {
            return Err(Her2Error::FrameMismatch {
                id: id.to_string(),
                reason: format!("nucleus {} lies outside the region", n.id),
            });
        }
        Ok(Self {
            id: id.to_string(),
            pixels,
            membrane,
            nuclei,
        })
    }

    /// Writes `<stem>.png`, `<stem>_membrane.png` and `<stem>_nuclei.png`
    /// into `dir`; the returned names are relative to `dir`.
    pub fn write_files(&self, dir: impl AsRef<Path>, stem: &str) -> Result<RegionFiles, Her2Error> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let files = RegionFiles {
            image: format!("{stem}.png").into(),
            membrane: format!("{stem}_membrane.png").into(),
            nuclei: format!("{stem}_nuclei.png").into(),
        };
        let p = dir.join(&files.image);
        self.pixels.save(&p).map_err(|e| io_err(&p, e))?;
        let mut mem = GrayImage::new(self.membrane.width(), self.membrane.height());
        for (x, y) in self.membrane.iter_set() {
            mem.put_pixel(x, y, Luma([255]));
        }
        let p = dir.join(&files.membrane);
        mem.save(&p).map_err(|e| io_err(&p, e))?;
        let p = dir.join(&files.nuclei);
        write_label_png(&p, &self.nuclei, self.pixels.width(), self.pixels.height()).map_err(|e| io_err(&p, e))?;
        Ok(files)
    }
}
