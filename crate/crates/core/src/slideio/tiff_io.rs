//! Multi-level TIFF reading and tiled writing.
//!
//! Each image file directory holds one pyramid level. Level geometry is
//! carried in the `ImageDescription` tag as whitespace-separated `key=value`
//! pairs (`downsample=4 mpp=0.25`). Directories without a downsample entry get
//! one inferred from their width relative to level 0.

use super::{LevelInfo, SlideError};
use image::RgbImage;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::TiffEncoder;
use tiff::tags::Tag;
use tiff::ColorType;

pub(super) struct Header {
    pub levels: Vec<LevelInfo>,
    pub ifds: Vec<usize>,
    pub mpp: Option<f64>,
}

fn unreadable(path: &Path, e: impl std::fmt::Display) -> SlideError {
    SlideError::UnreadableFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn open_decoder(path: &Path) -> Result<Decoder<BufReader<File>>, SlideError> {
    let f = File::open(path).map_err(|e| unreadable(path, e))?;
    Ok(Decoder::new(BufReader::new(f))
        .map_err(|e| unreadable(path, e))?
        .with_limits(Limits::unlimited()))
}

fn description_value(desc: &str, key: &str) -> Option<f64> {
    desc.split_whitespace()
        .filter_map(|tok| tok.split_once('='))
        .find(|(k, _)| *k == key)
        .and_then(|(_, v)| v.parse().ok())
}

pub(super) fn read_header(path: &Path) -> Result<Header, SlideError> {
    let mut dec = open_decoder(path)?;
    let mut raw: Vec<(u32, u32, Option<f64>, Option<f64>)> = Vec::new();
    loop {
        let (w, h) = dec.dimensions().map_err(|e| unreadable(path, e))?;
        match dec.colortype().map_err(|e| unreadable(path, e))? {
            ColorType::RGB(8) | ColorType::RGBA(8) => {}
            other => {
                return Err(SlideError::UnsupportedFormat(format!(
                    "TIFF directory {} has colour type {other:?}; only 8-bit RGB/RGBA supported",
                    raw.len()
                )))
            }
        }
        let desc = match dec.find_tag(Tag::ImageDescription) {
            Ok(Some(v)) => v.into_string().unwrap_or_default(),
            _ => String::new(),
        };
        raw.push((
            w,
            h,
            description_value(&desc, "downsample"),
            description_value(&desc, "mpp"),
        ));
        if !dec.more_images() {
            break;
        }
        dec.next_image().map_err(|e| unreadable(path, e))?;
    }
    let (w0, _, _, mpp) = raw[0];
    let levels = raw
        .iter()
        .map(|&(w, h, ds, _)| LevelInfo {
            width: w,
            height: h,
            downsample: ds.unwrap_or(w0 as f64 / w as f64),
        })
        .collect();
    Ok(Header {
        levels,
        ifds: (0..raw.len()).collect(),
        mpp,
    })
}

pub(super) fn read_level(path: &Path, ifd: usize) -> Result<RgbImage, SlideError> {
    let mut dec = open_decoder(path)?;
    dec.seek_to_image(ifd).map_err(|e| unreadable(path, e))?;
    let (w, h) = dec.dimensions().map_err(|e| unreadable(path, e))?;
    let ct = dec.colortype().map_err(|e| unreadable(path, e))?;
    let data = match dec.read_image().map_err(|e| unreadable(path, e))? {
        DecodingResult::U8(v) => v,
        _ => return Err(SlideError::UnsupportedFormat("non 8-bit TIFF samples".into())),
    };
    let rgb = match ct {
        ColorType::RGB(8) => data,
        ColorType::RGBA(8) => data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        other => return Err(SlideError::UnsupportedFormat(format!("colour type {other:?}"))),
    };
    RgbImage::from_raw(w, h, rgb).ok_or_else(|| SlideError::CorruptPyramid(format!("directory {ifd} has short pixel data")))
}

/// Writes an uncompressed, tiled, multi-directory RGB TIFF. `tile` must be a
/// positive multiple of 16.
pub fn write_pyramidal_tiff(
    path: impl AsRef<Path>,
    levels: &[(&RgbImage, f64)],
    tile: u32,
    mpp: Option<f64>,
) -> Result<(), SlideError> {
    let path = path.as_ref();
    if tile == 0 || !tile.is_multiple_of(16) {
        return Err(SlideError::InvalidParams(format!("tile size {tile} is not a multiple of 16")));
    }
    let err = |e: tiff::TiffError| unreadable(path, e);
    let f = File::create(path).map_err(|e| unreadable(path, e))?;
    let mut enc = TiffEncoder::new(BufWriter::new(f)).map_err(err)?;
    for (idx, (img, ds)) in levels.iter().enumerate() {
        let (w, h) = img.dimensions();
        let mut dir = enc.image_directory().map_err(err)?;
        let mut desc = format!("ihc-pyramid level={idx} downsample={ds}");
        if let Some(m) = mpp {
            desc.push_str(&format!(" mpp={m}"));
        }
        dir.write_tag(Tag::ImageWidth, w).map_err(err)?;
        dir.write_tag(Tag::ImageLength, h).map_err(err)?;
        dir.write_tag(Tag::BitsPerSample, &[8u16, 8, 8][..]).map_err(err)?;
        dir.write_tag(Tag::Compression, 1u16).map_err(err)?;
        dir.write_tag(Tag::PhotometricInterpretation, 2u16).map_err(err)?;
        dir.write_tag(Tag::ImageDescription, desc.as_str()).map_err(err)?;
        dir.write_tag(Tag::SamplesPerPixel, 3u16).map_err(err)?;
        dir.write_tag(Tag::PlanarConfiguration, 1u16).map_err(err)?;
        dir.write_tag(Tag::TileWidth, tile).map_err(err)?;
        dir.write_tag(Tag::TileLength, tile).map_err(err)?;
        let mut offsets = Vec::new();
        let mut counts = Vec::new();
        for ty in (0..h).step_by(tile as usize) {
            for tx in (0..w).step_by(tile as usize) {
                let mut buf = vec![0u8; (tile * tile * 3) as usize];
                for y in 0..tile.min(h - ty) {
                    for x in 0..tile.min(w - tx) {
                        let p = img.get_pixel(tx + x, ty + y).0;
                        let o = ((y * tile + x) * 3) as usize;
                        buf[o..o + 3].copy_from_slice(&p);
                    }
                }
                let off = dir.write_data(&buf[..]).map_err(err)?;
                offsets.push(u32::try_from(off).map_err(|_| SlideError::InvalidParams("TIFF exceeds 4 GiB".into()))?);
                counts.push(buf.len() as u32);
            }
        }
        dir.write_tag(Tag::TileOffsets, &offsets[..]).map_err(err)?;
        dir.write_tag(Tag::TileByteCounts, &counts[..]).map_err(err)?;
        dir.finish().map_err(err)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{open_slide, SlideError};
    use super::*;

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| image::Rgb([(x % 256) as u8, (y % 256) as u8, ((x + y) % 256) as u8]))
    }

    #[test]
    fn tiled_round_trip_with_ragged_edge_tiles() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.tiff");
        let l0 = gradient(100, 70);
        let l1 = gradient(25, 18);
        write_pyramidal_tiff(&p, &[(&l0, 1.0), (&l1, 4.0)], 32, Some(0.5)).unwrap();
        let s = open_slide(&p).unwrap();
        assert_eq!(s.level_count(), 2);
        assert_eq!(s.levels()[1].downsample, 4.0);
        assert_eq!(s.mpp(), Some(0.5));
        assert_eq!(*s.level_image(0).unwrap(), l0);
        assert_eq!(*s.level_image(1).unwrap(), l1);
    }

    #[test]
    fn contradicting_downsample_tag_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.tiff");
        let l0 = gradient(64, 64);
        let l1 = gradient(20, 16);
        write_pyramidal_tiff(&p, &[(&l0, 1.0), (&l1, 4.0)], 16, None).unwrap();
        assert!(matches!(open_slide(&p), Err(SlideError::CorruptPyramid(_))));
    }
}
