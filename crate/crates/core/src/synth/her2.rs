use super::{blue, brown, disk_pixels, Placer, SynthError};
use crate::her2::{Her2Score, MembraneRegion};
use crate::mask::{BinaryMask, PixelRuns};
use crate::nuclei::{Frame, NucleusInstance};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

const BACKGROUND: Rgb<u8> = Rgb([238, 226, 232]);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Her2RegionSpec {
    pub size: u32,
    pub n_nuclei: (usize, usize),
    pub radius: (u32, u32),
    pub ring_width: u32,
    pub score: Her2Score,
    pub seed: u64,
}

impl Her2RegionSpec {
    pub fn new(score: Her2Score, seed: u64) -> Self {
        Self {
            size: 128,
            n_nuclei: (5, 9),
            radius: (5, 7),
            ring_width: 3,
            score,
            seed,
        }
    }
}

/// Ring darkness band and the fraction of the circumference drawn for
/// complete and partial rings.
struct Band {
    k: (f64, f64),
    complete_frac: (f64, f64),
    arc: (f64, f64),
}

fn band(score: Her2Score) -> Option<Band> {
    match score {
        Her2Score::Zero => None,
        Her2Score::OnePlus => Some(Band {
            k: (0.08, 0.25),
            complete_frac: (0.0, 0.0),
            arc: (0.25, 0.5),
        }),
        Her2Score::TwoPlus => Some(Band {
            k: (0.35, 0.55),
            complete_frac: (0.3, 0.6),
            arc: (0.55, 0.8),
        }),
        Her2Score::ThreePlus => Some(Band {
            k: (0.65, 0.85),
            complete_frac: (0.95, 1.0),
            arc: (0.75, 0.85),
        }),
    }
}

fn range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// One synthetic membrane region with the score it was drawn for.
pub fn generate_her2_region(spec: &Her2RegionSpec) -> Result<(MembraneRegion, Her2Score), SynthError> {
    if spec.n_nuclei.0 == 0 || spec.n_nuclei.0 > spec.n_nuclei.1 || spec.radius.0 == 0 || spec.radius.0 > spec.radius.1 {
        return Err(SynthError::InvalidSpec("empty nucleus or radius range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = rng.gen_range(spec.n_nuclei.0..=spec.n_nuclei.1);
    let outer = spec.radius.1 + spec.ring_width;
    let mut placer = Placer::new(2 * spec.ring_width + 2, spec.radius.1);
    let margin = outer + 1;
    if spec.size <= 2 * margin {
        return Err(SynthError::InvalidSpec(format!("region size {} too small", spec.size)));
    }
    for _ in 0..n {
        let r = rng.gen_range(spec.radius.0..=spec.radius.1);
        let mut ok = false;
        for _ in 0..5000 {
            let x = rng.gen_range(margin..spec.size - margin);
            let y = rng.gen_range(margin..spec.size - margin);
            if placer.fits(x, y, r) {
                placer.add(x, y, r);
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(SynthError::PlacementImpossible {
                what: "HER2 nucleus".into(),
                attempts: 5000,
            });
        }
    }

    let mut pixels = RgbImage::from_pixel(spec.size, spec.size, BACKGROUND);
    let mut membrane = BinaryMask::new(spec.size, spec.size, 0);
    let b = band(spec.score);
    let n_complete = b.as_ref().map_or(0, |b| (range(&mut rng, b.complete_frac) * n as f64).ceil() as usize);
    let mut nuclei = Vec::with_capacity(n);
    for (i, &(cx, cy, r)) in placer.disks.iter().enumerate() {
        if let Some(b) = &b {
            let k = range(&mut rng, b.k);
            let frac = if i < n_complete { 1.0 } else { range(&mut rng, b.arc) };
            let start = rng.gen_range(0.0..TAU);
            let rgb = Rgb(brown(k));
            for (x, y) in disk_pixels(cx, cy, r + spec.ring_width) {
                let (dx, dy) = (x as f64 - cx as f64, y as f64 - cy as f64);
                if dx * dx + dy * dy <= (r * r) as f64 {
                    continue;
                }
                let ang = (dy.atan2(dx) - start).rem_euclid(TAU);
                if ang <= frac * TAU {
                    pixels.put_pixel(x, y, rgb);
                    membrane.set(x, y, true);
                }
            }
        }
        let nk = rng.gen_range(0.2..0.45);
        let px = disk_pixels(cx, cy, r);
        for &(x, y) in &px {
            pixels.put_pixel(x, y, Rgb(blue(nk)));
        }
        nuclei.push(NucleusInstance::from_mask(i as u64 + 1, PixelRuns::from_pixels(px), Frame::Patch).expect("non-empty disk"));
    }
    let region = MembraneRegion {
        id: format!("synth-{}-{}", spec.score.label(), spec.seed),
        pixels,
        membrane,
        nuclei,
    };
    Ok((region, spec.score))
}

/// `n` regions dealt round-robin over the four scores.
pub fn generate_her2_dataset(n: usize, seed: u64) -> Result<Vec<(MembraneRegion, Her2Score)>, SynthError> {
    (0..n)
        .map(|i| {
            let score = Her2Score::ALL[i % 4];
            let s = crate::her2::derive_seed(seed, i as u64);
            generate_her2_region(&Her2RegionSpec::new(score, s))
        })
        .collect()
}
