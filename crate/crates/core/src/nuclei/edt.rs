//! Exact squared Euclidean distance transform (separable lower-envelope method).

const INF: f64 = 1e20;

#[inline]
fn intersect(f: &[f64], p: usize, q: usize, fq: f64) -> f64 {
    (fq - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
}

fn transform_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let fq = f[q] + (q * q) as f64;
        let mut s = intersect(f, v[k], q, fq);
        // z[0] is -inf, so this stops at k == 0
        while s <= z[k] {
            k -= 1;
            s = intersect(f, v[k], q, fq);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *out = dq * dq + f[p];
    }
}

/// Squared distance from each foreground pixel to the nearest background
/// pixel. `foreground` is row-major `width × height`; pixels outside the grid
/// count as foreground, so callers should pad with a background border.
pub fn squared_distance_transform(foreground: &[bool], width: usize, height: usize) -> Vec<f64> {
    assert_eq!(foreground.len(), width * height);
    let n = width.max(height);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    let mut grid: Vec<f64> = foreground.iter().map(|&fg| if fg { INF } else { 0.0 }).collect();
    for x in 0..width {
        for y in 0..height {
            f[y] = grid[y * width + x];
        }
        transform_1d(&f[..height], &mut d[..height], &mut v, &mut z);
        for y in 0..height {
            grid[y * width + x] = d[y];
        }
    }
    for y in 0..height {
        let row = &mut grid[y * width..(y + 1) * width];
        f[..width].copy_from_slice(row);
        transform_1d(&f[..width], &mut d[..width], &mut v, &mut z);
        row.copy_from_slice(&d[..width]);
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(fg: &[bool], w: usize, h: usize) -> Vec<f64> {
        let bg: Vec<(usize, usize)> = (0..w * h).filter(|&i| !fg[i]).map(|i| (i % w, i / w)).collect();
        (0..w * h)
            .map(|i| {
                if !fg[i] {
                    return 0.0;
                }
                let (x, y) = (i % w, i / w);
                bg.iter()
                    .map(|&(bx, by)| {
                        let dx = bx as f64 - x as f64;
                        let dy = by as f64 - y as f64;
                        dx * dx + dy * dy
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn matches_brute_force_on_random_grids() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..30 {
            let w = rng.gen_range(3..20);
            let h = rng.gen_range(3..20);
            let mut fg: Vec<bool> = (0..w * h).map(|_| rng.gen_bool(0.7)).collect();
            fg[0] = false;
            assert_eq!(squared_distance_transform(&fg, w, h), brute(&fg, w, h));
        }
    }
}
