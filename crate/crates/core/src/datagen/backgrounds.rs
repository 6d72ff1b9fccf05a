//! Background pool: a directory of images, or eight procedural textures.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::RgbImage;

pub const PROCEDURAL_COUNT: usize = 8;

/// Loads every PNG/PPM/PNM in `dir` (sorted by name), resized to
/// `width`×`height`.
pub fn load_backgrounds(dir: &Path, width: usize, height: usize) -> Result<Vec<RgbImage>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
                Some("png" | "ppm" | "pnm")
            )
        })
        .collect();
    paths.sort();
    let images = paths
        .iter()
        .map(|p| RgbImage::load(p).map(|img| img.resized(width, height)))
        .collect::<Result<Vec<_>>>()?;
    if images.is_empty() {
        return Err(Error::EmptyBackgroundPool);
    }
    Ok(images)
}

/// Eight deterministic textures of varied frequency content and color.
pub fn procedural_backgrounds(width: usize, height: usize) -> Vec<RgbImage> {
    (0..PROCEDURAL_COUNT)
        .map(|k| procedural(k, width, height))
        .collect()
}

fn procedural(kind: usize, w: usize, h: usize) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + kind as u64);
    let mut img = RgbImage::new(w, h);
    let c1: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.9));
    let c2: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.9));
    let lerp = |t: f32| -> [f32; 3] { std::array::from_fn(|i| c1[i] + (c2[i] - c1[i]) * t) };
    let noise = ValueNoise::new(&mut rng, 16);
    let (fw, fh) = (w as f32, h as f32);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x as f32 / fw, y as f32 / fh);
            let t = match kind {
                0 => ((x / 40 + y / 40) % 2) as f32,
                1 => 0.5 + 0.5 * (u * 40.0 + v * 15.0).sin(),
                2 => 0.5 * u + 0.5 * v,
                3 => noise.fbm(u * 6.0, v * 6.0, 4),
                4 => {
                    let d = ((u - 0.4).powi(2) + (v - 0.6).powi(2)).sqrt();
                    0.5 + 0.5 * (d * 70.0).cos()
                }
                5 => {
                    let a = 0.5 + 0.5 * (u * 25.0).sin();
                    let b = 0.5 + 0.5 * (v * 31.0).sin();
                    0.5 * (a + b)
                }
                6 => noise.fbm(u * 20.0, v * 20.0, 2),
                _ => {
                    let s = ((x / 23) * 7 + (y / 17) * 13) % 5;
                    s as f32 / 4.0
                }
            };
            img.set(x, y, lerp(t.clamp(0.0, 1.0)));
        }
    }
    img
}

/// Bilinearly interpolated lattice noise on a wrapping grid.
struct ValueNoise {
    n: usize,
    grid: Vec<f32>,
}

impl ValueNoise {
    fn new<R: Rng>(rng: &mut R, n: usize) -> Self {
        ValueNoise {
            n,
            grid: (0..n * n).map(|_| rng.random_range(0.0..1.0)).collect(),
        }
    }

    fn at(&self, x: f32, y: f32) -> f32 {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let idx = |i: f32, j: f32| {
            let i = (i as i64).rem_euclid(self.n as i64) as usize;
            let j = (j as i64).rem_euclid(self.n as i64) as usize;
            self.grid[j * self.n + i]
        };
        let a = idx(x0, y0) + fx * (idx(x0 + 1.0, y0) - idx(x0, y0));
        let b = idx(x0, y0 + 1.0) + fx * (idx(x0 + 1.0, y0 + 1.0) - idx(x0, y0 + 1.0));
        a + fy * (b - a)
    }

    fn fbm(&self, x: f32, y: f32, octaves: usize) -> f32 {
        let (mut amp, mut freq, mut sum, mut norm) = (1.0, 1.0, 0.0, 0.0);
        for _ in 0..octaves {
            sum += amp * self.at(x * freq, y * freq);
            norm += amp;
            amp *= 0.5;
            freq *= 2.0;
        }
        sum / norm
    }
}
