use crate::image::RgbImage;

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-0.5 * x * x / (sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k.into_iter().map(|v| v as f32).collect()
}

/// Separable Gaussian blur with clamp-to-edge borders. `sigma ≤ 0` copies.
pub fn gaussian_blur(img: &RgbImage, sigma: f64) -> RgbImage {
    if !(sigma > 0.0) {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (img.width as isize, img.height as isize);
    let mut tmp = RgbImage::new(img.width, img.height);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f32; 3];
            for (i, &kv) in k.iter().enumerate() {
                let sx = (x + i as isize - r).clamp(0, w - 1);
                let o = ((y * w + sx) * 3) as usize;
                for ch in 0..3 {
                    acc[ch] += kv * img.data[o + ch];
                }
            }
            let o = ((y * w + x) * 3) as usize;
            tmp.data[o..o + 3].copy_from_slice(&acc);
        }
    }
    let mut out = RgbImage::new(img.width, img.height);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f32; 3];
            for (i, &kv) in k.iter().enumerate() {
                let sy = (y + i as isize - r).clamp(0, h - 1);
                let o = ((sy * w + x) * 3) as usize;
                for ch in 0..3 {
                    acc[ch] += kv * tmp.data[o + ch];
                }
            }
            let o = ((y * w + x) * 3) as usize;
            out.data[o..o + 3].copy_from_slice(&acc);
        }
    }
    out
}

/// Pixels within `band / 2` (Chebyshev) of a mask edge, on either side.
pub fn border_band(mask: &[bool], width: usize, height: usize, band: usize) -> Vec<bool> {
    let reach = band.div_ceil(2) as isize;
    let mut out = vec![false; mask.len()];
    let (w, h) = (width as isize, height as isize);
    for y in 0..h {
        for x in 0..w {
            let m = mask[(y * w + x) as usize];
            // an edge pixel has a 4-neighbour with the other label
            let edge = [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|(dx, dy)| {
                let (nx, ny) = (x + dx, y + dy);
                nx >= 0 && ny >= 0 && nx < w && ny < h && mask[(ny * w + nx) as usize] != m
            });
            if !edge {
                continue;
            }
            for yy in (y - reach + 1).max(0)..(y + reach).min(h) {
                for xx in (x - reach + 1).max(0)..(x + reach).min(w) {
                    out[(yy * w + xx) as usize] = true;
                }
            }
        }
    }
    out
}

pub fn rgb_to_hsv(rgb: [f32; 3]) -> [f32; 3] {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    [h, s, max]
}

pub fn hsv_to_rgb(hsv: [f32; 3]) -> [f32; 3] {
    let [h, s, v] = hsv;
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = (h6 as usize).min(5);
    let f = h6 - sector as f32;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Shifts hue, scales saturation and value, then clamps to [0, 1].
pub fn hsv_jitter(img: &mut RgbImage, dh: f32, ds: f32, dv: f32) {
    for px in img.data.chunks_exact_mut(3) {
        let [h, s, v] = rgb_to_hsv([px[0], px[1], px[2]]);
        let rgb = hsv_to_rgb([h + dh, (s * (1.0 + ds)).clamp(0.0, 1.0), (v * (1.0 + dv)).clamp(0.0, 1.0)]);
        for ch in 0..3 {
            px[ch] = rgb[ch].clamp(0.0, 1.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize) -> RgbImage {
        let mut img = RgbImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let v = if (x / 4 + y / 3) % 2 == 0 { 0.9 } else { 0.1 };
                img.set(x, y, [v, 0.5 * v, (x as f32 / w as f32)]);
            }
        }
        img
    }

    #[test]
    fn blur_preserves_mean() {
        let img = textured(64, 48);
        for sigma in [0.5, 1.5, 3.0] {
            let b = gaussian_blur(&img, sigma);
            let rel = (b.mean() - img.mean()).abs() / img.mean();
            assert!(rel < 0.02, "sigma {sigma}: {rel}");
        }
    }

    #[test]
    fn blur_of_constant_is_constant() {
        let img = RgbImage::filled(10, 7, [0.25, 0.5, 0.75]);
        let b = gaussian_blur(&img, 2.0);
        for (a, c) in b.data.iter().zip(&img.data) {
            assert!((a - c).abs() < 1e-6);
        }
    }

    #[test]
    fn hsv_round_trip() {
        for rgb in [[0.2, 0.4, 0.9], [1.0, 0.0, 0.0], [0.5, 0.5, 0.5], [0.0, 0.8, 0.3], [0.7, 0.1, 0.6]] {
            let back = hsv_to_rgb(rgb_to_hsv(rgb));
            for ch in 0..3 {
                assert!((back[ch] - rgb[ch]).abs() < 1e-5, "{rgb:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn jitter_stays_in_range() {
        let mut img = textured(16, 16);
        hsv_jitter(&mut img, 0.3, 0.9, 0.9);
        assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn band_surrounds_the_edge() {
        let (w, h) = (10, 10);
        let mask: Vec<bool> = (0..w * h).map(|i| i % w >= 5).collect();
        let band = border_band(&mask, w, h, 3);
        for y in 0..h {
            for x in 0..w {
                assert_eq!(band[y * w + x], (3..=6).contains(&x), "{x},{y}");
            }
        }
    }
}
