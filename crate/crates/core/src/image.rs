//! Float RGB raster used for observed images, rendered patches and
//! backgrounds, plus PNG/PPM I/O.

use std::path::Path;

use crate::error::{Error, Result};

/// Row-major interleaved RGB image with channel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut img = RgbImage::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::invalid(format!(
                "image buffer has {} values, expected {}",
                data.len(),
                width * height * 3
            )));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Bilinear sample with integer coordinates at pixel centers; samples
    /// outside the image contribute black.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f32; 3] {
        if !x.is_finite() || !y.is_finite() {
            return [0.0; 3];
        }
        let (x0, y0) = (floor_i64(x), floor_i64(y));
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let mut out = [0.0f32; 3];
        if x0 >= 0 && y0 >= 0 && x0 + 1 < self.width as i64 && y0 + 1 < self.height as i64 {
            let i = y0 as usize * self.width + x0 as usize;
            let row = self.width * 3;
            let a = &self.data[i * 3..i * 3 + 6];
            let b = &self.data[i * 3 + row..i * 3 + row + 6];
            for ch in 0..3 {
                let top = a[ch] + fx * (a[ch + 3] - a[ch]);
                let bottom = b[ch] + fx * (b[ch + 3] - b[ch]);
                out[ch] = top + fy * (bottom - top);
            }
            return out;
        }
        let taps = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x0 + 1, y0, fx * (1.0 - fy)),
            (x0, y0 + 1, (1.0 - fx) * fy),
            (x0 + 1, y0 + 1, fx * fy),
        ];
        for (tx, ty, w) in taps {
            if w == 0.0 || tx < 0 || ty < 0 || tx >= self.width as i64 || ty >= self.height as i64
            {
                continue;
            }
            let i = (ty as usize * self.width + tx as usize) * 3;
            out[0] += w * self.data[i];
            out[1] += w * self.data[i + 1];
            out[2] += w * self.data[i + 2];
        }
        out
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Bilinear resize covering the same extent (pixel-center aligned corners).
    pub fn resized(&self, width: usize, height: usize) -> RgbImage {
        let mut out = RgbImage::new(width, height);
        let sx = if width > 1 {
            (self.width - 1) as f64 / (width - 1) as f64
        } else {
            0.0
        };
        let sy = if height > 1 {
            (self.height - 1) as f64 / (height - 1) as f64
        } else {
            0.0
        };
        for y in 0..height {
            for x in 0..width {
                out.set(x, y, self.sample_bilinear(x as f64 * sx, y as f64 * sy));
            }
        }
        out
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        RgbImage::from_data(width, height, data)
    }

    /// Encodes as an 8-bit RGB PNG in memory.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        let encoder = image::codecs::png::PngEncoder::new(&mut buf);
        image::ImageEncoder::write_image(
            encoder,
            &self.to_rgb8(),
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|source| Error::Image {
            path: "<memory>".into(),
            source,
        })?;
        Ok(buf)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.encode_png()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Loads PNG or PPM (anything the `image` crate decodes) into `[0, 1]` floats.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        RgbImage::from_rgb8(img.width() as usize, img.height() as usize, img.as_raw())
    }
}

/// Writes a single-channel 16-bit PNG.
pub fn save_gray16_png(path: &Path, width: usize, height: usize, values: &[u16]) -> Result<()> {
    let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(
        width as u32,
        height as u32,
        values.to_vec(),
    )
    .ok_or_else(|| Error::invalid("gray16 buffer size mismatch"))?;
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a single-channel 8-bit PNG.
pub fn save_gray8_png(path: &Path, width: usize, height: usize, values: &[u8]) -> Result<()> {
    let img =
        image::ImageBuffer::<image::Luma<u8>, _>::from_raw(width as u32, height as u32, values.to_vec())
            .ok_or_else(|| Error::invalid("gray8 buffer size mismatch"))?;
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// `floor` without the libm call on targets lacking a rounding instruction.
fn floor_i64(v: f64) -> i64 {
    let i = v as i64;
    if (i as f64) > v {
        i - 1
    } else {
        i
    }
}
