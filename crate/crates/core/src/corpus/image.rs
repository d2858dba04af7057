//! Grayscale images and pixel patches.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::RectF;

/// Single-channel luminance image, values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<f32>,
}

/// Standard luma weights (ITU-R BT.601).
const LUMA_R: f32 = 0.299;
const LUMA_G: f32 = 0.587;
const LUMA_B: f32 = 0.114;

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage("zero dimension".into()));
        }
        if pixels.len() != (width as usize) * (height as usize) {
            return Err(Error::DimensionMismatch {
                expected: (width as usize) * (height as usize),
                got: pixels.len(),
            });
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image pixels"));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f32) -> Self {
        let mut pixels = Vec::with_capacity((width as usize) * (height as usize));
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        GrayImage {
            width,
            height,
            pixels,
        }
    }

    pub fn filled(width: u32, height: u32, value: f32) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; (width as usize) * (height as usize)],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.pixels[(y as usize) * (self.width as usize) + (x as usize)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: f32) {
        self.pixels[(y as usize) * (self.width as usize) + (x as usize)] = v;
    }

    /// Bilinear sample at continuous coordinates (pixel centers at i + 0.5).
    fn sample(&self, x: f64, y: f64) -> f64 {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as u32;
        let y0 = fy.floor() as u32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        let p00 = self.get(x0, y0) as f64;
        let p10 = self.get(x1, y0) as f64;
        let p01 = self.get(x0, y1) as f64;
        let p11 = self.get(x1, y1) as f64;
        // Nested lerps: exact in constant regions, so downsampling a flat
        // area introduces no phantom gradients.
        let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
        lerp(lerp(p00, p10, tx), lerp(p01, p11, tx), ty)
    }

    /// Bilinear resize to `(nw, nh)`.
    pub fn resize(&self, nw: u32, nh: u32) -> GrayImage {
        assert!(nw > 0 && nh > 0, "resize to zero dimension");
        let sx = self.width as f64 / nw as f64;
        let sy = self.height as f64 / nh as f64;
        GrayImage::from_fn(nw, nh, |x, y| {
            self.sample((x as f64 + 0.5) * sx, (y as f64 + 0.5) * sy) as f32
        })
    }

    /// Extract `rect` (native pixels) resampled to `ow` x `oh`.
    pub fn extract_patch(&self, rect: &RectF, ow: u32, oh: u32) -> PixelPatch {
        let mut data = Vec::with_capacity((ow as usize) * (oh as usize));
        for y in 0..oh {
            for x in 0..ow {
                let sx = rect.x + (x as f64 + 0.5) * rect.w / ow as f64;
                let sy = rect.y + (y as f64 + 0.5) * rect.h / oh as f64;
                data.push(self.sample(sx, sy) as f32);
            }
        }
        PixelPatch {
            width: ow,
            height: oh,
            data,
        }
    }

    /// Quantize to 8-bit for encoding.
    pub fn to_luma8(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width, self.height, |x, y| {
            let v = (self.get(x, y).clamp(0.0, 1.0) * 255.0).round() as u8;
            image::Luma([v])
        })
    }
}

/// A rectangular block of luminance values, used for NCC comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelPatch {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl PixelPatch {
    pub fn resampled(&self, ow: u32, oh: u32) -> PixelPatch {
        if ow == self.width && oh == self.height {
            return self.clone();
        }
        let img = GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.data.clone(),
        };
        let r = img.resize(ow, oh);
        PixelPatch {
            width: ow,
            height: oh,
            data: r.pixels,
        }
    }
}

/// Load a raster image (PNG, JPEG, or PGM) as luminance in `[0, 1]`.
pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::InvalidImage(format!(
            "{}: zero dimension",
            path.display()
        )));
    }
    let mut pixels = Vec::with_capacity((w as usize) * (h as usize));
    for p in rgb.pixels() {
        let [r, g, b] = p.0;
        let luma =
            (LUMA_R * r as f32 + LUMA_G * g as f32 + LUMA_B * b as f32) / 255.0;
        pixels.push(luma.clamp(0.0, 1.0));
    }
    GrayImage::new(w, h, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(path: &Path, img: &image::GrayImage) {
        img.save(path).unwrap();
    }

    #[test]
    fn all_white_png_loads_as_ones() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("white.png");
        write_png(&p, &image::GrayImage::from_pixel(8, 6, image::Luma([255])));
        let g = load_gray(&p).unwrap();
        assert_eq!((g.width(), g.height()), (8, 6));
        assert!(g.pixels().iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn all_black_png_loads_as_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("black.png");
        write_png(&p, &image::GrayImage::from_pixel(5, 5, image::Luma([0])));
        let g = load_gray(&p).unwrap();
        assert!(g.pixels().iter().all(|&v| v.abs() < 1e-6));
    }

    #[test]
    fn gray_pgm_midvalue() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gray.pgm");
        // P5, 4x4, maxval 255, all bytes 128.
        let mut bytes = b"P5\n4 4\n255\n".to_vec();
        bytes.extend_from_slice(&[128u8; 16]);
        std::fs::write(&p, bytes).unwrap();
        let g = load_gray(&p).unwrap();
        let want = 128.0 / 255.0;
        for &v in g.pixels() {
            assert!((v - want).abs() < 1e-5, "{v} != {want}");
        }
    }

    #[test]
    fn undecodable_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.png");
        std::fs::write(&p, b"not an image").unwrap();
        assert!(matches!(load_gray(&p), Err(Error::ImageDecode { .. })));
    }

    #[test]
    fn extract_patch_of_constant_region_is_constant() {
        let img = GrayImage::filled(100, 100, 0.25);
        let patch = img.extract_patch(&RectF::new(10.0, 10.0, 40.0, 40.0), 16, 16);
        assert!(patch.data.iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn resize_preserves_constant_images() {
        let img = GrayImage::filled(64, 48, 0.5);
        let r = img.resize(45, 34);
        assert!(r.pixels().iter().all(|&v| (v - 0.5).abs() < 1e-6));
    }
}
