//! Small square RGB images in planar float layout, plus PNG round-trips.

use crate::error::{contract, Error, Result};
use std::path::Path;

/// An `n x n` RGB image. `data` is planar (channel, row, column) with values
/// in `[0,1]` unless stated otherwise by the producer.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub size: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            data: vec![0.0; 3 * size * size],
        }
    }

    pub fn filled(size: usize, rgb: [f32; 3]) -> Self {
        let mut img = Self::new(size);
        for ch in 0..3 {
            img.data[ch * size * size..(ch + 1) * size * size].fill(rgb[ch]);
        }
        img
    }

    pub fn from_data(size: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * size * size {
            return Err(Error::ShapeMismatch {
                expected: format!("{} floats", 3 * size * size),
                got: format!("{}", data.len()),
            });
        }
        Ok(Self { size, data })
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let n2 = self.size * self.size;
        let i = row * self.size + col;
        [self.data[i], self.data[n2 + i], self.data[2 * n2 + i]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f32; 3]) {
        let n2 = self.size * self.size;
        let i = row * self.size + col;
        self.data[i] = rgb[0];
        self.data[n2 + i] = rgb[1];
        self.data[2 * n2 + i] = rgb[2];
    }

    /// Box-filter downsampling by an integer factor.
    pub fn downsample(&self, factor: usize) -> Result<Image> {
        if factor == 0 || self.size % factor != 0 {
            return Err(contract("downsample factor must divide the image size"));
        }
        let n = self.size / factor;
        let mut out = Image::new(n);
        let norm = 1.0 / (factor * factor) as f32;
        for r in 0..n {
            for c in 0..n {
                let mut acc = [0f32; 3];
                for dr in 0..factor {
                    for dc in 0..factor {
                        let p = self.pixel(r * factor + dr, c * factor + dc);
                        acc[0] += p[0];
                        acc[1] += p[1];
                        acc[2] += p[2];
                    }
                }
                out.set_pixel(r, c, [acc[0] * norm, acc[1] * norm, acc[2] * norm]);
            }
        }
        Ok(out)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let n = self.size as u32;
        let mut buf = image::RgbImage::new(n, n);
        for r in 0..self.size {
            for c in 0..self.size {
                let p = self.pixel(r, c);
                let q = p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
                buf.put_pixel(c as u32, r as u32, image::Rgb(q));
            }
        }
        buf.save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let buf = image::open(path)?.to_rgb8();
        if buf.width() != buf.height() {
            return Err(contract("expected a square image"));
        }
        let n = buf.width() as usize;
        let mut img = Image::new(n);
        for r in 0..n {
            for c in 0..n {
                let p = buf.get_pixel(c as u32, r as u32).0;
                img.set_pixel(r, c, p.map(|v| v as f32 / 255.0));
            }
        }
        Ok(img)
    }
}

/// Peak signal-to-noise ratio in dB between two images in `[0,1]`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if a.size != b.size {
        return Err(Error::ShapeMismatch {
            expected: format!("{0}x{0}", a.size),
            got: format!("{0}x{0}", b.size),
        });
    }
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| ((x - y) as f64).powi(2))
        .sum::<f64>()
        / a.data.len() as f64;
    Ok(-10.0 * (mse.max(1e-12)).log10())
}

pub fn save_mask_png(mask: &[bool], size: usize, path: &Path) -> Result<()> {
    if mask.len() != size * size {
        return Err(contract("mask length does not match the image size"));
    }
    let mut buf = image::GrayImage::new(size as u32, size as u32);
    for r in 0..size {
        for c in 0..size {
            let v = if mask[r * size + c] { 255 } else { 0 };
            buf.put_pixel(c as u32, r as u32, image::Luma([v]));
        }
    }
    buf.save(path)?;
    Ok(())
}

pub fn load_mask_png(path: &Path) -> Result<(Vec<bool>, usize)> {
    let buf = image::open(path)?.to_luma8();
    if buf.width() != buf.height() {
        return Err(contract("expected a square mask"));
    }
    let n = buf.width() as usize;
    let mut mask = vec![false; n * n];
    for r in 0..n {
        for c in 0..n {
            mask[r * n + c] = buf.get_pixel(c as u32, r as u32).0[0] >= 128;
        }
    }
    Ok((mask, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_lossless_at_8_bits() {
        let mut img = Image::filled(8, [0.25, 0.5, 0.75]);
        img.set_pixel(3, 5, [1.0, 0.0, 0.5]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        img.save_png(&path).unwrap();
        let back = Image::load_png(&path).unwrap();
        assert_eq!(back.size, 8);
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn mask_roundtrip() {
        let mask = vec![true, false, false, true];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.png");
        save_mask_png(&mask, 2, &path).unwrap();
        let (back, n) = load_mask_png(&path).unwrap();
        assert_eq!(n, 2);
        assert_eq!(back, mask);
    }

    #[test]
    fn psnr_of_identical_images_is_capped() {
        let img = Image::filled(4, [0.3, 0.3, 0.3]);
        assert!(psnr(&img, &img).unwrap() >= 120.0 - 1e-9);
    }

    #[test]
    fn downsample_averages_blocks() {
        let mut img = Image::new(2);
        img.set_pixel(0, 0, [1.0, 0.0, 0.0]);
        img.set_pixel(0, 1, [0.0, 1.0, 0.0]);
        img.set_pixel(1, 0, [0.0, 0.0, 1.0]);
        img.set_pixel(1, 1, [1.0, 1.0, 1.0]);
        let d = img.downsample(2).unwrap();
        assert_eq!(d.pixel(0, 0), [0.5, 0.5, 0.5]);
    }
}
