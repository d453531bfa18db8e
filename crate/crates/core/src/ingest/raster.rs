use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};

use super::ClassMask;
use crate::error::{Error, Result};

/// Planar image raster with values in `[0, 1]`; channel `c` occupies
/// `data[c * width * height..(c + 1) * width * height]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn filled(width: u32, height: u32, channels: usize, value: f32) -> Self {
        Raster {
            width,
            height,
            channels,
            data: vec![value; width as usize * height as usize * channels],
        }
    }

    pub fn plane_len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, x: u32, y: u32) -> f32 {
        self.data[c * self.plane_len() + y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: u32, y: u32, v: f32) {
        let n = self.plane_len();
        self.data[c * n + y as usize * self.width as usize + x as usize] = v;
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_raster_png(path: &Path, raster: &Raster) -> Result<()> {
    let (w, h) = (raster.width, raster.height);
    match raster.channels {
        1 => GrayImage::from_fn(w, h, |x, y| Luma([to_u8(raster.get(0, x, y))])).save(path)?,
        3 => RgbImage::from_fn(w, h, |x, y| {
            Rgb([
                to_u8(raster.get(0, x, y)),
                to_u8(raster.get(1, x, y)),
                to_u8(raster.get(2, x, y)),
            ])
        })
        .save(path)?,
        c => {
            return Err(Error::InvalidArgument(format!(
                "cannot write a {c}-channel raster as PNG"
            )))
        }
    }
    Ok(())
}

/// Reads a PNG as grayscale (1 channel) when it has no color, otherwise RGB.
pub fn read_raster_png(path: &Path) -> Result<Raster> {
    let img = image::open(path)?;
    let (w, h) = (img.width(), img.height());
    if img.color().has_color() {
        let rgb = img.to_rgb8();
        let mut r = Raster::filled(w, h, 3, 0.0);
        for (x, y, p) in rgb.enumerate_pixels() {
            for c in 0..3 {
                r.set(c, x, y, p[c] as f32 / 255.0);
            }
        }
        Ok(r)
    } else {
        let g = img.to_luma8();
        Ok(Raster {
            width: w,
            height: h,
            channels: 1,
            data: g.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        })
    }
}

/// 8-bit single channel PNG, pixel value = class id.
pub fn write_mask_png(path: &Path, mask: &ClassMask) -> Result<()> {
    let img = GrayImage::from_raw(mask.width, mask.height, mask.labels.clone())
        .ok_or_else(|| Error::DimensionMismatch("mask buffer size".into()))?;
    img.save(path)?;
    Ok(())
}

pub fn read_mask_png(path: &Path) -> Result<ClassMask> {
    let img = image::open(path)?;
    if img.color().has_color() || img.color().bits_per_pixel() != 8 {
        return Err(Error::Format(format!(
            "{}: masks must be 8-bit single-channel PNG",
            path.display()
        )));
    }
    let g = img.to_luma8();
    ClassMask::from_labels(g.width(), g.height(), g.into_raw())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let mask = ClassMask::from_labels(3, 2, vec![0, 1, 2, 3, 4, 0]).unwrap();
        write_mask_png(&p, &mask).unwrap();
        assert_eq!(read_mask_png(&p).unwrap(), mask);
    }

    #[test]
    fn gray_raster_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.png");
        let mut r = Raster::filled(4, 3, 1, 1.0);
        r.set(0, 1, 2, 0.0);
        write_raster_png(&p, &r).unwrap();
        assert_eq!(read_raster_png(&p).unwrap(), r);
    }
}
