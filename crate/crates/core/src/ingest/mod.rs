//! Canonical page representation and the parsers that produce it.
//!
//! Boxes are half-open: a box `(x_min, y_min, x_max, y_max)` covers the
//! pixels with `x_min <= x < x_max` and `y_min <= y < y_max`.

mod annotations;
mod raster;
mod tokens;

pub use annotations::{
    parse_annotations, parse_annotations_str, rasterize_labels, write_annotations, PageAnnotations,
    Region, Shape,
};
pub use raster::{read_mask_png, read_raster_png, write_mask_png, write_raster_png, Raster};
pub use tokens::{
    escape_token_text, parse_token_file, parse_token_str, write_token_file, TokenPage,
};

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Axis-aligned half-open pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Self {
        BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    /// Clips raw (possibly negative or oversized) coordinates to a `width x height`
    /// page. Returns `None` when nothing of the box remains.
    pub fn clipped(
        x_min: i64,
        y_min: i64,
        x_max: i64,
        y_max: i64,
        width: u32,
        height: u32,
    ) -> Option<BBox> {
        let cx = |v: i64| v.clamp(0, width as i64) as u32;
        let cy = |v: i64| v.clamp(0, height as i64) as u32;
        let b = BBox::new(cx(x_min), cy(y_min), cx(x_max), cy(y_max));
        (!b.is_empty()).then_some(b)
    }

    pub fn is_empty(&self) -> bool {
        self.x_min >= self.x_max || self.y_min >= self.y_max
    }

    pub fn width(&self) -> u32 {
        self.x_max.saturating_sub(self.x_min)
    }

    pub fn height(&self) -> u32 {
        self.y_max.saturating_sub(self.y_min)
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    /// Geometric center of the covered pixel area.
    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min as f64 + self.x_max as f64) / 2.0,
            (self.y_min as f64 + self.y_max as f64) / 2.0,
        )
    }

    /// Box covering `self` after scaling coordinates by `s`: mins floored,
    /// maxes ceiled, then clipped to the scaled page.
    pub fn scaled(&self, s: f64, width: u32, height: u32) -> Option<BBox> {
        BBox::clipped(
            (self.x_min as f64 * s).floor() as i64,
            (self.y_min as f64 * s).floor() as i64,
            (self.x_max as f64 * s).ceil() as i64,
            (self.y_max as f64 * s).ceil() as i64,
            width,
            height,
        )
    }
}

/// An OCR word with its box and reading-order index.
#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub text: String,
    pub bbox: BBox,
    pub index: usize,
}

/// Class roster. Id 0 is always `background`; the other ids are dense.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassRoster {
    names: Vec<String>,
}

pub const BACKGROUND: u8 = 0;

impl ClassRoster {
    /// Builds a roster from the non-background class names, in id order (ids 1..).
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut all = vec!["background".to_string()];
        for n in names {
            let n = n.as_ref().trim();
            if n.is_empty() {
                return Err(Error::InvalidArgument("empty class name".into()));
            }
            if all.iter().any(|e| e == n) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate class name `{n}`"
                )));
            }
            all.push(n.to_string());
        }
        if all.len() > 256 {
            return Err(Error::InvalidArgument(
                "at most 255 classes fit an 8-bit mask".into(),
            ));
        }
        Ok(ClassRoster { names: all })
    }

    /// Number of non-background classes.
    pub fn num_classes(&self) -> usize {
        self.names.len() - 1
    }

    pub fn name(&self, id: u8) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<u8> {
        self.names.iter().position(|n| n == name).map(|i| i as u8)
    }

    /// Non-background `(id, name)` pairs.
    pub fn classes(&self) -> impl Iterator<Item = (u8, &str)> {
        self.names
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, n)| (i as u8, n.as_str()))
    }

    pub fn name_map(&self) -> HashMap<String, u8> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u8))
            .collect()
    }
}

/// Per-pixel class ids, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMask {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u8>,
}

impl ClassMask {
    pub fn zeros(width: u32, height: u32) -> Self {
        ClassMask {
            width,
            height,
            labels: vec![BACKGROUND; width as usize * height as usize],
        }
    }

    pub fn from_labels(width: u32, height: u32, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width as usize * height as usize {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for a {width}x{height} mask",
                labels.len()
            )));
        }
        Ok(ClassMask {
            width,
            height,
            labels,
        })
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        self.labels[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn count(&self, class: u8) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }

    /// Checks every label against a class count (ids `0..=num_classes`).
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self.labels.iter().find(|&&l| l as usize > num_classes) {
            Some(l) => Err(Error::InvalidArgument(format!(
                "mask label {l} exceeds class count {num_classes}"
            ))),
            None => Ok(()),
        }
    }
}

/// A page: tokens, image and optional ground truth.
#[derive(Debug, Clone)]
pub struct Page {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub tokens: Vec<Token>,
    pub image: Raster,
    pub label_mask: Option<ClassMask>,
}

impl Page {
    pub fn new(
        id: impl Into<String>,
        tokens: Vec<Token>,
        image: Raster,
        label_mask: Option<ClassMask>,
    ) -> Result<Self> {
        let (width, height) = (image.width, image.height);
        if let Some(m) = &label_mask {
            if (m.width, m.height) != (width, height) {
                return Err(Error::DimensionMismatch(format!(
                    "mask {}x{} vs image {width}x{height}",
                    m.width, m.height
                )));
            }
        }
        if let Some(t) = tokens
            .iter()
            .find(|t| t.bbox.is_empty() || t.bbox.x_max > width || t.bbox.y_max > height)
        {
            return Err(Error::InvalidArgument(format!(
                "token {} `{}` has box {:?} outside a {width}x{height} page",
                t.index, t.text, t.bbox
            )));
        }
        Ok(Page {
            id: id.into(),
            width,
            height,
            tokens,
            image,
            label_mask,
        })
    }
}
