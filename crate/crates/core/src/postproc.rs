//! From per-class probabilities to a cleaned class mask.

use std::path::Path;

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::ingest::{BBox, ClassMask, BACKGROUND};

/// Per-pixel probabilities for the `K` non-background classes, pixel-major:
/// class `c` (id `c + 1`) of pixel `i` is at `data[i * K + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub width: u32,
    pub height: u32,
    pub classes: usize,
    pub data: Vec<f32>,
}

impl ProbabilityMap {
    pub fn new(width: u32, height: u32, classes: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width as usize * height as usize * classes {
            return Err(Error::DimensionMismatch(format!(
                "{} probabilities for {width}x{height}x{classes}",
                data.len()
            )));
        }
        if let Some(p) = data.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidArgument(format!(
                "probability {p} outside [0, 1]"
            )));
        }
        Ok(ProbabilityMap {
            width,
            height,
            classes,
            data,
        })
    }

    pub fn pixel(&self, i: usize) -> &[f32] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(b"PRB1");
        w.u32(self.height);
        w.u32(self.width);
        w.u32(self.classes as u32);
        w.f32s(&self.data);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, b"PRB1", "probability map")?;
        let height = r.u32()?;
        let width = r.u32()?;
        let classes = r.u32()? as usize;
        let data = r.f32s(width as usize * height as usize * classes)?;
        r.finish()?;
        ProbabilityMap::new(width, height, classes, data)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

/// Background when every class is below `threshold`, else the most probable
/// class (lowest id on ties).
pub fn argmax_with_background(probs: &ProbabilityMap, threshold: f32) -> Result<ClassMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold {threshold} outside (0, 1)"
        )));
    }
    if probs.classes > 255 {
        return Err(Error::InvalidArgument("more than 255 classes".into()));
    }
    let n = probs.width as usize * probs.height as usize;
    let labels = (0..n)
        .map(|i| {
            let mut best = BACKGROUND;
            let mut best_p = f32::NEG_INFINITY;
            for (c, &p) in probs.pixel(i).iter().enumerate() {
                if p >= threshold && p > best_p {
                    best = c as u8 + 1;
                    best_p = p;
                }
            }
            best
        })
        .collect();
    ClassMask::from_labels(probs.width, probs.height, labels)
}

/// A maximal 8-connected set of pixels sharing a class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub class: u8,
    /// Row-major pixel indices, ascending.
    pub pixels: Vec<usize>,
    pub bbox: BBox,
}

impl Component {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n as u32).collect(),
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// 8-connected components of `class`, ordered by their first pixel in
/// row-major order.
pub fn connected_components(mask: &ClassMask, class: u8) -> Vec<Component> {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let mut ds = DisjointSet::new(w * h);
    let is = |x: usize, y: usize| mask.labels[y * w + x] == class;
    for y in 0..h {
        for x in 0..w {
            if !is(x, y) {
                continue;
            }
            let i = (y * w + x) as u32;
            // already-visited neighbours: W, NW, N, NE
            if x > 0 && is(x - 1, y) {
                ds.union(i, i - 1);
            }
            if y > 0 {
                let up = ((y - 1) * w) as u32;
                if x > 0 && is(x - 1, y - 1) {
                    ds.union(i, up + x as u32 - 1);
                }
                if is(x, y - 1) {
                    ds.union(i, up + x as u32);
                }
                if x + 1 < w && is(x + 1, y - 1) {
                    ds.union(i, up + x as u32 + 1);
                }
            }
        }
    }
    let mut slot_of_root: std::collections::HashMap<u32, usize> = Default::default();
    let mut comps: Vec<Component> = Vec::new();
    for i in 0..w * h {
        if mask.labels[i] != class {
            continue;
        }
        let root = ds.find(i as u32);
        let slot = *slot_of_root.entry(root).or_insert_with(|| {
            comps.push(Component {
                class,
                pixels: Vec::new(),
                bbox: BBox::new(u32::MAX, u32::MAX, 0, 0),
            });
            comps.len() - 1
        });
        let c = &mut comps[slot];
        let (x, y) = ((i % w) as u32, (i / w) as u32);
        c.pixels.push(i);
        c.bbox.x_min = c.bbox.x_min.min(x);
        c.bbox.y_min = c.bbox.y_min.min(y);
        c.bbox.x_max = c.bbox.x_max.max(x + 1);
        c.bbox.y_max = c.bbox.y_max.max(y + 1);
    }
    comps
}

/// Sets to background every component whose area is strictly smaller than
/// `min_area_ratio` of the image.
pub fn filter_small_components(mask: &ClassMask, min_area_ratio: f64) -> Result<ClassMask> {
    if !(0.0..=1.0).contains(&min_area_ratio) {
        return Err(Error::InvalidArgument(format!(
            "area ratio {min_area_ratio} outside [0, 1]"
        )));
    }
    let total = mask.width as f64 * mask.height as f64;
    let mut out = mask.clone();
    let mut classes: Vec<u8> = mask
        .labels
        .iter()
        .copied()
        .filter(|&l| l != BACKGROUND)
        .collect();
    classes.sort_unstable();
    classes.dedup();
    for class in classes {
        for comp in connected_components(mask, class) {
            if (comp.area() as f64) < min_area_ratio * total {
                for &i in &comp.pixels {
                    out.labels[i] = BACKGROUND;
                }
            }
        }
    }
    Ok(out)
}

/// Thresholding followed by the small-component filter.
pub fn postprocess(
    probs: &ProbabilityMap,
    threshold: f32,
    min_area_ratio: f64,
) -> Result<ClassMask> {
    filter_small_components(&argmax_with_background(probs, threshold)?, min_area_ratio)
}
