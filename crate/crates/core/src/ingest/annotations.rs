//! Region annotations in a VIA-style JSON export and their scan conversion.
//!
//! ```json
//! {
//!   "page-001": [
//!     {"shape": "rect", "coords": [10, 10, 50, 50], "class": "death_notice"},
//!     {"shape": "polygon", "coords": [0, 0, 8, 0, 8, 6], "class": "stocks"}
//!   ],
//!   "page-002": []
//! }
//! ```
//!
//! Rect coordinates are `[x_min, y_min, x_max, y_max]`; polygon coordinates
//! are a flat `x, y` vertex list.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ClassMask;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Rect {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
    Polygon(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub shape: Shape,
    pub class: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PageAnnotations {
    pub page_id: String,
    pub regions: Vec<Region>,
}

impl PageAnnotations {
    pub fn has_annotations(&self) -> bool {
        !self.regions.is_empty()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRegion {
    shape: String,
    coords: Vec<f64>,
    class: String,
}

pub fn parse_annotations(
    path: &Path,
    class_map: &HashMap<String, u8>,
) -> Result<Vec<PageAnnotations>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations_str(&text, class_map)
}

/// Parses an annotation document. Pages come back sorted by id; regions keep
/// their file order, which decides overlaps in [`rasterize_labels`].
pub fn parse_annotations_str(
    text: &str,
    class_map: &HashMap<String, u8>,
) -> Result<Vec<PageAnnotations>> {
    let raw: BTreeMap<String, Vec<RawRegion>> = serde_json::from_str(text)?;
    let unknown: BTreeSet<&str> = raw
        .values()
        .flatten()
        .map(|r| r.class.as_str())
        .filter(|c| !class_map.contains_key(*c))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownClasses(
            unknown.into_iter().map(String::from).collect(),
        ));
    }
    raw.into_iter()
        .map(|(page_id, regions)| {
            let regions = regions
                .into_iter()
                .enumerate()
                .map(|(i, r)| {
                    let shape = to_shape(&r)
                        .map_err(|m| Error::Format(format!("page `{page_id}` region {i}: {m}")))?;
                    Ok(Region {
                        shape,
                        class: class_map[&r.class],
                    })
                })
                .collect::<Result<_>>()?;
            Ok(PageAnnotations { page_id, regions })
        })
        .collect()
}

fn to_shape(r: &RawRegion) -> std::result::Result<Shape, String> {
    if r.coords.iter().any(|c| !c.is_finite()) {
        return Err("non-finite coordinate".into());
    }
    match r.shape.as_str() {
        "rect" => match r.coords[..] {
            [x_min, y_min, x_max, y_max] => Ok(Shape::Rect {
                x_min,
                y_min,
                x_max,
                y_max,
            }),
            _ => Err(format!("rect needs 4 coordinates, got {}", r.coords.len())),
        },
        "polygon" => {
            if r.coords.len() % 2 != 0 || r.coords.len() < 6 {
                return Err(format!(
                    "polygon needs an even number (>= 6) of coordinates, got {}",
                    r.coords.len()
                ));
            }
            let pts: Vec<(f64, f64)> = r.coords.chunks_exact(2).map(|c| (c[0], c[1])).collect();
            if self_intersects(&pts) {
                return Err("self-intersecting polygon".into());
            }
            Ok(Shape::Polygon(pts))
        }
        other => Err(format!("unknown shape `{other}`")),
    }
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn on_segment(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> bool {
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

/// Closed-segment intersection, touching and collinear overlap included.
fn segments_intersect(p1: (f64, f64), p2: (f64, f64), q1: (f64, f64), q2: (f64, f64)) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

fn self_intersects(pts: &[(f64, f64)]) -> bool {
    let n = pts.len();
    let edge = |i: usize| (pts[i], pts[(i + 1) % n]);
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (a, b) = edge(i);
            let (c, d) = edge(j);
            if segments_intersect(a, b, c, d) {
                return true;
            }
        }
    }
    false
}

fn polygon_contains(pts: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = pts.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = pts[i];
        let (xj, yj) = pts[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

impl Shape {
    fn bounds(&self) -> (f64, f64, f64, f64) {
        match self {
            Shape::Rect {
                x_min,
                y_min,
                x_max,
                y_max,
            } => (*x_min, *y_min, *x_max, *y_max),
            Shape::Polygon(pts) => pts.iter().fold(
                (
                    f64::INFINITY,
                    f64::INFINITY,
                    f64::NEG_INFINITY,
                    f64::NEG_INFINITY,
                ),
                |(a, b, c, d), &(x, y)| (a.min(x), b.min(y), c.max(x), d.max(y)),
            ),
        }
    }

    /// Pixel-center inclusion test. Rects are half-open.
    pub fn contains_center(&self, px: u32, py: u32) -> bool {
        let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
        match self {
            Shape::Rect {
                x_min,
                y_min,
                x_max,
                y_max,
            } => x >= *x_min && x < *x_max && y >= *y_min && y < *y_max,
            Shape::Polygon(pts) => polygon_contains(pts, x, y),
        }
    }
}

/// Scan-converts regions into a mask. Later regions overwrite earlier ones.
pub fn rasterize_labels(regions: &[Region], width: u32, height: u32) -> ClassMask {
    let mut mask = ClassMask::zeros(width, height);
    for r in regions {
        let (x0, y0, x1, y1) = r.shape.bounds();
        let lo = |v: f64, dim: u32| (v - 0.5).floor().clamp(0.0, dim as f64) as u32;
        let hi = |v: f64, dim: u32| (v + 0.5).ceil().clamp(0.0, dim as f64) as u32;
        for py in lo(y0, height)..hi(y1, height) {
            for px in lo(x0, width)..hi(x1, width) {
                if r.shape.contains_center(px, py) {
                    mask.set(px, py, r.class);
                }
            }
        }
    }
    mask
}

/// Writes annotations in the format read by [`parse_annotations`].
pub fn write_annotations(path: &Path, pages: &[PageAnnotations], names: &[String]) -> Result<()> {
    let mut doc: BTreeMap<&str, Vec<RawRegion>> = BTreeMap::new();
    for p in pages {
        let regions = p
            .regions
            .iter()
            .map(|r| {
                let class = names.get(r.class as usize).cloned().ok_or_else(|| {
                    Error::InvalidArgument(format!("no name for class id {}", r.class))
                })?;
                let (shape, coords) = match &r.shape {
                    Shape::Rect {
                        x_min,
                        y_min,
                        x_max,
                        y_max,
                    } => ("rect", vec![*x_min, *y_min, *x_max, *y_max]),
                    Shape::Polygon(pts) => {
                        ("polygon", pts.iter().flat_map(|&(x, y)| [x, y]).collect())
                    }
                };
                Ok(RawRegion {
                    shape: shape.into(),
                    coords,
                    class,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        doc.insert(&p.page_id, regions);
    }
    let text = serde_json::to_string_pretty(&doc)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
