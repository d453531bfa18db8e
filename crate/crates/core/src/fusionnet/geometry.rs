//! Resizing to the pixel budget and scale/rotation augmentation.
//!
//! Embedding maps are never interpolated: after a geometric transform the
//! ownership grid is resampled with nearest neighbour (or rebuilt from
//! scaled token boxes) and the token vectors are reused as they are.

use rand::Rng;

use crate::embedmap::{OwnerGrid, SparseEmbeddingMap, NO_OWNER};
use crate::ingest::{ClassMask, Page, Raster, Token, BACKGROUND};

/// Output size and scale factor for fitting `width x height` into `budget`
/// pixels. Pages already within budget are kept at scale 1.
pub fn budget_dims(width: u32, height: u32, budget: u64) -> (u32, u32, f64) {
    let area = width as u64 * height as u64;
    if area <= budget {
        return (width, height, 1.0);
    }
    let s = (budget as f64 / area as f64).sqrt();
    let w = ((width as f64 * s).floor() as u32).max(1);
    let h = ((height as f64 * s).floor() as u32).max(1);
    (w, h, s)
}

/// Bilinear sample at continuous coordinates in pixel-index space
/// (pixel `i` has its center at `i`), clamped to the edge.
fn bilinear(plane: &[f32], w: u32, h: u32, fx: f64, fy: f64) -> f32 {
    let fx = fx.clamp(0.0, (w - 1) as f64);
    let fy = fy.clamp(0.0, (h - 1) as f64);
    let x0 = fx.floor() as u32;
    let y0 = fy.floor() as u32;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let ax = (fx - x0 as f64) as f32;
    let ay = (fy - y0 as f64) as f32;
    let at = |x: u32, y: u32| plane[y as usize * w as usize + x as usize];
    let top = at(x0, y0) * (1.0 - ax) + at(x1, y0) * ax;
    let bottom = at(x0, y1) * (1.0 - ax) + at(x1, y1) * ax;
    top * (1.0 - ay) + bottom * ay
}

/// Resamples every channel; `src(x, y)` maps an output pixel center to
/// input coordinates (pixel centers at half-integers).
fn resample_raster(img: &Raster, w: u32, h: u32, src: impl Fn(f64, f64) -> (f64, f64)) -> Raster {
    let mut out = Raster::filled(w, h, img.channels, 0.0);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = src(x as f64 + 0.5, y as f64 + 0.5);
            for c in 0..img.channels {
                let v = bilinear(img.plane(c), img.width, img.height, sx - 0.5, sy - 0.5);
                out.set(c, x, y, v);
            }
        }
    }
    out
}

/// Nearest-neighbour resampling of a row-major grid; outside pixels get `fill`.
fn resample_nearest<T: Copy>(
    data: &[T],
    sw: u32,
    sh: u32,
    w: u32,
    h: u32,
    fill: T,
    src: impl Fn(f64, f64) -> (f64, f64),
) -> Vec<T> {
    let mut out = Vec::with_capacity(w as usize * h as usize);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = src(x as f64 + 0.5, y as f64 + 0.5);
            let (ix, iy) = (sx.floor(), sy.floor());
            if ix < 0.0 || iy < 0.0 || ix >= sw as f64 || iy >= sh as f64 {
                out.push(fill);
            } else {
                out.push(data[iy as usize * sw as usize + ix as usize]);
            }
        }
    }
    out
}

/// Nearest-neighbour resampling of a label mask to `width x height`, e.g.
/// to bring a prediction back to the original page size.
pub fn resample_mask(mask: &ClassMask, width: u32, height: u32) -> ClassMask {
    let sx = mask.width as f64 / width as f64;
    let sy = mask.height as f64 / height as f64;
    ClassMask {
        width,
        height,
        labels: resample_nearest(
            &mask.labels,
            mask.width,
            mask.height,
            width,
            height,
            BACKGROUND,
            |x, y| (x * sx, y * sy),
        ),
    }
}

/// A page brought within the pixel budget.
#[derive(Debug, Clone)]
pub struct Resized {
    pub page: Page,
    pub scale: f64,
}

/// Scales a page to fit `budget` pixels. The image is resampled bilinearly,
/// the label mask by nearest neighbour, and token boxes are rescaled (mins
/// floored, maxes ceiled) so that maps built afterwards come from boxes,
/// not from interpolated vectors. Tokens that vanish are dropped.
pub fn resize_to_budget(page: &Page, budget: u64) -> Resized {
    let (w, h, s) = budget_dims(page.width, page.height, budget);
    if s == 1.0 {
        return Resized {
            page: page.clone(),
            scale: 1.0,
        };
    }
    let inv = |x: f64, y: f64| (x / s, y / s);
    let image = resample_raster(&page.image, w, h, inv);
    let label_mask = page.label_mask.as_ref().map(|m| ClassMask {
        width: w,
        height: h,
        labels: resample_nearest(&m.labels, m.width, m.height, w, h, BACKGROUND, inv),
    });
    let tokens: Vec<Token> = page
        .tokens
        .iter()
        .filter_map(|t| {
            t.bbox.scaled(s, w, h).map(|bbox| Token {
                text: t.text.clone(),
                bbox,
                index: t.index,
            })
        })
        .collect();
    Resized {
        page: Page {
            id: page.id.clone(),
            width: w,
            height: h,
            tokens,
            image,
            label_mask,
        },
        scale: s,
    }
}

/// A training example: image, optional (already reduced) map, labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Raster,
    pub map: Option<SparseEmbeddingMap>,
    pub mask: ClassMask,
}

/// Applies scale `s` and rotation `r` (radians) about the page center to
/// image, map ownership and mask alike. The output is `round(W s) x round(H s)`.
pub fn augment_with(sample: &Sample, s: f64, r: f64) -> Sample {
    let (sw, sh) = (sample.image.width, sample.image.height);
    let w = ((sw as f64 * s).round() as u32).max(1);
    let h = ((sh as f64 * s).round() as u32).max(1);
    let (cos, sin) = (r.cos(), r.sin());
    let (ocx, ocy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (icx, icy) = (sw as f64 / 2.0, sh as f64 / 2.0);
    let inv = |x: f64, y: f64| {
        let (dx, dy) = (x - ocx, y - ocy);
        // rotate by -r, then undo the scale
        let rx = cos * dx + sin * dy;
        let ry = -sin * dx + cos * dy;
        (rx / s + icx, ry / s + icy)
    };
    let image = resample_raster(&sample.image, w, h, inv);
    let mask = ClassMask {
        width: w,
        height: h,
        labels: resample_nearest(&sample.mask.labels, sw, sh, w, h, BACKGROUND, inv),
    };
    let map = sample.map.as_ref().map(|m| SparseEmbeddingMap {
        grid: OwnerGrid {
            width: w,
            height: h,
            owner: resample_nearest(&m.grid.owner, sw, sh, w, h, NO_OWNER, inv),
        },
        dim: m.dim,
        vectors: m.vectors.clone(),
    });
    Sample { image, map, mask }
}

/// Random scale in `scale_range` and rotation in `rotation_range`.
pub fn augment<R: Rng>(
    sample: &Sample,
    rng: &mut R,
    scale_range: (f64, f64),
    rotation_range: (f64, f64),
) -> (Sample, f64, f64) {
    let s = sample_in(rng, scale_range);
    let r = sample_in(rng, rotation_range);
    (augment_with(sample, s, r), s, r)
}

fn sample_in<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{EmbeddingStore, OovPolicy};
    use crate::ingest::BBox;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn thousand_square_fits_budget() {
        let (w, h, s) = budget_dims(1000, 1000, 500_000);
        assert_eq!((w, h), (707, 707));
        assert!((s - (0.5f64).sqrt()).abs() < 1e-12);
        assert_eq!(w as u64 * h as u64, 499_849);
    }

    #[test]
    fn small_page_untouched() {
        assert_eq!(budget_dims(100, 100, 500_000), (100, 100, 1.0));
    }

    #[test]
    fn token_box_rescaled_with_floor_and_ceil() {
        let b = BBox::new(10, 195, 40, 300);
        // 97.5 floors to 97
        assert_eq!(b.scaled(0.5, 500, 500), Some(BBox::new(5, 97, 20, 150)));
    }

    #[test]
    fn resize_keeps_constant_image_and_mask_classes() {
        let image = Raster::filled(1200, 900, 1, 0.25);
        let mut mask = ClassMask::zeros(1200, 900);
        for y in 300..600 {
            for x in 0..600 {
                mask.set(x, y, 2);
            }
        }
        let tokens = vec![Token {
            text: "a".into(),
            bbox: BBox::new(10, 195, 40, 300),
            index: 0,
        }];
        let page = Page::new("p", tokens, image, Some(mask)).unwrap();
        let r = resize_to_budget(&page, 500_000);
        assert!(r.page.width as u64 * r.page.height as u64 <= 500_000);
        assert!(r.page.image.data.iter().all(|&v| (v - 0.25).abs() < 1e-6));
        let m = r.page.label_mask.as_ref().unwrap();
        let frac = m.count(2) as f64 / m.labels.len() as f64;
        assert!((frac - 1.0 / 6.0).abs() < 0.01);
        assert_eq!(r.page.tokens.len(), 1);
    }

    fn sample() -> Sample {
        let mut image = Raster::filled(20, 14, 1, 1.0);
        let mut mask = ClassMask::zeros(20, 14);
        for y in 3..9 {
            for x in 4..15 {
                image.set(0, x, y, 0.2);
                mask.set(x, y, 1);
            }
        }
        let store = EmbeddingStore::from_rows("t", 2, vec![("a", vec![1.0, 0.0])], OovPolicy::Zero)
            .unwrap();
        let tokens = vec![Token {
            text: "a".into(),
            bbox: BBox::new(5, 4, 12, 8),
            index: 0,
        }];
        Sample {
            image,
            map: Some(SparseEmbeddingMap::build(20, 14, &tokens, &store).unwrap()),
            mask,
        }
    }

    #[test]
    fn mask_resampling_round_trip() {
        let mut m = ClassMask::zeros(8, 6);
        m.set(3, 2, 4);
        let up = resample_mask(&m, 16, 12);
        assert_eq!(up.count(4), 4);
        assert_eq!(resample_mask(&up, 8, 6), m);
    }

    #[test]
    fn identity_transform_is_exact() {
        let s = sample();
        assert_eq!(augment_with(&s, 1.0, 0.0), s);
    }

    #[test]
    fn augmentation_ranges_and_determinism() {
        let s = sample();
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (x, sa, ra) = augment(&s, &mut a, (0.8, 1.2), (-0.01, 0.01));
            let (y, sb, rb) = augment(&s, &mut b, (0.8, 1.2), (-0.01, 0.01));
            assert_eq!(x, y);
            assert_eq!((sa.to_bits(), ra.to_bits()), (sb.to_bits(), rb.to_bits()));
            assert!((0.8..=1.2).contains(&sa));
            assert!((-0.01..=0.01).contains(&ra));
            assert_eq!(x.image.width, (20.0 * sa).round() as u32);
        }
    }

    #[test]
    fn labels_and_owners_move_together() {
        let s = sample();
        let t = augment_with(&s, 1.17, 0.008);
        let map = t.map.as_ref().unwrap();
        assert!(t.mask.labels.iter().all(|&l| l <= 1));
        // every owned pixel lies on the labelled region it came from
        for (i, &o) in map.grid.owner.iter().enumerate() {
            if o != NO_OWNER {
                assert_eq!(t.mask.labels[i], 1);
            }
        }
        let scaled = s.mask.count(1) as f64 * 1.17 * 1.17;
        assert!((t.mask.count(1) as f64 - scaled).abs() / scaled < 0.1);
    }
}
