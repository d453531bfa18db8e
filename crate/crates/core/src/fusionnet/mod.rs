//! Early fusion of page images with text embedding maps, and the small
//! convolutional pixel classifier trained on the fused channels.

mod geometry;
pub mod net;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedmap::{PcaModel, SparseEmbeddingMap};
use crate::error::{Error, Result};
use crate::ingest::Raster;

pub use geometry::{
    augment, augment_with, budget_dims, resample_mask, resize_to_budget, Resized, Sample,
};
pub use train::{
    examples_for, loss_and_gradient, predict, read_training_log, train, write_training_log,
    Example, LogEntry, PixelModel, TrainConfig, Trained,
};

/// Which input channels the classifier sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "image")]
    Image,
    #[serde(rename = "text")]
    Text,
    #[serde(rename = "image+text")]
    ImageText,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Image, Modality::Text, Modality::ImageText];

    pub fn label(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Text => "text",
            Modality::ImageText => "image+text",
        }
    }

    /// Display name used in report rows.
    pub fn title(self) -> &'static str {
        match self {
            Modality::Image => "Image",
            Modality::Text => "Text",
            Modality::ImageText => "Image+Text",
        }
    }

    pub fn uses_text(self) -> bool {
        self != Modality::Image
    }

    fn code(self) -> u8 {
        match self {
            Modality::Image => 0,
            Modality::Text => 1,
            Modality::ImageText => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Modality::ALL.into_iter().find(|m| m.code() == c)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "image" => Ok(Modality::Image),
            "text" => Ok(Modality::Text),
            "image+text" | "image_text" | "imagetext" => Ok(Modality::ImageText),
            _ => Err(Error::InvalidArgument(format!(
                "unknown modality `{s}` (expected image, text or image+text)"
            ))),
        }
    }
}

/// Planar `(C + N') x H x W` network input.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedInput {
    pub width: u32,
    pub height: u32,
    pub image_channels: usize,
    pub map_channels: usize,
    pub data: Vec<f32>,
}

impl FusedInput {
    pub fn channels(&self) -> usize {
        self.image_channels + self.map_channels
    }

    pub fn plane_len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let p = self.plane_len();
        &self.data[c * p..(c + 1) * p]
    }
}

/// Stacks image and map channels for a modality. The map is required for
/// the text modalities and ignored for `Image`.
pub fn make_fused_input(
    image: &Raster,
    map: Option<&SparseEmbeddingMap>,
    modality: Modality,
) -> Result<FusedInput> {
    let plane = image.plane_len();
    let map = match (modality, map) {
        (Modality::Image, _) => None,
        (_, None) => {
            return Err(Error::InvalidArgument(format!(
                "modality {modality} needs a text embedding map"
            )))
        }
        (_, Some(m)) => {
            if (m.grid.width, m.grid.height) != (image.width, image.height) {
                return Err(Error::DimensionMismatch(format!(
                    "map {}x{} vs image {}x{}",
                    m.grid.width, m.grid.height, image.width, image.height
                )));
            }
            Some(m)
        }
    };
    let map_channels = map.map_or(0, |m| m.dim);
    let mut data = vec![0f32; (image.channels + map_channels) * plane];
    if modality != Modality::Text {
        data[..image.channels * plane].copy_from_slice(&image.data);
    }
    if let Some(m) = map {
        m.write_planar(&mut data[image.channels * plane..]);
    }
    Ok(FusedInput {
        width: image.width,
        height: image.height,
        image_channels: image.channels,
        map_channels,
        data,
    })
}

/// Projects every token vector of a map onto the first `k` corpus axes.
pub fn reduce_map_channels(
    map: &SparseEmbeddingMap,
    pca: &PcaModel,
    k: usize,
) -> Result<SparseEmbeddingMap> {
    if map.dim != pca.dim {
        return Err(Error::DimensionMismatch(format!(
            "map has {} channels, PCA model expects {}",
            map.dim, pca.dim
        )));
    }
    let axes = pca.truncated(k)?;
    Ok(map.map_vectors(k, |v| axes.project_f32(v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{EmbeddingStore, OovPolicy};
    use crate::embedmap::{fit_pca, project_map, OwnerGrid};
    use crate::ingest::{BBox, Token};

    fn toy_map(w: u32, h: u32, dim: usize) -> SparseEmbeddingMap {
        let rows: Vec<(String, Vec<f32>)> = (0..5)
            .map(|i| {
                (
                    format!("w{i}"),
                    (0..dim)
                        .map(|d| ((i * 7 + d * 3) % 11) as f32 / 5.0 - 1.0)
                        .collect(),
                )
            })
            .collect();
        let store = EmbeddingStore::from_rows("toy", dim, rows, OovPolicy::Zero).unwrap();
        let tokens: Vec<Token> = (0..5)
            .map(|i| Token {
                text: format!("w{i}"),
                bbox: BBox::new(
                    i as u32 * 2,
                    (i as u32) % 3,
                    i as u32 * 2 + 3,
                    (i as u32) % 3 + 2,
                ),
                index: i,
            })
            .collect();
        SparseEmbeddingMap::build(w, h, &tokens, &store).unwrap()
    }

    fn ramp_image(w: u32, h: u32, c: usize) -> Raster {
        let mut r = Raster::filled(w, h, c, 0.0);
        for (i, v) in r.data.iter_mut().enumerate() {
            *v = (i % 17) as f32 / 16.0;
        }
        r
    }

    #[test]
    fn channel_layout_per_modality() {
        let img = ramp_image(12, 6, 3);
        let map = reduce_map_channels(
            &toy_map(12, 6, 10),
            &fit_pca(toy_map(12, 6, 10).owned_vectors(), 4).unwrap(),
            4,
        )
        .unwrap();
        let map = map.map_vectors(8, |v| v.iter().chain(v).copied().collect());

        let both = make_fused_input(&img, Some(&map), Modality::ImageText).unwrap();
        assert_eq!(both.channels(), 11);
        assert_eq!(&both.data[..img.data.len()], &img.data[..]);

        let text = make_fused_input(&img, Some(&map), Modality::Text).unwrap();
        assert_eq!(text.channels(), 11);
        assert!(text.data[..3 * 72].iter().all(|&v| v == 0.0));
        assert_eq!(&text.data[3 * 72..], &both.data[3 * 72..]);

        let image = make_fused_input(&img, Some(&map), Modality::Image).unwrap();
        assert_eq!(image.channels(), 3);
        assert_eq!(
            image,
            make_fused_input(&img, None, Modality::Image).unwrap()
        );
        assert!(make_fused_input(&img, None, Modality::Text).is_err());
    }

    #[test]
    fn text_input_ignores_pixels() {
        let map = toy_map(12, 6, 4);
        let a = make_fused_input(&ramp_image(12, 6, 1), Some(&map), Modality::Text).unwrap();
        let b =
            make_fused_input(&Raster::filled(12, 6, 1, 0.3), Some(&map), Modality::Text).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn k_equal_n_is_lossless() {
        // 6 tokens in general position in R^5: the fit recovers all 5 axes
        let dim = 5;
        let vecs: Vec<Vec<f32>> = (0..6)
            .map(|i| {
                (0..dim)
                    .map(|d| {
                        if d == i {
                            1.0 + i as f32
                        } else {
                            0.1 * (i + d) as f32
                        }
                    })
                    .collect()
            })
            .collect();
        let pca = fit_pca(vecs.iter().map(|v| v.as_slice()), dim).unwrap();
        let tokens: Vec<Token> = (0..6)
            .map(|i| Token {
                text: format!("{i}"),
                bbox: BBox::new(i as u32, 0, i as u32 + 1, 1),
                index: i,
            })
            .collect();
        let map = SparseEmbeddingMap {
            grid: OwnerGrid::build(6, 1, &tokens),
            dim,
            vectors: vecs.clone(),
        };
        let reduced = reduce_map_channels(&map, &pca, dim).unwrap();
        let dist = |a: &[f32], b: &[f32]| -> f64 {
            a.iter()
                .zip(b)
                .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        for i in 0..6 {
            for j in 0..6 {
                let d0 = dist(&vecs[i], &vecs[j]);
                let d1 = dist(&reduced.vectors[i], &reduced.vectors[j]);
                assert!((d0 - d1).abs() < 1e-6, "{i} {j}: {d0} vs {d1}");
            }
        }
    }

    #[test]
    fn k3_matches_false_color_projection() {
        let map = toy_map(12, 6, 6);
        let pca = fit_pca(map.owned_vectors(), 3).unwrap();
        let reduced = reduce_map_channels(&map, &pca, 3).unwrap();
        let dense = map.to_dense(1 << 20).unwrap();
        let img = project_map(&dense, &pca).unwrap();
        for y in 0..6 {
            for x in 0..12 {
                let Some(o) = map.grid.get(x, y) else {
                    continue;
                };
                let raw = &reduced.vectors[o as usize];
                let want: Vec<u8> = (0..3)
                    .map(|a| {
                        let (lo, hi) = (pca.lo[a], pca.hi[a]);
                        ((raw[a] as f64 - lo) / (hi - lo) * 255.0)
                            .round()
                            .clamp(0.0, 255.0) as u8
                    })
                    .collect();
                let got = img.get_pixel(x, y).0;
                for a in 0..3 {
                    assert!((want[a] as i32 - got[a] as i32).abs() <= 1);
                }
            }
        }
    }

    #[test]
    fn zero_pixels_stay_zero() {
        let map = toy_map(12, 6, 6);
        let pca = fit_pca(map.owned_vectors(), 3).unwrap();
        let reduced = reduce_map_channels(&map, &pca, 3).unwrap();
        let mut planar = vec![1f32; 3 * 72];
        reduced.write_planar(&mut planar);
        for (i, &o) in map.grid.owner.iter().enumerate() {
            if o == crate::embedmap::NO_OWNER {
                assert!((0..3).all(|c| planar[c * 72 + i] == 0.0));
            }
        }
    }

    #[test]
    fn modality_parsing() {
        for m in Modality::ALL {
            assert_eq!(m.label().parse::<Modality>().unwrap(), m);
        }
        assert!("pixels".parse::<Modality>().is_err());
    }
}
