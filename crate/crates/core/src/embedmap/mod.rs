//! Pixel-aligned text embedding maps.
//!
//! Every pixel covered by a token box takes that token's vector; uncovered
//! pixels hold the zero vector. A pixel covered by several boxes goes to the
//! token whose box center is nearest to the pixel center, and on an exact tie
//! to the token with the lowest index.

mod codec;
mod pca;

pub use codec::{deserialize_map, read_map, serialize_map, write_map};
pub use pca::{fit_pca, fit_pca_maps, project_map, PcaModel};

use crate::embeddings::Embedder;
use crate::error::{Error, Result};
use crate::ingest::{Page, Token};

/// Owner value of pixels that no token covers.
pub const NO_OWNER: u32 = u32::MAX;

/// Default ceiling on dense map size, in `f32` elements (1 GiB).
pub const DEFAULT_MAX_ELEMENTS: usize = 1 << 28;

/// Token ownership of every pixel, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OwnerGrid {
    pub width: u32,
    pub height: u32,
    pub owner: Vec<u32>,
}

impl OwnerGrid {
    pub fn empty(width: u32, height: u32) -> Self {
        OwnerGrid {
            width,
            height,
            owner: vec![NO_OWNER; width as usize * height as usize],
        }
    }

    /// Assigns pixels to tokens. Token boxes must already lie inside the grid.
    pub fn build(width: u32, height: u32, tokens: &[Token]) -> Self {
        let mut grid = OwnerGrid::empty(width, height);
        // squared distance of the current owner's center, per pixel
        let mut best = vec![f64::INFINITY; grid.owner.len()];
        let mut order: Vec<&Token> = tokens.iter().collect();
        order.sort_by_key(|t| t.index);
        for t in order {
            let b = t.bbox;
            let (cx, cy) = b.center();
            let x_max = b.x_max.min(width);
            let y_max = b.y_max.min(height);
            for y in b.y_min..y_max {
                let dy = y as f64 + 0.5 - cy;
                let row = y as usize * width as usize;
                for x in b.x_min..x_max {
                    let dx = x as f64 + 0.5 - cx;
                    let d = dx * dx + dy * dy;
                    let i = row + x as usize;
                    // strict: an equally near, earlier token keeps the pixel
                    if d < best[i] {
                        best[i] = d;
                        grid.owner[i] = t.index as u32;
                    }
                }
            }
        }
        grid
    }

    pub fn get(&self, x: u32, y: u32) -> Option<u32> {
        let o = self.owner[y as usize * self.width as usize + x as usize];
        (o != NO_OWNER).then_some(o)
    }

    /// Number of pixels owned by each token index `0..n`.
    pub fn counts(&self, n: usize) -> Vec<usize> {
        let mut c = vec![0; n];
        for &o in &self.owner {
            if let Some(slot) = c.get_mut(o as usize) {
                *slot += 1;
            }
        }
        c
    }
}

/// Sparse map: ownership grid plus one vector per token index.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseEmbeddingMap {
    pub grid: OwnerGrid,
    pub dim: usize,
    /// Vector of token `k` at `vectors[k]`.
    pub vectors: Vec<Vec<f32>>,
}

impl SparseEmbeddingMap {
    pub fn build(width: u32, height: u32, tokens: &[Token], store: &dyn Embedder) -> Result<Self> {
        let dim = store.dim();
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "embedding dimension N must be positive".into(),
            ));
        }
        let n = tokens.iter().map(|t| t.index + 1).max().unwrap_or(0);
        let mut vectors = vec![vec![0.0; dim]; n];
        for t in tokens {
            vectors[t.index] = store.lookup(&t.text);
        }
        Ok(SparseEmbeddingMap {
            grid: OwnerGrid::build(width, height, tokens),
            dim,
            vectors,
        })
    }

    pub fn to_dense(&self, max_elements: usize) -> Result<TextEmbeddingMap> {
        let (w, h) = (self.grid.width, self.grid.height);
        let elements = (w as usize)
            .checked_mul(h as usize)
            .and_then(|p| p.checked_mul(self.dim));
        match elements {
            Some(e) if e <= max_elements => {}
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "dense {w}x{h}x{} map exceeds the budget of {max_elements} elements; use the sparse map instead",
                    self.dim
                )))
            }
        }
        let mut data = vec![0f32; w as usize * h as usize * self.dim];
        for (i, &o) in self.grid.owner.iter().enumerate() {
            if o != NO_OWNER {
                data[i * self.dim..(i + 1) * self.dim].copy_from_slice(&self.vectors[o as usize]);
            }
        }
        Ok(TextEmbeddingMap {
            width: w,
            height: h,
            dim: self.dim,
            data,
            owner: self.grid.owner.clone(),
        })
    }

    /// Applies `f` to every token vector, producing a map of dimension `dim`.
    pub fn map_vectors(&self, dim: usize, f: impl Fn(&[f32]) -> Vec<f32>) -> SparseEmbeddingMap {
        SparseEmbeddingMap {
            grid: self.grid.clone(),
            dim,
            vectors: self.vectors.iter().map(|v| f(v)).collect(),
        }
    }

    /// Distinct nonzero vectors of tokens that own at least one pixel.
    pub fn owned_vectors(&self) -> Vec<&[f32]> {
        let counts = self.grid.counts(self.vectors.len());
        self.vectors
            .iter()
            .zip(counts)
            .filter(|(_, c)| *c > 0)
            .map(|(v, _)| v.as_slice())
            .collect()
    }

    /// Writes the map planar (channel-major) into `out`, which must hold
    /// `dim * width * height` values.
    pub fn write_planar(&self, out: &mut [f32]) {
        let plane = self.grid.owner.len();
        debug_assert_eq!(out.len(), plane * self.dim);
        out.fill(0.0);
        for (i, &o) in self.grid.owner.iter().enumerate() {
            if o != NO_OWNER {
                for (c, &v) in self.vectors[o as usize].iter().enumerate() {
                    out[c * plane + i] = v;
                }
            }
        }
    }
}

/// Dense `H x W x N` map (pixel-major) with its ownership grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddingMap {
    pub width: u32,
    pub height: u32,
    pub dim: usize,
    pub data: Vec<f32>,
    pub owner: Vec<u32>,
}

impl TextEmbeddingMap {
    pub fn pixel(&self, x: u32, y: u32) -> &[f32] {
        let i = y as usize * self.width as usize + x as usize;
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn owner_at(&self, x: u32, y: u32) -> Option<u32> {
        let o = self.owner[y as usize * self.width as usize + x as usize];
        (o != NO_OWNER).then_some(o)
    }

    /// Recovers the sparse form. Fails if two pixels of the same token disagree.
    pub fn to_sparse(&self) -> Result<SparseEmbeddingMap> {
        let n = self
            .owner
            .iter()
            .filter(|&&o| o != NO_OWNER)
            .map(|&o| o as usize + 1)
            .max()
            .unwrap_or(0);
        let mut vectors: Vec<Option<&[f32]>> = vec![None; n];
        for (i, &o) in self.owner.iter().enumerate() {
            let px = &self.data[i * self.dim..(i + 1) * self.dim];
            if o == NO_OWNER {
                if px.iter().any(|&v| v != 0.0) {
                    return Err(Error::Format(format!(
                        "unowned pixel {i} holds a nonzero vector"
                    )));
                }
                continue;
            }
            match vectors[o as usize] {
                None => vectors[o as usize] = Some(px),
                Some(v) if v.iter().zip(px).all(|(a, b)| a.to_bits() == b.to_bits()) => {}
                Some(_) => {
                    return Err(Error::Format(format!(
                        "token {o} owns pixels with differing vectors"
                    )))
                }
            }
        }
        Ok(SparseEmbeddingMap {
            grid: OwnerGrid {
                width: self.width,
                height: self.height,
                owner: self.owner.clone(),
            },
            dim: self.dim,
            vectors: vectors
                .into_iter()
                .map(|v| v.map_or_else(|| vec![0.0; self.dim], <[f32]>::to_vec))
                .collect(),
        })
    }
}

/// Builds the dense embedding map of a page.
pub fn build_map(page: &Page, store: &dyn Embedder) -> Result<TextEmbeddingMap> {
    build_map_with_budget(
        page.width,
        page.height,
        &page.tokens,
        store,
        DEFAULT_MAX_ELEMENTS,
    )
}

pub fn build_map_with_budget(
    width: u32,
    height: u32,
    tokens: &[Token],
    store: &dyn Embedder,
    max_elements: usize,
) -> Result<TextEmbeddingMap> {
    SparseEmbeddingMap::build(width, height, tokens, store)?.to_dense(max_elements)
}
