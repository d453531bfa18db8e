//! Principal axes of a corpus's token vectors, used both for false-color
//! rendering and for shrinking embedding channels before fusion.
//!
//! Projections are linear (`axes · v`, no mean subtraction) so that pixels
//! without text stay exactly zero; the mean offset is a per-axis constant.

use std::collections::BTreeSet;
use std::path::Path;

use image::{Rgb, RgbImage};
use nalgebra::{DMatrix, SymmetricEigen};

use super::{SparseEmbeddingMap, TextEmbeddingMap, NO_OWNER};
use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};

/// Above this dimension the axes come from the Gram matrix of the samples.
const COVARIANCE_MAX_DIM: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub dim: usize,
    pub mean: Vec<f64>,
    /// `k` unit axes of length `dim`, by decreasing variance.
    pub axes: Vec<Vec<f64>>,
    /// Per-axis projection range over the fitted vectors, for color scaling.
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

fn distinct_nonzero<'a>(vectors: impl IntoIterator<Item = &'a [f32]>) -> Vec<Vec<f64>> {
    let set: BTreeSet<Vec<u32>> = vectors
        .into_iter()
        .filter(|v| v.iter().any(|&x| x != 0.0))
        .map(|v| v.iter().map(|x| (x + 0.0).to_bits()).collect())
        .collect();
    set.into_iter()
        .map(|bits| bits.into_iter().map(|b| f32::from_bits(b) as f64).collect())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Eigenpairs sorted by decreasing eigenvalue; ties keep solver order.
fn sorted_eigen(m: DMatrix<f64>) -> Vec<(f64, Vec<f64>)> {
    let eig = SymmetricEigen::new(m);
    let mut pairs: Vec<(f64, Vec<f64>)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &l)| (l, eig.eigenvectors.column(i).iter().copied().collect()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

/// Fits `k` principal axes to the distinct nonzero vectors of a set.
pub fn fit_pca<'a>(vectors: impl IntoIterator<Item = &'a [f32]>, k: usize) -> Result<PcaModel> {
    let samples = distinct_nonzero(vectors);
    if k == 0 {
        return Err(Error::InvalidArgument("PCA needs k >= 1".into()));
    }
    if samples.len() < k.max(2) {
        return Err(Error::InvalidArgument(format!(
            "PCA with k = {k} needs at least {} distinct nonzero vectors, got {}",
            k.max(2),
            samples.len()
        )));
    }
    let dim = samples[0].len();
    if samples.iter().any(|s| s.len() != dim) {
        return Err(Error::DimensionMismatch(
            "PCA input vectors differ in length".into(),
        ));
    }
    if k > dim {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds dimension {dim}"
        )));
    }
    let m = samples.len();
    let mut mean = vec![0f64; dim];
    for s in &samples {
        for (a, x) in mean.iter_mut().zip(s) {
            *a += x;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);
    let centered = DMatrix::from_fn(m, dim, |i, j| samples[i][j] - mean[j]);

    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(k);
    let top;
    if dim <= COVARIANCE_MAX_DIM || m >= dim {
        let cov = centered.transpose() * &centered / m as f64;
        let pairs = sorted_eigen(cov);
        top = pairs[0].0;
        axes.extend(pairs.into_iter().take(k).map(|(_, v)| v));
    } else {
        let gram = &centered * centered.transpose() / m as f64;
        let pairs = sorted_eigen(gram);
        top = pairs[0].0;
        let tol = top.abs() * 1e-12;
        for (l, u) in pairs.into_iter().take(k) {
            if l <= tol {
                break;
            }
            let u = DMatrix::from_column_slice(m, 1, &u);
            let v = centered.transpose() * u;
            axes.push(v.iter().copied().collect());
        }
        // rank-deficient tail: complete with standard basis directions
        let mut e = 0;
        while axes.len() < k && e < dim {
            let mut v = vec![0f64; dim];
            v[e] = 1.0;
            axes.push(v);
            e += 1;
            if !orthonormalize(&mut axes) {
                axes.pop();
            }
        }
    }
    if top <= 0.0 {
        return Err(Error::InvalidArgument("PCA input has zero variance".into()));
    }
    orthonormalize(&mut axes);
    for a in &mut axes {
        let (imax, _) = a.iter().enumerate().fold((0, 0f64), |(bi, bv), (i, &x)| {
            if x.abs() > bv {
                (i, x.abs())
            } else {
                (bi, bv)
            }
        });
        if a[imax] < 0.0 {
            a.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let mut lo = vec![f64::INFINITY; k];
    let mut hi = vec![f64::NEG_INFINITY; k];
    for s in &samples {
        for (j, a) in axes.iter().enumerate() {
            let p = dot(a, s);
            lo[j] = lo[j].min(p);
            hi[j] = hi[j].max(p);
        }
    }
    Ok(PcaModel {
        dim,
        mean,
        axes,
        lo,
        hi,
    })
}

/// Modified Gram-Schmidt in place. Returns false if the last vector collapsed.
fn orthonormalize(axes: &mut [Vec<f64>]) -> bool {
    let mut ok = true;
    for i in 0..axes.len() {
        for j in 0..i {
            let (done, rest) = axes.split_at_mut(i);
            let d = dot(&done[j], &rest[0]);
            rest[0]
                .iter_mut()
                .zip(&done[j])
                .for_each(|(x, y)| *x -= d * y);
        }
        let n = dot(&axes[i], &axes[i]).sqrt();
        if n < 1e-10 {
            ok = false;
            continue;
        }
        axes[i].iter_mut().for_each(|x| *x /= n);
    }
    ok
}

/// Fits on the distinct vectors owned by pixels of the given maps.
pub fn fit_pca_maps<'a>(
    maps: impl IntoIterator<Item = &'a SparseEmbeddingMap>,
    k: usize,
) -> Result<PcaModel> {
    let vectors: Vec<&[f32]> = maps.into_iter().flat_map(|m| m.owned_vectors()).collect();
    fit_pca(vectors, k)
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.axes.len()
    }

    /// Raw projection `axes · v`.
    pub fn project(&self, v: &[f32]) -> Vec<f64> {
        self.axes
            .iter()
            .map(|a| a.iter().zip(v).map(|(x, y)| x * *y as f64).sum())
            .collect()
    }

    pub fn project_f32(&self, v: &[f32]) -> Vec<f32> {
        if v.iter().all(|&x| x == 0.0) {
            return vec![0.0; self.k()];
        }
        self.project(v).into_iter().map(|x| x as f32).collect()
    }

    /// Projection scaled per axis to `[0, 255]` by the fitted range.
    pub fn color(&self, v: &[f32]) -> Vec<u8> {
        self.project(v)
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&p, (&lo, &hi))| {
                if hi > lo {
                    ((p - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8
                } else {
                    128
                }
            })
            .collect()
    }

    /// First `k` axes of this model.
    pub fn truncated(&self, k: usize) -> Result<PcaModel> {
        if k == 0 || k > self.k() {
            return Err(Error::InvalidArgument(format!(
                "cannot keep {k} of {} axes",
                self.k()
            )));
        }
        Ok(PcaModel {
            dim: self.dim,
            mean: self.mean.clone(),
            axes: self.axes[..k].to_vec(),
            lo: self.lo[..k].to_vec(),
            hi: self.hi[..k].to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(b"PCA1");
        w.u32(self.dim as u32);
        w.u32(self.k() as u32);
        for x in self
            .mean
            .iter()
            .chain(self.axes.iter().flatten())
            .chain(&self.lo)
            .chain(&self.hi)
        {
            w.f64(*x);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, b"PCA1", "PCA model")?;
        let dim = r.u32()? as usize;
        let k = r.u32()? as usize;
        let mut read = |n: usize| (0..n).map(|_| r.f64()).collect::<Result<Vec<f64>>>();
        let mean = read(dim)?;
        let axes = (0..k).map(|_| read(dim)).collect::<Result<Vec<_>>>()?;
        let lo = read(k)?;
        let hi = read(k)?;
        r.finish()?;
        Ok(PcaModel {
            dim,
            mean,
            axes,
            lo,
            hi,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

/// False-color rendering: text pixels get the scaled projection on the first
/// three axes, pixels without text are white.
pub fn project_map(map: &TextEmbeddingMap, pca: &PcaModel) -> Result<RgbImage> {
    if pca.dim != map.dim {
        return Err(Error::DimensionMismatch(format!(
            "PCA fitted for N = {}, map has N = {}",
            pca.dim, map.dim
        )));
    }
    if pca.k() < 3 {
        return Err(Error::InvalidArgument(
            "color projection needs 3 axes".into(),
        ));
    }
    let pca3 = pca.truncated(3)?;
    Ok(RgbImage::from_fn(map.width, map.height, |x, y| {
        let i = y as usize * map.width as usize + x as usize;
        if map.owner[i] == NO_OWNER {
            Rgb([255, 255, 255])
        } else {
            let c = pca3.color(map.pixel(x, y));
            Rgb([c[0], c[1], c[2]])
        }
    }))
}
