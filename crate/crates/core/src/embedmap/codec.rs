//! `TEM1` map files: header, run-length encoded owner grid, then one vector
//! per owning token. All integers are little-endian `u32`, vectors are `f32`.

use std::path::Path;

use super::{OwnerGrid, SparseEmbeddingMap, TextEmbeddingMap, NO_OWNER};
use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};

const VERSION: u32 = 1;

pub fn serialize_map(map: &TextEmbeddingMap) -> Result<Vec<u8>> {
    let sparse = map.to_sparse()?;
    let mut w = Writer::new(b"TEM1");
    w.u32(VERSION);
    w.u32(map.height);
    w.u32(map.width);
    w.u32(map.dim as u32);

    let mut runs: Vec<(u32, u32)> = Vec::new();
    for &o in &map.owner {
        match runs.last_mut() {
            Some((v, n)) if *v == o => *n += 1,
            _ => runs.push((o, 1)),
        }
    }
    w.u32(runs.len() as u32);
    for (v, n) in runs {
        w.u32(v);
        w.u32(n);
    }

    let counts = sparse.grid.counts(sparse.vectors.len());
    let owned: Vec<usize> = (0..sparse.vectors.len())
        .filter(|&k| counts[k] > 0)
        .collect();
    w.u32(owned.len() as u32);
    for k in owned {
        w.u32(k as u32);
        w.f32s(&sparse.vectors[k]);
    }
    Ok(w.finish())
}

pub fn deserialize_map(bytes: &[u8]) -> Result<TextEmbeddingMap> {
    let mut r = Reader::new(bytes, b"TEM1", "embedding map")?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "embedding map: unsupported version {version}"
        )));
    }
    let height = r.u32()?;
    let width = r.u32()?;
    let dim = r.u32()? as usize;
    let pixels = width as usize * height as usize;

    let n_runs = r.u32()? as usize;
    let mut owner = Vec::with_capacity(pixels);
    for _ in 0..n_runs {
        let v = r.u32()?;
        let n = r.u32()? as usize;
        if owner.len() + n > pixels {
            return Err(Error::Format(
                "embedding map: owner runs overflow the grid".into(),
            ));
        }
        owner.extend(std::iter::repeat_n(v, n));
    }
    if owner.len() != pixels {
        return Err(Error::Format(
            "embedding map: owner runs do not cover the grid".into(),
        ));
    }

    let n_tokens = owner
        .iter()
        .filter(|&&o| o != NO_OWNER)
        .map(|&o| o as usize + 1)
        .max()
        .unwrap_or(0);
    let mut vectors: Vec<Option<Vec<f32>>> = vec![None; n_tokens];
    let n_dict = r.u32()? as usize;
    for _ in 0..n_dict {
        let k = r.u32()? as usize;
        let v = r.f32s(dim)?;
        match vectors.get_mut(k) {
            Some(slot) => *slot = Some(v),
            None => {
                return Err(Error::Format(format!(
                    "embedding map: vector for unused token {k}"
                )))
            }
        }
    }
    r.finish()?;
    let counts = OwnerGrid {
        width,
        height,
        owner: owner.clone(),
    }
    .counts(n_tokens);
    let vectors = vectors
        .into_iter()
        .enumerate()
        .map(|(k, v)| match v {
            Some(v) => Ok(v),
            None if counts[k] == 0 => Ok(vec![0.0; dim]),
            None => Err(Error::Format(format!(
                "embedding map: missing vector for token {k}"
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    SparseEmbeddingMap {
        grid: OwnerGrid {
            width,
            height,
            owner,
        },
        dim,
        vectors,
    }
    .to_dense(usize::MAX)
}

pub fn write_map(path: &Path, map: &TextEmbeddingMap) -> Result<()> {
    write_file(path, &serialize_map(map)?)
}

pub fn read_map(path: &Path) -> Result<TextEmbeddingMap> {
    deserialize_map(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(seed: u64) -> TextEmbeddingMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h, dim) = (8u32, 8u32, 4usize);
        let vectors: Vec<Vec<f32>> = (0..5)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let owner: Vec<u32> = (0..64)
            .map(|_| {
                if rng.random_bool(0.3) {
                    NO_OWNER
                } else {
                    rng.random_range(0..5)
                }
            })
            .collect();
        SparseEmbeddingMap {
            grid: OwnerGrid {
                width: w,
                height: h,
                owner,
            },
            dim,
            vectors,
        }
        .to_dense(usize::MAX)
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        for seed in 0..20 {
            let map = random_map(seed);
            let back = deserialize_map(&serialize_map(&map).unwrap()).unwrap();
            assert_eq!(back.owner, map.owner);
            let bits =
                |m: &TextEmbeddingMap| m.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&back), bits(&map));
        }
    }

    #[test]
    fn truncated_or_bad_magic_fails() {
        let bytes = serialize_map(&random_map(1)).unwrap();
        for cut in [0, 3, 4, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(deserialize_map(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(deserialize_map(&bad).is_err());
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(deserialize_map(&v2).is_err());
    }

    #[test]
    fn empty_map_encodes_as_one_run() {
        let map = SparseEmbeddingMap {
            grid: OwnerGrid::empty(64, 64),
            dim: 16,
            vectors: vec![],
        }
        .to_dense(usize::MAX)
        .unwrap();
        let encoded = serialize_map(&map).unwrap();
        let dense_bytes = 64 * 64 * 16 * 4;
        // magic + version + H + W + N + run count + one run + dict count
        assert_eq!(encoded.len(), 4 + 4 * 4 + 4 + 8 + 4);
        assert!(encoded.len() < dense_bytes);
    }
}
