//! Word-vector stores with total lookup.
//!
//! Text vector files use the common `<vocab_size> <dim>` header followed by
//! one `<token> <f1> ... <fN>` row per word. Tokens are lowercased when loaded
//! and when looked up; leading and trailing punctuation is stripped from
//! queries unless nothing but punctuation would remain.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};

/// What a store returns for a token it does not know.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OovPolicy {
    /// The zero vector.
    #[default]
    Zero,
    /// Unit-norm mean of hash-seeded vectors for the character 3- to 6-grams
    /// of `<token>`.
    SubwordHash,
}

impl std::str::FromStr for OovPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(OovPolicy::Zero),
            "subword-hash" | "subword" => Ok(OovPolicy::SubwordHash),
            o => Err(Error::InvalidArgument(format!("unknown OOV policy `{o}`"))),
        }
    }
}

/// Anything that maps a token to a fixed-length vector.
pub trait Embedder: Sync {
    fn dim(&self) -> usize;
    fn lookup(&self, token: &str) -> Vec<f32>;
}

#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
    oov: OovPolicy,
    source: String,
    collisions: usize,
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '«' | '»'
                | '„'
                | '“'
                | '”'
                | '‘'
                | '’'
                | '‚'
                | '…'
                | '–'
                | '\u{2014}'
                | '¡'
                | '¿'
                | '·'
        )
}

/// Lowercases and strips surrounding punctuation. A token made only of
/// punctuation is kept whole.
pub fn normalize_token(token: &str) -> String {
    let lower = token.to_lowercase();
    let stripped = lower.trim_matches(is_punct);
    if stripped.is_empty() {
        lower
    } else {
        stripped.to_string()
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub(crate) fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Unit vector seeded by the FNV-1a hash of an n-gram.
fn ngram_vector(ngram: &str, dim: usize) -> Vec<f64> {
    let mut state = fnv1a(ngram.as_bytes());
    let mut v: Vec<f64> = (0..dim)
        .map(|_| (splitmix64(&mut state) >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0)
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Hash-based vector for an out-of-vocabulary (already normalized) token.
pub fn subword_vector(token: &str, dim: usize) -> Vec<f32> {
    let wrapped: Vec<char> = format!("<{token}>").chars().collect();
    let mut sum = vec![0f64; dim];
    let mut count = 0usize;
    for n in 3..=6 {
        for gram in wrapped.windows(n) {
            let gram: String = gram.iter().collect();
            for (s, g) in sum.iter_mut().zip(ngram_vector(&gram, dim)) {
                *s += g;
            }
            count += 1;
        }
    }
    if count == 0 {
        return vec![0.0; dim];
    }
    let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; dim];
    }
    sum.iter().map(|x| (x / norm) as f32).collect()
}

impl EmbeddingStore {
    /// Builds a store from in-memory rows. Later duplicates (after
    /// lowercasing) replace earlier ones.
    pub fn from_rows<I, S>(
        source: impl Into<String>,
        dim: usize,
        rows: I,
        oov: OovPolicy,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: AsRef<str>,
    {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "embedding dimension must be positive".into(),
            ));
        }
        let mut store = EmbeddingStore {
            dim,
            vectors: HashMap::new(),
            oov,
            source: source.into(),
            collisions: 0,
        };
        for (token, v) in rows {
            if v.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "vector for `{}` has {} components, expected {dim}",
                    token.as_ref(),
                    v.len()
                )));
            }
            store.insert(token.as_ref(), v);
        }
        if store.vectors.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{}: empty vocabulary",
                store.source
            )));
        }
        Ok(store)
    }

    fn insert(&mut self, token: &str, v: Vec<f32>) {
        let key = token.to_lowercase();
        if self.vectors.insert(key.clone(), v).is_some() {
            self.collisions += 1;
            warn!(
                "{}: `{key}` appears more than once after lowercasing; keeping the later row",
                self.source
            );
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn oov_policy(&self) -> OovPolicy {
        self.oov
    }

    pub fn set_oov_policy(&mut self, oov: OovPolicy) {
        self.oov = oov;
    }

    pub fn vocab_len(&self) -> usize {
        self.vectors.len()
    }

    /// Rows replaced because of case-folded duplicates at load time.
    pub fn collisions(&self) -> usize {
        self.collisions
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(&normalize_token(token))
    }

    /// Vocabulary sorted by token.
    pub fn sorted_entries(&self) -> Vec<(&str, &[f32])> {
        let mut v: Vec<_> = self
            .vectors
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_slice()))
            .collect();
        v.sort_unstable_by(|a, b| a.0.cmp(b.0));
        v
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.vectors.len(), self.dim);
        for (token, v) in self.sorted_entries() {
            s.push_str(token);
            for x in v {
                let _ = write!(s, " {x}");
            }
            s.push('\n');
        }
        write_file(path, s.as_bytes())
    }

    /// Binary cache: `EMB1`, dim, vocab size, then sorted `(len, utf8, floats)` records.
    pub fn to_binary(&self) -> Vec<u8> {
        let mut w = Writer::new(b"EMB1");
        w.u32(self.dim as u32);
        w.u32(self.vectors.len() as u32);
        for (token, v) in self.sorted_entries() {
            w.u32(token.len() as u32);
            w.bytes(token.as_bytes());
            w.f32s(v);
        }
        w.finish()
    }

    pub fn from_binary(bytes: &[u8], source: &str, oov: OovPolicy) -> Result<Self> {
        let mut r = Reader::new(bytes, b"EMB1", "embedding cache")?;
        let dim = r.u32()? as usize;
        let n = r.u32()? as usize;
        let mut rows = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let len = r.u32()? as usize;
            let token = std::str::from_utf8(r.bytes(len)?)
                .map_err(|_| Error::Format("embedding cache: token is not UTF-8".into()))?
                .to_string();
            rows.push((token, r.f32s(dim)?));
        }
        r.finish()?;
        Self::from_rows(source, dim, rows, oov)
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_binary())
    }

    pub fn read_binary(path: &Path, oov: OovPolicy) -> Result<Self> {
        Self::from_binary(&read_file(path)?, &path.display().to_string(), oov)
    }
}

impl Embedder for EmbeddingStore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn lookup(&self, token: &str) -> Vec<f32> {
        let key = normalize_token(token);
        if let Some(v) = self.vectors.get(&key) {
            return v.clone();
        }
        match self.oov {
            OovPolicy::Zero => vec![0.0; self.dim],
            OovPolicy::SubwordHash => subword_vector(&key, self.dim),
        }
    }
}

/// Reads a text vector file.
pub fn load_vectors(path: &Path, oov: OovPolicy) -> Result<EmbeddingStore> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_vectors_str(&text, &path.display().to_string(), oov)
}

pub fn load_vectors_str(text: &str, source: &str, oov: OovPolicy) -> Result<EmbeddingStore> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(source, 1, "empty vector file"))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    let parse_usize = |s: &str| s.parse::<usize>().ok();
    let (count, dim) = match head[..] {
        [a, b] => match (parse_usize(a), parse_usize(b)) {
            (Some(a), Some(b)) if b > 0 => (a, b),
            _ => {
                return Err(Error::parse(
                    source,
                    1,
                    "header must be `<vocab_size> <dim>` with dim > 0",
                ))
            }
        },
        _ => {
            return Err(Error::parse(
                source,
                1,
                "header must be `<vocab_size> <dim>`",
            ))
        }
    };
    let mut rows = Vec::with_capacity(count.min(1 << 20));
    for (i, line) in lines {
        let mut fields = line.split_whitespace();
        let token = fields.next().unwrap_or_default();
        let v = fields
            .map(|f| f.parse::<f32>())
            .collect::<std::result::Result<Vec<f32>, _>>()
            .map_err(|e| Error::parse(source, i + 1, format!("bad float: {e}")))?;
        if v.len() != dim {
            return Err(Error::parse(
                source,
                i + 1,
                format!("`{token}` has {} components, expected {dim}", v.len()),
            ));
        }
        rows.push((token.to_string(), v));
    }
    if rows.is_empty() {
        return Err(Error::parse(source, 1, "empty vocabulary"));
    }
    if rows.len() != count {
        return Err(Error::parse(
            source,
            1,
            format!("header declares {count} rows, file has {}", rows.len()),
        ));
    }
    EmbeddingStore::from_rows(source, dim, rows, oov)
}

/// Ordered concatenation of several stores.
#[derive(Debug, Clone)]
pub struct StackedStore {
    parts: Vec<EmbeddingStore>,
}

pub fn stack(parts: Vec<EmbeddingStore>) -> Result<StackedStore> {
    if parts.is_empty() {
        return Err(Error::InvalidArgument(
            "a stack needs at least one store".into(),
        ));
    }
    Ok(StackedStore { parts })
}

impl StackedStore {
    pub fn parts(&self) -> &[EmbeddingStore] {
        &self.parts
    }
}

impl Embedder for StackedStore {
    fn dim(&self) -> usize {
        self.parts.iter().map(|p| p.dim).sum()
    }

    fn lookup(&self, token: &str) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.dim());
        for p in &self.parts {
            out.extend(p.lookup(token));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> EmbeddingStore {
        load_vectors_str("2 3\ntemps 1 2 3\npluie 0.5 -1 0\n", "t", OovPolicy::Zero).unwrap()
    }

    #[test]
    fn loads_header_and_rows() {
        let s = small();
        assert_eq!(s.dim(), 3);
        assert_eq!(s.vocab_len(), 2);
        assert_eq!(s.lookup("temps"), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn short_row_is_reported_at_its_line() {
        let e = load_vectors_str("2 3\na 1 2 3\nb 1 2\n", "v.txt", OovPolicy::Zero).unwrap_err();
        assert!(e.to_string().starts_with("v.txt:3:"), "{e}");
        assert!(load_vectors_str("0 3\n", "v", OovPolicy::Zero).is_err());
    }

    #[test]
    fn case_collision_keeps_later_row() {
        let s = load_vectors_str("2 2\nTemps 1 1\ntemps 2 2\n", "t", OovPolicy::Zero).unwrap();
        assert_eq!(s.vocab_len(), 1);
        assert_eq!(s.collisions(), 1);
        assert_eq!(s.lookup("TEMPS"), vec![2.0, 2.0]);
    }

    #[test]
    fn normalization_strips_punctuation_but_keeps_pure_punctuation() {
        assert_eq!(normalize_token("«Temps,»"), "temps");
        assert_eq!(normalize_token("..."), "...");
        let s = load_vectors_str("2 1\n, 7\ntemps 1\n", "t", OovPolicy::Zero).unwrap();
        assert_eq!(s.lookup(","), vec![7.0]);
        assert_eq!(s.lookup("(Temps)"), vec![1.0]);
    }

    #[test]
    fn zero_oov() {
        assert_eq!(small().lookup("zzqx"), vec![0.0; 3]);
    }

    /// Independent re-implementation of the n-gram hash mean.
    fn oracle(token: &str, dim: usize) -> Vec<f64> {
        let chars: Vec<char> = std::iter::once('<')
            .chain(token.chars())
            .chain(std::iter::once('>'))
            .collect();
        let mut acc = vec![0f64; dim];
        for n in 3..=6usize {
            if chars.len() < n {
                continue;
            }
            for start in 0..=chars.len() - n {
                let gram: String = chars[start..start + n].iter().collect();
                let mut h: u64 = 14695981039346656037;
                for b in gram.bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(1099511628211);
                }
                let mut comps = Vec::new();
                for _ in 0..dim {
                    h = h.wrapping_add(0x9E3779B97F4A7C15);
                    let mut z = h;
                    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
                    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
                    z ^= z >> 31;
                    comps.push(2.0 * ((z >> 11) as f64 * 2f64.powi(-53)) - 1.0);
                }
                let n2: f64 = comps.iter().map(|c| c * c).sum::<f64>().sqrt();
                for (a, c) in acc.iter_mut().zip(comps) {
                    *a += c / n2;
                }
            }
        }
        let norm: f64 = acc.iter().map(|c| c * c).sum::<f64>().sqrt();
        acc.into_iter().map(|c| c / norm).collect()
    }

    #[test]
    fn subword_hash_matches_oracle_and_is_unit() {
        let mut s = small();
        s.set_oov_policy(OovPolicy::SubwordHash);
        let a = s.lookup("zzqx");
        assert_eq!(a, s.lookup("zzqx"));
        let want = oracle("zzqx", 3);
        for (x, w) in a.iter().zip(&want) {
            assert!((*x as f64 - w).abs() < 1e-6, "{a:?} vs {want:?}");
        }
        let norm: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        // store lookup and the free function agree
        let b = subword_vector("zzqx", 3);
        assert_eq!(a, b);
        assert_eq!(s.lookup(""), vec![0.0; 3]);
    }

    #[test]
    fn stack_dimensions_and_oov_concatenation() {
        let a =
            EmbeddingStore::from_rows("ft", 300, [("w", vec![0.1; 300])], OovPolicy::SubwordHash)
                .unwrap();
        let b = EmbeddingStore::from_rows("flair", 4096, [("w", vec![0.2; 4096])], OovPolicy::Zero)
            .unwrap();
        let st = stack(vec![a.clone(), b.clone()]).unwrap();
        assert_eq!(st.dim(), 4396);
        let mut manual = a.lookup("nope");
        manual.extend(b.lookup("nope"));
        assert_eq!(st.lookup("nope"), manual);

        let single = stack(vec![a.clone()]).unwrap();
        for t in ["w", "W", "nope", ""] {
            assert_eq!(single.lookup(t), a.lookup(t));
        }
        assert!(stack(vec![]).is_err());
    }

    #[test]
    fn binary_cache_round_trip_and_truncation() {
        let s = small();
        let bytes = s.to_binary();
        let back = EmbeddingStore::from_binary(&bytes, "c", OovPolicy::Zero).unwrap();
        assert_eq!(back.sorted_entries(), s.sorted_entries());
        assert!(
            EmbeddingStore::from_binary(&bytes[..bytes.len() - 1], "c", OovPolicy::Zero).is_err()
        );
        assert!(EmbeddingStore::from_binary(b"EMB0", "c", OovPolicy::Zero).is_err());
    }

    proptest! {
        #[test]
        fn lookup_total_deterministic_and_case_insensitive(t in "\\PC{0,12}") {
            let mut s = small();
            s.set_oov_policy(OovPolicy::SubwordHash);
            let a = s.lookup(&t);
            prop_assert_eq!(a.len(), 3);
            prop_assert!(a.iter().all(|x| x.is_finite()));
            prop_assert_eq!(&a, &s.lookup(&t));
            prop_assert_eq!(&a, &s.lookup(&t.to_lowercase()));
            let other = EmbeddingStore::from_rows("o", 5, [("x", vec![1.0; 5])], OovPolicy::SubwordHash).unwrap();
            let st = stack(vec![s.clone(), other.clone()]).unwrap();
            prop_assert_eq!(st.lookup(&t).len(), s.lookup(&t).len() + other.lookup(&t).len());
        }
    }
}
