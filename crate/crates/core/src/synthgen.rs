//! Synthetic newspaper-like corpora: pages with labelled content items whose
//! look (layout archetype) and wording (vocabulary cluster) are set
//! independently, plus per-period layout drift.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embeddings::{fnv1a, splitmix64, EmbeddingStore, OovPolicy};
use crate::error::{Error, Result};
use crate::ingest::{
    write_annotations, write_raster_png, write_token_file, BBox, ClassMask, Page, PageAnnotations,
    Raster, Region, Shape, Token, TokenPage,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Archetype {
    FramedBox,
    BottomStrip,
    TableGrid,
    PlainColumn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Position {
    Any,
    Top,
    Bottom,
}

/// Layout knobs of a class. Unset fields take archetype defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutSpec {
    pub frame_thickness: Option<u32>,
    /// Background gray level inside the region, 1 = white.
    pub shade: Option<f32>,
    /// Gray level of frames, rules and grid lines.
    pub ink: Option<f32>,
    pub line_height: Option<u32>,
    pub line_gap: Option<u32>,
    pub grid_spacing: Option<u32>,
    pub position: Option<Position>,
    pub column_count: Option<u32>,
    pub width_frac: Option<(f64, f64)>,
    pub height_frac: Option<(f64, f64)>,
    /// Probability that a region gets its shade and strokes; otherwise only
    /// its text is drawn, on white.
    pub decoration_rate: Option<f64>,
}

impl LayoutSpec {
    /// Fields set in `other` replace those of `self`.
    fn merged(&self, other: &LayoutSpec) -> LayoutSpec {
        LayoutSpec {
            frame_thickness: other.frame_thickness.or(self.frame_thickness),
            shade: other.shade.or(self.shade),
            ink: other.ink.or(self.ink),
            line_height: other.line_height.or(self.line_height),
            line_gap: other.line_gap.or(self.line_gap),
            grid_spacing: other.grid_spacing.or(self.grid_spacing),
            position: other.position.or(self.position),
            column_count: other.column_count.or(self.column_count),
            width_frac: other.width_frac.or(self.width_frac),
            height_frac: other.height_frac.or(self.height_frac),
            decoration_rate: other.decoration_rate.or(self.decoration_rate),
        }
    }
}

/// Fully resolved layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub frame_thickness: u32,
    pub shade: f32,
    pub ink: f32,
    pub line_height: u32,
    pub line_gap: u32,
    pub grid_spacing: u32,
    pub position: Position,
    pub column_count: u32,
    pub width_frac: (f64, f64),
    pub height_frac: (f64, f64),
    pub decoration_rate: f64,
}

impl Layout {
    pub fn resolve(archetype: Archetype, spec: &LayoutSpec) -> Layout {
        let (position, width_frac, height_frac) = match archetype {
            Archetype::FramedBox => (Position::Any, (0.3, 0.45), (0.3, 0.45)),
            Archetype::BottomStrip => (Position::Bottom, (1.0, 1.0), (0.25, 0.35)),
            Archetype::TableGrid => (Position::Any, (0.35, 0.5), (0.35, 0.5)),
            Archetype::PlainColumn => (Position::Any, (0.3, 0.4), (0.45, 0.65)),
        };
        Layout {
            frame_thickness: spec.frame_thickness.unwrap_or(1),
            shade: spec.shade.unwrap_or(1.0),
            ink: spec.ink.unwrap_or(0.15),
            line_height: spec.line_height.unwrap_or(3),
            line_gap: spec.line_gap.unwrap_or(1),
            grid_spacing: spec.grid_spacing.unwrap_or(6),
            position: spec.position.unwrap_or(position),
            column_count: spec.column_count.unwrap_or(1),
            width_frac: spec.width_frac.unwrap_or(width_frac),
            height_frac: spec.height_frac.unwrap_or(height_frac),
            decoration_rate: spec.decoration_rate.unwrap_or(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub name: String,
    /// Number of generated words; ignored when `tokens` is given.
    #[serde(default = "default_cluster_size")]
    pub size: usize,
    pub seed: u64,
    #[serde(default)]
    pub tokens: Option<Vec<String>>,
}

fn default_cluster_size() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    pub archetype: Archetype,
    pub cluster: String,
    /// Probability that a region slot of a page holds this class.
    pub frequency: f64,
    #[serde(default)]
    pub layout: LayoutSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassOverride {
    pub name: String,
    pub archetype: Option<Archetype>,
    pub cluster: Option<String>,
    pub frequency: Option<f64>,
    #[serde(default)]
    pub layout: LayoutSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSpec {
    pub period: u32,
    #[serde(default)]
    pub classes: Vec<ClassOverride>,
}

fn default_dim() -> usize {
    16
}
fn default_slots() -> usize {
    1
}
fn default_spread() -> f64 {
    0.35
}
fn default_filler_line_height() -> u32 {
    3
}
fn default_filler_line_gap() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
    /// Region slots per page; each slot draws one class or nothing.
    #[serde(default = "default_slots")]
    pub region_slots: usize,
    /// Probability of perturbing one character of a token.
    #[serde(default)]
    pub ocr_noise: f64,
    /// Standard deviation of additive Gaussian pixel noise.
    #[serde(default)]
    pub pixel_noise: f64,
    /// Spread of word vectors around their cluster centroid (unit norm).
    #[serde(default = "default_spread")]
    pub cluster_spread: f64,
    pub filler_cluster: String,
    #[serde(default = "default_filler_line_height")]
    pub filler_line_height: u32,
    #[serde(default = "default_filler_line_gap")]
    pub filler_line_gap: u32,
    pub clusters: Vec<ClusterSpec>,
    #[serde(default)]
    pub classes: Vec<ClassSpec>,
    #[serde(default)]
    pub drift: Vec<DriftSpec>,
}

const PLACEMENT_ATTEMPTS: usize = 64;
const MIN_SIDE: u32 = 16;

impl CorpusSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: CorpusSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width < MIN_SIDE || self.height < MIN_SIDE {
            return bad(format!("pages must be at least {MIN_SIDE}x{MIN_SIDE}"));
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive".into());
        }
        let names: HashSet<&str> = self.clusters.iter().map(|c| c.name.as_str()).collect();
        if names.len() != self.clusters.len() {
            return bad("cluster names must be unique".into());
        }
        if !names.contains(self.filler_cluster.as_str()) {
            return bad(format!(
                "filler cluster `{}` is not defined",
                self.filler_cluster
            ));
        }
        let mut class_names = HashSet::new();
        for c in &self.classes {
            if !names.contains(c.cluster.as_str()) {
                return bad(format!(
                    "class `{}` references unknown cluster `{}`",
                    c.name, c.cluster
                ));
            }
            if !(0.0..=1.0).contains(&c.frequency) {
                return bad(format!("class `{}` has frequency outside [0, 1]", c.name));
            }
            if c.name == "background" || !class_names.insert(c.name.as_str()) {
                return bad(format!("class name `{}` is reserved or repeated", c.name));
            }
        }
        if self.classes.len() > 254 {
            return bad("at most 254 classes".into());
        }
        let total: f64 = self.classes.iter().map(|c| c.frequency).sum();
        if total > 1.0 + 1e-9 {
            return bad(format!("class frequencies sum to {total}, above 1"));
        }
        for d in &self.drift {
            for o in &d.classes {
                if !class_names.contains(o.name.as_str()) {
                    return bad(format!(
                        "drift for period {} names unknown class `{}`",
                        d.period, o.name
                    ));
                }
                if let Some(cl) = &o.cluster {
                    if !names.contains(cl.as_str()) {
                        return bad(format!("drift references unknown cluster `{cl}`"));
                    }
                }
            }
        }
        if !(0.0..=1.0).contains(&self.ocr_noise)
            || self.pixel_noise < 0.0
            || self.cluster_spread < 0.0
        {
            return bad(
                "ocr_noise must lie in [0, 1]; pixel_noise and cluster_spread must be non-negative"
                    .into(),
            );
        }
        Ok(())
    }

    /// Class names with `background` first, in id order.
    pub fn class_names(&self) -> Vec<String> {
        std::iter::once("background".to_string())
            .chain(self.classes.iter().map(|c| c.name.clone()))
            .collect()
    }

    /// Stable hash of the spec contents.
    pub fn hash(&self) -> u64 {
        fnv1a(
            serde_json::to_string(self)
                .expect("spec serializes")
                .as_bytes(),
        )
    }
}

/// The spec as seen in `period`: that period's overrides applied.
pub fn apply_drift(spec: &CorpusSpec, period: u32) -> CorpusSpec {
    let mut out = spec.clone();
    for d in spec.drift.iter().filter(|d| d.period == period) {
        for o in &d.classes {
            if let Some(c) = out.classes.iter_mut().find(|c| c.name == o.name) {
                if let Some(a) = o.archetype {
                    c.archetype = a;
                }
                if let Some(cl) = &o.cluster {
                    c.cluster = cl.clone();
                }
                if let Some(f) = o.frequency {
                    c.frequency = f;
                }
                c.layout = c.layout.merged(&o.layout);
            }
        }
    }
    out
}

/// Words and vectors of every cluster.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    pub dim: usize,
    /// `(cluster name, words)` in spec order.
    pub clusters: Vec<(String, Vec<String>)>,
    pub vectors: Vec<Vec<Vec<f32>>>,
}

impl Vocabulary {
    pub fn words(&self, cluster: &str) -> Option<&[String]> {
        self.clusters
            .iter()
            .find(|(n, _)| n == cluster)
            .map(|(_, w)| w.as_slice())
    }

    /// Store over all cluster words with subword fallback for noisy tokens.
    pub fn store(&self) -> Result<EmbeddingStore> {
        let rows = self
            .clusters
            .iter()
            .zip(&self.vectors)
            .flat_map(|((_, words), vecs)| words.iter().cloned().zip(vecs.iter().cloned()));
        EmbeddingStore::from_rows("synthetic", self.dim, rows, OovPolicy::SubwordHash)
    }
}

fn random_word(rng: &mut impl Rng) -> String {
    let len = rng.random_range(3..=8);
    (0..len)
        .map(|_| rng.random_range(b'a'..=b'z') as char)
        .collect()
}

/// Builds the vocabulary: disjoint word lists, and per cluster a unit
/// centroid with isotropic Gaussian word vectors around it.
pub fn build_vocabulary(spec: &CorpusSpec) -> Result<Vocabulary> {
    let dim = spec.embedding_dim;
    let mut taken: HashSet<String> = HashSet::new();
    let mut clusters = Vec::new();
    let mut vectors = Vec::new();
    let noise = Normal::new(0.0, spec.cluster_spread / (dim as f64).sqrt())
        .map_err(|e| Error::Config(e.to_string()))?;
    for c in &spec.clusters {
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let words: Vec<String> = match &c.tokens {
            Some(list) => {
                let mut seen = BTreeSet::new();
                for w in list {
                    let w = w.to_lowercase();
                    if w.is_empty() || w.chars().any(char::is_whitespace) {
                        return Err(Error::Config(format!(
                            "cluster `{}` has an empty or spaced token",
                            c.name
                        )));
                    }
                    if taken.contains(&w) {
                        return Err(Error::Config(format!(
                            "token `{w}` appears in more than one cluster"
                        )));
                    }
                    seen.insert(w);
                }
                seen.into_iter().collect()
            }
            None => {
                let mut words = Vec::with_capacity(c.size);
                let mut tries = 0;
                while words.len() < c.size {
                    tries += 1;
                    if tries > c.size * 100 + 1000 {
                        return Err(Error::Config(format!(
                            "could not draw {} distinct words for `{}`",
                            c.size, c.name
                        )));
                    }
                    let w = random_word(&mut rng);
                    if !taken.contains(&w) && !words.contains(&w) {
                        words.push(w);
                    }
                }
                words
            }
        };
        if words.is_empty() {
            return Err(Error::Config(format!("cluster `{}` has no words", c.name)));
        }
        taken.extend(words.iter().cloned());
        let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
        let mut centroid: Vec<f64> = (0..dim).map(|_| std_normal.sample(&mut rng)).collect();
        let norm = centroid
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
            .max(1e-12);
        centroid.iter_mut().for_each(|x| *x /= norm);
        let vecs = words
            .iter()
            .map(|_| {
                centroid
                    .iter()
                    .map(|&m| (m + noise.sample(&mut rng)) as f32)
                    .collect()
            })
            .collect();
        clusters.push((c.name.clone(), words));
        vectors.push(vecs);
    }
    Ok(Vocabulary {
        dim,
        clusters,
        vectors,
    })
}

/// A placed content item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlacedRegion {
    pub class: u8,
    pub bbox: BBox,
}

#[derive(Debug, Clone)]
pub struct SyntheticPage {
    pub page: Page,
    pub period: u32,
    pub spec_hash: u64,
    pub seed: u64,
    pub regions: Vec<PlacedRegion>,
}

/// Seed of page `index` of `period`.
pub fn page_seed(corpus_seed: u64, period: u32, index: usize) -> u64 {
    let mut s = corpus_seed
        ^ (period as u64).rotate_left(32)
        ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    splitmix64(&mut s)
}

const INK_TEXT: f32 = 0.25;

/// Deterministic glyph texture: is pixel `(col, row)` of a character inked.
fn glyph_ink(ch: u8, col: u32, row: u32) -> bool {
    let v = (ch as u32).wrapping_mul(2_654_435_761) >> ((row * 3 + col) % 29);
    v & 1 != 0
}

struct Canvas {
    w: u32,
    px: Vec<f32>,
    tokens: Vec<Token>,
}

impl Canvas {
    fn fill(&mut self, b: BBox, v: f32) {
        for y in b.y_min..b.y_max {
            for x in b.x_min..b.x_max {
                self.px[(y * self.w + x) as usize] = v;
            }
        }
    }

    fn text(&mut self, b: BBox, text: String) {
        let bytes = text.as_bytes();
        for y in b.y_min..b.y_max {
            for x in b.x_min..b.x_max {
                let col = x - b.x_min;
                let ch = bytes[col as usize % bytes.len()];
                if glyph_ink(ch, col, y - b.y_min) {
                    self.px[(y * self.w + x) as usize] = INK_TEXT;
                }
            }
        }
        let index = self.tokens.len();
        self.tokens.push(Token {
            text,
            bbox: b,
            index,
        });
    }
}

fn noisy_word(word: &str, p: f64, rng: &mut impl Rng) -> String {
    if p > 0.0 && rng.random_bool(p) {
        let mut chars: Vec<char> = word.chars().collect();
        let i = rng.random_range(0..chars.len());
        chars[i] = rng.random_range(b'a'..=b'z') as char;
        chars.into_iter().collect()
    } else {
        word.to_string()
    }
}

/// Fills `area` with lines of words; words never cross `area`'s right edge
/// nor any box in `avoid`.
#[allow(clippy::too_many_arguments)]
fn lay_text(
    canvas: &mut Canvas,
    area: BBox,
    line_height: u32,
    line_gap: u32,
    words: &[String],
    avoid: &[BBox],
    ocr_noise: f64,
    rng: &mut impl Rng,
) {
    let mut y = area.y_min;
    while y + line_height <= area.y_max {
        let mut x = area.x_min;
        loop {
            let word = words.choose(rng).expect("non-empty vocabulary");
            let len = word.len() as u32;
            if x + len > area.x_max {
                break;
            }
            let b = BBox::new(x, y, x + len, y + line_height);
            let blocked = avoid.iter().any(|a| {
                b.x_min < a.x_max + 1
                    && a.x_min < b.x_max + 1
                    && b.y_min < a.y_max + 1
                    && a.y_min < b.y_max + 1
            });
            if blocked {
                x += 1;
                continue;
            }
            let text = noisy_word(word, ocr_noise, rng);
            canvas.text(b, text);
            x += len + 1 + rng.random_range(0..2);
        }
        y += line_height + line_gap;
    }
}

fn render_region(
    canvas: &mut Canvas,
    r: BBox,
    archetype: Archetype,
    l: &Layout,
    words: &[String],
    noise: f64,
    rng: &mut impl Rng,
) {
    let plain;
    let l = if l.decoration_rate < 1.0 && rng.random::<f64>() >= l.decoration_rate {
        // same geometry and text, invisible strokes
        plain = Layout {
            shade: 1.0,
            ink: 1.0,
            ..l.clone()
        };
        &plain
    } else {
        l
    };
    canvas.fill(r, l.shade);
    let t = l.frame_thickness.min(r.width() / 4).min(r.height() / 4);
    let inner = match archetype {
        Archetype::FramedBox => {
            canvas.fill(BBox::new(r.x_min, r.y_min, r.x_max, r.y_min + t), l.ink);
            canvas.fill(BBox::new(r.x_min, r.y_max - t, r.x_max, r.y_max), l.ink);
            canvas.fill(BBox::new(r.x_min, r.y_min, r.x_min + t, r.y_max), l.ink);
            canvas.fill(BBox::new(r.x_max - t, r.y_min, r.x_max, r.y_max), l.ink);
            BBox::new(
                r.x_min + t + 1,
                r.y_min + t + 1,
                r.x_max - t - 1,
                r.y_max - t - 1,
            )
        }
        Archetype::BottomStrip => {
            canvas.fill(BBox::new(r.x_min, r.y_min, r.x_max, r.y_min + t), l.ink);
            BBox::new(r.x_min + 1, r.y_min + t + 1, r.x_max - 1, r.y_max)
        }
        Archetype::TableGrid => {
            let g = l.grid_spacing.max(2);
            let mut y = r.y_min;
            while y < r.y_max {
                canvas.fill(BBox::new(r.x_min, y, r.x_max, y + 1), l.ink);
                y += g;
            }
            let mut x = r.x_min;
            while x < r.x_max {
                canvas.fill(BBox::new(x, r.y_min, x + 1, r.y_max), l.ink);
                x += g;
            }
            canvas.fill(BBox::new(r.x_min, r.y_max - 1, r.x_max, r.y_max), l.ink);
            canvas.fill(BBox::new(r.x_max - 1, r.y_min, r.x_max, r.y_max), l.ink);
            // one token per cell
            let mut cy = r.y_min;
            while cy + g < r.y_max {
                let mut cx = r.x_min;
                while cx + g < r.x_max {
                    let cell =
                        BBox::new(cx + 1, cy + 1, cx + g, (cy + 1 + l.line_height).min(cy + g));
                    let word = words.choose(rng).expect("non-empty vocabulary");
                    let text = noisy_word(word, noise, rng);
                    canvas.text(cell, text);
                    cx += g;
                }
                cy += g;
            }
            return;
        }
        Archetype::PlainColumn => r,
    };
    if inner.is_empty() || inner.x_min >= inner.x_max || inner.y_min >= inner.y_max {
        return;
    }
    let cols = l.column_count.max(1);
    let gutter = 2;
    let col_w = (inner.width().saturating_sub(gutter * (cols - 1))) / cols;
    for c in 0..cols {
        let x0 = inner.x_min + c * (col_w + gutter);
        let area = BBox::new(x0, inner.y_min, x0 + col_w, inner.y_max);
        lay_text(
            canvas,
            area,
            l.line_height,
            l.line_gap,
            words,
            &[],
            noise,
            rng,
        );
    }
}

fn place(
    w: u32,
    h: u32,
    layout: &Layout,
    placed: &[PlacedRegion],
    rng: &mut impl Rng,
) -> Option<BBox> {
    let frac = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    };
    let mut local = ChaCha8Rng::seed_from_u64(rng.random());
    for _ in 0..PLACEMENT_ATTEMPTS {
        let rw = ((frac(&mut local, layout.width_frac) * w as f64).round() as u32).clamp(8, w - 2);
        let rh = ((frac(&mut local, layout.height_frac) * h as f64).round() as u32).clamp(8, h - 2);
        let x0 = local.random_range(1..=w - 1 - rw);
        let y0 = match layout.position {
            Position::Any => local.random_range(1..=h - 1 - rh),
            Position::Top => 1,
            Position::Bottom => h - 1 - rh,
        };
        let b = BBox::new(x0, y0, x0 + rw, y0 + rh);
        let overlaps = placed.iter().any(|p| {
            let a = p.bbox;
            b.x_min < a.x_max + 2
                && a.x_min < b.x_max + 2
                && b.y_min < a.y_max + 2
                && a.y_min < b.y_max + 2
        });
        if !overlaps {
            return Some(b);
        }
    }
    None
}

/// Generates one page of `period` (drift must already be applied to `spec`).
fn generate_page(
    spec: &CorpusSpec,
    vocab: &Vocabulary,
    period: u32,
    index: usize,
    spec_hash: u64,
) -> Result<SyntheticPage> {
    let seed = page_seed(spec.seed, period, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (spec.width, spec.height);

    let mut regions: Vec<PlacedRegion> = Vec::new();
    let mut layouts = Vec::new();
    for _ in 0..spec.region_slots {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let Some((ci, class)) = spec.classes.iter().enumerate().find(|(_, c)| {
            acc += c.frequency;
            u < acc
        }) else {
            continue;
        };
        let layout = Layout::resolve(class.archetype, &class.layout);
        let bbox = place(w, h, &layout, &regions, &mut rng).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "could not place a `{}` region on page {index} after {PLACEMENT_ATTEMPTS} attempts; \
                 lower its frequency, its size, or region_slots",
                class.name
            ))
        })?;
        regions.push(PlacedRegion {
            class: ci as u8 + 1,
            bbox,
        });
        layouts.push((class, layout));
    }

    let mut canvas = Canvas {
        w,
        px: vec![1.0; w as usize * h as usize],
        tokens: Vec::new(),
    };
    let filler = vocab
        .words(&spec.filler_cluster)
        .expect("validated filler cluster");
    let avoid: Vec<BBox> = regions.iter().map(|r| r.bbox).collect();
    lay_text(
        &mut canvas,
        BBox::new(1, 1, w - 1, h - 1),
        spec.filler_line_height,
        spec.filler_line_gap,
        filler,
        &avoid,
        spec.ocr_noise,
        &mut rng,
    );
    for (r, (class, layout)) in regions.iter().zip(&layouts) {
        let words = vocab.words(&class.cluster).expect("validated cluster");
        render_region(
            &mut canvas,
            r.bbox,
            class.archetype,
            layout,
            words,
            spec.ocr_noise,
            &mut rng,
        );
    }

    let mut mask = ClassMask::zeros(w, h);
    for r in &regions {
        for y in r.bbox.y_min..r.bbox.y_max {
            for x in r.bbox.x_min..r.bbox.x_max {
                mask.set(x, y, r.class);
            }
        }
    }

    let noise = Normal::new(0.0, spec.pixel_noise.max(1e-12)).expect("valid normal");
    let data: Vec<f32> = canvas
        .px
        .iter()
        .map(|&v| {
            let v = if spec.pixel_noise > 0.0 {
                v as f64 + noise.sample(&mut rng)
            } else {
                v as f64
            };
            // quantize as an 8-bit scan would
            (v.clamp(0.0, 1.0) * 255.0).round() as f32 / 255.0
        })
        .collect();
    let image = Raster {
        width: w,
        height: h,
        channels: 1,
        data,
    };
    let page = Page::new(
        format!("t{period}-{index:05}"),
        canvas.tokens,
        image,
        Some(mask),
    )?;
    Ok(SyntheticPage {
        page,
        period,
        spec_hash,
        seed,
        regions,
    })
}

/// Pages `indices` of `period`, generated in parallel with per-page seeds.
pub fn generate_pages(
    spec: &CorpusSpec,
    period: u32,
    indices: std::ops::Range<usize>,
) -> Result<Vec<SyntheticPage>> {
    spec.validate()?;
    let drifted = apply_drift(spec, period);
    let vocab = build_vocabulary(spec)?;
    let hash = spec.hash();
    let idx: Vec<usize> = indices.collect();
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(idx.len().max(1));
    let chunk = idx.len().div_ceil(threads).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = idx
            .chunks(chunk)
            .map(|part| {
                let (drifted, vocab) = (&drifted, &vocab);
                s.spawn(move || {
                    part.iter()
                        .map(|&i| generate_page(drifted, vocab, period, i, hash))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(idx.len());
        for h in handles {
            out.extend(h.join().expect("page generation panicked")?);
        }
        Ok(out)
    })
}

/// `n_pages` pages of period 1.
pub fn generate_corpus(spec: &CorpusSpec, n_pages: usize) -> Result<Vec<SyntheticPage>> {
    generate_pages(spec, 1, 0..n_pages)
}

/// Writes a corpus directory: `classes.txt`, `tokens.tok`,
/// `annotations.json`, `images/<id>.png`, `embeddings.vec`, `pages.tsv`.
pub fn write_corpus(dir: &Path, spec: &CorpusSpec, pages: &[SyntheticPage]) -> Result<()> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let names = spec.class_names();
    let classes_path = dir.join("classes.txt");
    std::fs::write(&classes_path, names[1..].join("\n") + "\n")
        .map_err(|e| Error::io(&classes_path, e))?;

    let token_pages: Vec<TokenPage> = pages
        .iter()
        .map(|p| TokenPage {
            id: p.page.id.clone(),
            width: p.page.width,
            height: p.page.height,
            tokens: p.page.tokens.clone(),
            dropped: 0,
        })
        .collect();
    write_token_file(&dir.join("tokens.tok"), &token_pages)?;

    let ann: Vec<PageAnnotations> = pages
        .iter()
        .map(|p| PageAnnotations {
            page_id: p.page.id.clone(),
            regions: p
                .regions
                .iter()
                .map(|r| Region {
                    shape: Shape::Rect {
                        x_min: r.bbox.x_min as f64,
                        y_min: r.bbox.y_min as f64,
                        x_max: r.bbox.x_max as f64,
                        y_max: r.bbox.y_max as f64,
                    },
                    class: r.class,
                })
                .collect(),
        })
        .collect();
    write_annotations(&dir.join("annotations.json"), &ann, &names)?;

    for p in pages {
        write_raster_png(&images.join(format!("{}.png", p.page.id)), &p.page.image)?;
    }
    build_vocabulary(spec)?
        .store()?
        .write_text(&dir.join("embeddings.vec"))?;

    let mut tsv = String::from("id\tperiod\tseed\n");
    for p in pages {
        tsv.push_str(&format!("{}\t{}\t{}\n", p.page.id, p.period, p.seed));
    }
    let tsv_path = dir.join("pages.tsv");
    std::fs::write(&tsv_path, tsv).map_err(|e| Error::io(&tsv_path, e))
}
