//! Dataset directories and in-memory synthetic datasets.
//!
//! A dataset directory holds `classes.txt` (one class name per line),
//! `tokens.tok`, `images/<page id>.png`, `embeddings.vec`, and optionally
//! `annotations.json` and `pages.tsv` (`id`, `period`, `source` columns).

use std::collections::HashMap;
use std::path::Path;

use crate::embeddings::{load_vectors, EmbeddingStore, OovPolicy};
use crate::error::{Error, Result};
use crate::ingest::{
    parse_annotations, parse_token_file, rasterize_labels, read_raster_png, ClassMask, ClassRoster,
    Page,
};
use crate::synthgen::{build_vocabulary, generate_pages, CorpusSpec};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PageTag {
    pub period: Option<u32>,
    pub source: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// `background` first.
    pub class_names: Vec<String>,
    pub pages: Vec<Page>,
    pub tags: Vec<PageTag>,
    pub store: EmbeddingStore,
}

impl Dataset {
    /// Generates `(period, count)` pages from a spec.
    pub fn synthetic(spec: &CorpusSpec, periods: &[(u32, usize)]) -> Result<Dataset> {
        let mut pages = Vec::new();
        let mut tags = Vec::new();
        for &(period, n) in periods {
            for p in generate_pages(spec, period, 0..n)? {
                tags.push(PageTag {
                    period: Some(p.period),
                    source: None,
                });
                pages.push(p.page);
            }
        }
        Ok(Dataset {
            class_names: spec.class_names(),
            pages,
            tags,
            store: build_vocabulary(spec)?.store()?,
        })
    }
}

pub fn read_class_names(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let names: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && *l != "background")
        .collect();
    let roster = ClassRoster::new(&names)?;
    Ok(std::iter::once("background".to_string())
        .chain(roster.classes().map(|(_, n)| n.to_string()))
        .collect())
}

fn read_tags(path: &Path) -> Result<HashMap<String, PageTag>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Ok(HashMap::new());
    };
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    let col = |c: &str| cols.iter().position(|h| *h == c);
    let id_col = col("id").ok_or_else(|| Error::parse(&name, 1, "missing `id` column"))?;
    let (period_col, source_col) = (col("period"), col("source"));
    let mut out = HashMap::new();
    for (i, line) in lines {
        let f: Vec<&str> = line.split('\t').map(str::trim).collect();
        if f.len() != cols.len() {
            return Err(Error::parse(
                &name,
                i + 1,
                format!("expected {} columns", cols.len()),
            ));
        }
        let period = period_col
            .map(|c| {
                f[c].parse::<u32>()
                    .map_err(|_| Error::parse(&name, i + 1, format!("bad period `{}`", f[c])))
            })
            .transpose()?;
        out.insert(
            f[id_col].to_string(),
            PageTag {
                period,
                source: source_col.map(|c| f[c].to_string()),
            },
        );
    }
    Ok(out)
}

/// Loads a dataset directory. Pages missing from `annotations.json` (or all
/// pages, without that file) get no ground truth.
pub fn load_dataset(dir: &Path, oov: OovPolicy) -> Result<Dataset> {
    let class_names = read_class_names(&dir.join("classes.txt"))?;
    let roster = ClassRoster::new(&class_names[1..])?;
    let token_pages = parse_token_file(&dir.join("tokens.tok"))?;
    let ann_path = dir.join("annotations.json");
    let annotations: HashMap<String, _> = if ann_path.exists() {
        parse_annotations(&ann_path, &roster.name_map())?
            .into_iter()
            .map(|a| (a.page_id.clone(), a))
            .collect()
    } else {
        HashMap::new()
    };
    let tsv = dir.join("pages.tsv");
    let tag_map = if tsv.exists() {
        read_tags(&tsv)?
    } else {
        HashMap::new()
    };
    let mut pages = Vec::with_capacity(token_pages.len());
    let mut tags = Vec::with_capacity(token_pages.len());
    for tp in token_pages {
        let img_path = dir.join("images").join(format!("{}.png", tp.id));
        let image = read_raster_png(&img_path)?;
        if (image.width, image.height) != (tp.width, tp.height) {
            return Err(Error::DimensionMismatch(format!(
                "{}: image is {}x{}, token file says {}x{}",
                img_path.display(),
                image.width,
                image.height,
                tp.width,
                tp.height
            )));
        }
        let mask: Option<ClassMask> = annotations
            .get(&tp.id)
            .map(|a| rasterize_labels(&a.regions, tp.width, tp.height));
        tags.push(tag_map.get(&tp.id).cloned().unwrap_or_default());
        pages.push(Page::new(tp.id, tp.tokens, image, mask)?);
    }
    let store = load_vectors(&dir.join("embeddings.vec"), oov)?;
    Ok(Dataset {
        class_names,
        pages,
        tags,
        store,
    })
}
