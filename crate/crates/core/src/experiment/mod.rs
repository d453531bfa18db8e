//! Experiment runner: split a dataset, train every (modality x run) cell,
//! predict and post-process the held-out pages, and aggregate the per-page
//! outcomes into reports with Welch tests against the image baseline.

mod dataset;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::{splitmix64, Embedder, OovPolicy};
use crate::embedmap::{fit_pca_maps, PcaModel, SparseEmbeddingMap};
use crate::error::{Error, Result};
use crate::fusionnet::{
    make_fused_input, predict, reduce_map_channels, resize_to_budget, train, write_training_log,
    Modality, PixelModel, Sample, TrainConfig,
};
use crate::ingest::{ClassMask, Page};
use crate::postproc::postprocess;
use crate::segmetrics::{
    iou_from_masks, summarize, write_records, EvalReport, PageRecord, ReportOptions, ThresholdRange,
};
use crate::synthgen::CorpusSpec;

pub use dataset::{load_dataset, read_class_names, Dataset, PageTag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    /// Dataset directory (see [`load_dataset`]).
    pub dir: Option<PathBuf>,
    /// Synthetic corpus spec file.
    pub synth: Option<PathBuf>,
    /// `(period, page count)` pairs to generate from the spec.
    #[serde(default)]
    pub periods: Vec<(u32, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SplitPolicy {
    /// A random `test_fraction` of all pages is held out.
    Random { test_fraction: f64 },
    /// Train on pages of `train_periods`; one test set per test period.
    /// Periods in both lists lose `holdout_fraction` of their pages to the
    /// test side.
    Period {
        train_periods: Vec<u32>,
        test_periods: Vec<u32>,
        #[serde(default)]
        holdout_fraction: f64,
    },
    /// As `Period`, keyed by source tag.
    Source {
        train_sources: Vec<String>,
        test_sources: Vec<String>,
        #[serde(default)]
        holdout_fraction: f64,
    },
    /// Random split, then nested training subsets of the given fractions.
    FractionOfTrain {
        test_fraction: f64,
        train_fractions: Vec<f64>,
    },
}

fn default_runs() -> u32 {
    10
}
fn default_modalities() -> Vec<Modality> {
    Modality::ALL.to_vec()
}
fn default_map_channels() -> usize {
    8
}
fn default_threshold() -> f32 {
    0.5
}
fn default_min_area() -> f64 {
    0.05
}
fn default_range() -> String {
    "50:5:95".into()
}
fn default_thresholds() -> Vec<u32> {
    vec![60, 80]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_runs")]
    pub runs: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_modalities")]
    pub modalities: Vec<Modality>,
    /// Embedding channels kept after PCA.
    #[serde(default = "default_map_channels")]
    pub map_channels: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f32,
    #[serde(default = "default_min_area")]
    pub min_area_ratio: f64,
    #[serde(default = "default_range")]
    pub range: String,
    #[serde(default = "default_thresholds")]
    pub report_thresholds: Vec<u32>,
    /// Worker threads for independent cells; 0 uses every core.
    #[serde(default)]
    pub jobs: usize,
    #[serde(default)]
    pub save_models: bool,
    pub dataset: Option<DatasetSource>,
    pub split: SplitPolicy,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a config; relative dataset paths are taken from the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(d) = &mut c.dataset {
            for p in [&mut d.dir, &mut d.synth].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.runs == 0 {
            return bad("runs must be at least 1");
        }
        if self.modalities.is_empty() {
            return bad("at least one modality is required");
        }
        if self.map_channels == 0 {
            return bad("map_channels must be positive");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0)
            || !(0.0..=1.0).contains(&self.min_area_ratio)
        {
            return bad("threshold must lie in (0, 1) and min_area_ratio in [0, 1]");
        }
        self.range.parse::<ThresholdRange>()?;
        let frac_ok = |f: f64| f > 0.0 && f < 1.0;
        match &self.split {
            SplitPolicy::Random { test_fraction } if !frac_ok(*test_fraction) => {
                bad("test_fraction must lie in (0, 1)")
            }
            SplitPolicy::FractionOfTrain {
                test_fraction,
                train_fractions,
            } if !frac_ok(*test_fraction)
                || train_fractions.is_empty()
                || train_fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) =>
            {
                bad("test_fraction must lie in (0, 1) and train_fractions in (0, 1]")
            }
            SplitPolicy::Period {
                holdout_fraction, ..
            }
            | SplitPolicy::Source {
                holdout_fraction, ..
            } if !(0.0..1.0).contains(holdout_fraction) => {
                bad("holdout_fraction must lie in [0, 1)")
            }
            _ => self.train.validate(),
        }
    }

    fn report_options(&self, groups: &[String]) -> Result<ReportOptions> {
        let baseline = groups
            .iter()
            .find(|g| g.split('@').next() == Some(Modality::Image.label()))
            .cloned();
        Ok(ReportOptions {
            baseline,
            thresholds: self.report_thresholds.clone(),
            range: self.range.parse()?,
            group_order: groups.to_vec(),
        })
    }
}

/// Training pages and named test sets, as dataset indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    /// `(label suffix, training pages)`; the suffix is empty unless the
    /// policy builds several training sets.
    pub train_sets: Vec<(String, Vec<usize>)>,
    pub tests: Vec<(String, Vec<usize>)>,
}

fn shuffled(mut v: Vec<usize>, seed: u64, stream: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    v.shuffle(&mut rng);
    v
}

fn hold_out(pages: Vec<usize>, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_test = (pages.len() as f64 * fraction).round() as usize;
    let mut s = shuffled(pages, seed, 7);
    let mut train = s.split_off(n_test);
    s.sort_unstable();
    train.sort_unstable();
    (train, s)
}

/// Applies a split policy. Deterministic in `seed`.
pub fn split_dataset(tags: &[PageTag], policy: &SplitPolicy, seed: u64) -> Result<Split> {
    let all: Vec<usize> = (0..tags.len()).collect();
    let split = match policy {
        SplitPolicy::Random { test_fraction } => {
            let (train, test) = hold_out(all, *test_fraction, seed);
            Split {
                train_sets: vec![(String::new(), train)],
                tests: vec![("test".into(), test)],
            }
        }
        SplitPolicy::FractionOfTrain {
            test_fraction,
            train_fractions,
        } => {
            let (train, test) = hold_out(all, *test_fraction, seed);
            let order = shuffled(train, seed, 8);
            let train_sets = train_fractions
                .iter()
                .map(|&f| {
                    let n = ((order.len() as f64 * f).round() as usize).max(1);
                    let mut subset = order[..n].to_vec();
                    subset.sort_unstable();
                    (format!("{}", (f * 100.0).round() as u32), subset)
                })
                .collect();
            Split {
                train_sets,
                tests: vec![("test".into(), test)],
            }
        }
        SplitPolicy::Period {
            train_periods,
            test_periods,
            holdout_fraction,
        } => {
            let key: Vec<Option<String>> = tags
                .iter()
                .map(|t| t.period.map(|p| p.to_string()))
                .collect();
            let train: Vec<String> = train_periods.iter().map(u32::to_string).collect();
            let test: Vec<String> = test_periods.iter().map(u32::to_string).collect();
            split_by_key(&key, &train, &test, *holdout_fraction, seed, "period")?
        }
        SplitPolicy::Source {
            train_sources,
            test_sources,
            holdout_fraction,
        } => {
            let key: Vec<Option<String>> = tags.iter().map(|t| t.source.clone()).collect();
            split_by_key(
                &key,
                train_sources,
                test_sources,
                *holdout_fraction,
                seed,
                "source",
            )?
        }
    };
    for (name, set) in split.train_sets.iter().chain(&split.tests) {
        if set.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "split leaves `{}` empty",
                if name.is_empty() { "train" } else { name }
            )));
        }
    }
    Ok(split)
}

fn split_by_key(
    key: &[Option<String>],
    train_keys: &[String],
    test_keys: &[String],
    holdout: f64,
    seed: u64,
    what: &str,
) -> Result<Split> {
    if key.iter().any(Option::is_none) {
        return Err(Error::InvalidArgument(format!(
            "every page needs a {what} tag for this split"
        )));
    }
    let pages_of = |k: &str| -> Vec<usize> {
        (0..key.len())
            .filter(|&i| key[i].as_deref() == Some(k))
            .collect()
    };
    let mut train = Vec::new();
    let mut tests = Vec::new();
    for k in train_keys {
        let pages = pages_of(k);
        if test_keys.contains(k) {
            let (tr, te) = hold_out(pages, holdout, seed);
            train.extend(tr);
            tests.push((format!("{what}-{k}"), te));
        } else {
            train.extend(pages);
        }
    }
    for k in test_keys.iter().filter(|k| !train_keys.contains(k)) {
        tests.push((format!("{what}-{k}"), pages_of(k)));
    }
    train.sort_unstable();
    Ok(Split {
        train_sets: vec![(String::new(), train)],
        tests,
    })
}

/// A page at working resolution with its sparse embedding map.
#[derive(Debug, Clone)]
pub struct PreparedPage {
    pub page: Page,
    pub map: SparseEmbeddingMap,
}

/// Resizes every page to the pixel budget and builds its map from the
/// rescaled token boxes.
pub fn prepare_pages(
    pages: &[Page],
    store: &dyn Embedder,
    budget: u64,
) -> Result<Vec<PreparedPage>> {
    pages
        .iter()
        .map(|p| {
            let r = resize_to_budget(p, budget).page;
            let map = SparseEmbeddingMap::build(r.width, r.height, &r.tokens, store)?;
            Ok(PreparedPage { page: r, map })
        })
        .collect()
}

fn to_sample(p: &PreparedPage, map: Option<&SparseEmbeddingMap>) -> Result<Sample> {
    let mask =
        p.page.label_mask.clone().ok_or_else(|| {
            Error::InvalidArgument(format!("page {} has no ground truth", p.page.id))
        })?;
    Ok(Sample {
        image: p.page.image.clone(),
        map: map.cloned(),
        mask,
    })
}

/// Predicted label mask of one page.
pub fn segment_page(
    model: &PixelModel,
    image: &crate::ingest::Raster,
    map: Option<&SparseEmbeddingMap>,
    threshold: f32,
    min_area_ratio: f64,
) -> Result<ClassMask> {
    let input = make_fused_input(image, map, model.modality)?;
    postprocess(&predict(model, &input)?, threshold, min_area_ratio)
}

/// Per-class IoU records of one predicted page.
pub fn page_records(
    group: &str,
    run: u32,
    page: &str,
    pred: &ClassMask,
    truth: &ClassMask,
    classes: usize,
) -> Result<Vec<PageRecord>> {
    (1..=classes as u8)
        .map(|c| {
            Ok(PageRecord {
                group: group.to_string(),
                run,
                page: page.to_string(),
                class: c,
                result: iou_from_masks(pred, truth, c)?,
            })
        })
        .collect()
}

fn map_in_parallel<T: Sync, R: Send>(
    items: &[T],
    jobs: usize,
    f: impl Fn(&T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    let jobs = if jobs == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        jobs
    }
    .clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<R>>> = (0..items.len()).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                results.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|r| r.expect("every item processed"))
        .collect()
}

/// One trained cell of the experiment grid.
#[derive(Debug, Clone)]
struct Cell {
    group: String,
    modality: Modality,
    train_set: usize,
    run: u32,
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub group: String,
    pub run: u32,
    pub best_step: usize,
    pub best_dev_loss: f64,
    pub seconds: f64,
}

/// Records and report of one test set.
#[derive(Debug, Clone)]
pub struct TestResult {
    pub name: String,
    pub pages: usize,
    pub records: Vec<PageRecord>,
    pub report: EvalReport,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub groups: Vec<String>,
    pub train_pages: Vec<(String, usize)>,
    pub tests: Vec<TestResult>,
    pub cells: Vec<CellOutcome>,
    pub pca: Option<PcaModel>,
}

impl ExperimentResult {
    pub fn test(&self, name: &str) -> Option<&TestResult> {
        self.tests.iter().find(|t| t.name == name)
    }
}

/// Loads or generates the dataset named by the config's `[dataset]` section.
pub fn load_source(config: &ExperimentConfig) -> Result<Dataset> {
    let source = config
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("the config has no [dataset] section".into()))?;
    match (&source.dir, &source.synth) {
        (Some(dir), None) => load_dataset(dir, OovPolicy::SubwordHash),
        (None, Some(spec)) => {
            if source.periods.is_empty() {
                return Err(Error::Config("synthetic datasets need `periods`".into()));
            }
            Dataset::synthetic(&CorpusSpec::load(spec)?, &source.periods)
        }
        _ => Err(Error::Config(
            "set exactly one of dataset.dir and dataset.synth".into(),
        )),
    }
}

/// Seed of run `run`, shared by all modalities so runs pair up.
pub fn run_seed(seed: u64, run: u32) -> u64 {
    let mut s = seed ^ (run as u64).wrapping_mul(0xd134_2543_de82_ef95);
    splitmix64(&mut s)
}

/// Runs the whole grid. With `out_dir`, records, reports, training logs and
/// a timing sidecar are written there.
pub fn run_experiment(
    config: &ExperimentConfig,
    data: &Dataset,
    out_dir: Option<&Path>,
) -> Result<ExperimentResult> {
    config.validate()?;
    let started = std::time::SystemTime::now();
    let clock = Instant::now();
    let classes = data.class_names.len() - 1;
    let split = split_dataset(&data.tags, &config.split, config.seed)?;
    let prepared = prepare_pages(&data.pages, &data.store, config.train.pixel_budget)?;

    let needs_text = config.modalities.iter().any(|m| m.uses_text());
    let train_union: BTreeSet<usize> = split
        .train_sets
        .iter()
        .flat_map(|(_, s)| s.iter().copied())
        .collect();
    let (pca, reduced) = if needs_text {
        let k = config.map_channels.min(data.store.dim());
        let pca = fit_pca_maps(train_union.iter().map(|&i| &prepared[i].map), k)?;
        let reduced = prepared
            .iter()
            .map(|p| reduce_map_channels(&p.map, &pca, k))
            .collect::<Result<Vec<_>>>()?;
        (Some(pca), reduced)
    } else {
        (None, Vec::new())
    };

    let mut cells = Vec::new();
    let mut groups = Vec::new();
    let mut train_pages = Vec::new();
    for (ti, (suffix, set)) in split.train_sets.iter().enumerate() {
        for &m in &config.modalities {
            let group = if suffix.is_empty() {
                m.label().to_string()
            } else {
                format!("{}@{suffix}", m.label())
            };
            groups.push(group.clone());
            train_pages.push((group.clone(), set.len()));
            for run in 0..config.runs {
                cells.push(Cell {
                    group: group.clone(),
                    modality: m,
                    train_set: ti,
                    run,
                });
            }
        }
    }

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir.join("logs")).map_err(|e| Error::io(dir, e))?;
        if config.save_models {
            std::fs::create_dir_all(dir.join("models")).map_err(|e| Error::io(dir, e))?;
        }
    }

    let outcomes = map_in_parallel(&cells, config.jobs, |cell| {
        let t0 = Instant::now();
        let map_of = |i: usize| cell.modality.uses_text().then(|| &reduced[i]);
        let samples = split.train_sets[cell.train_set]
            .1
            .iter()
            .map(|&i| to_sample(&prepared[i], map_of(i)))
            .collect::<Result<Vec<_>>>()?;
        let mut tc = config.train.clone();
        tc.seed = run_seed(config.seed, cell.run);
        let trained = train(&samples, cell.modality, classes, &tc)
            .map_err(|e| with_context(e, &format!("{} run {}", cell.group, cell.run)))?;
        let mut per_test = Vec::new();
        for (_, pages) in &split.tests {
            let mut recs = Vec::new();
            for &i in pages {
                let p = &prepared[i];
                let truth = p.page.label_mask.as_ref().ok_or_else(|| {
                    Error::InvalidArgument(format!("test page {} has no ground truth", p.page.id))
                })?;
                let pred = segment_page(
                    &trained.model,
                    &p.page.image,
                    map_of(i),
                    config.threshold,
                    config.min_area_ratio,
                )?;
                recs.extend(page_records(
                    &cell.group,
                    cell.run,
                    &p.page.id,
                    &pred,
                    truth,
                    classes,
                )?);
            }
            per_test.push(recs);
        }
        if let Some(dir) = out_dir {
            let stem = format!(
                "{}-run{}",
                cell.group.replace('+', "_").replace('@', "_"),
                cell.run
            );
            write_training_log(&dir.join("logs").join(format!("{stem}.log")), &trained.log)?;
            if config.save_models {
                trained
                    .model
                    .write(&dir.join("models").join(format!("{stem}.pxm")))?;
            }
        }
        let outcome = CellOutcome {
            group: cell.group.clone(),
            run: cell.run,
            best_step: trained.best_step,
            best_dev_loss: trained.best_dev_loss,
            seconds: t0.elapsed().as_secs_f64(),
        };
        log::info!(
            "{} run {}: best dev loss {:.4} at step {} ({:.1}s)",
            cell.group,
            cell.run,
            outcome.best_dev_loss,
            outcome.best_step,
            outcome.seconds
        );
        Ok((outcome, per_test))
    })?;

    let opts = config.report_options(&groups)?;
    let mut tests = Vec::new();
    for (ti, (name, pages)) in split.tests.iter().enumerate() {
        let records: Vec<PageRecord> = outcomes
            .iter()
            .flat_map(|(_, t)| t[ti].iter().cloned())
            .collect();
        let report = summarize(&records, &data.class_names, &opts)?;
        tests.push(TestResult {
            name: name.clone(),
            pages: pages.len(),
            records,
            report,
        });
    }
    let result = ExperimentResult {
        groups,
        train_pages,
        tests,
        cells: outcomes.into_iter().map(|(c, _)| c).collect(),
        pca,
    };
    if let Some(dir) = out_dir {
        write_outputs(dir, config, &result, started, clock.elapsed().as_secs_f64())?;
    }
    Ok(result)
}

fn with_context(e: Error, what: &str) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("{what}: {m}")),
        other => other,
    }
}

fn write_outputs(
    dir: &Path,
    config: &ExperimentConfig,
    result: &ExperimentResult,
    started: std::time::SystemTime,
    seconds: f64,
) -> Result<()> {
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write(
        "config.toml",
        toml::to_string(config).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    let mut summary = format!("experiment {}\n", config.name);
    for (g, n) in &result.train_pages {
        summary.push_str(&format!("train {g}: {n} pages\n"));
    }
    for t in &result.tests {
        summary.push_str(&format!("test {}: {} pages\n", t.name, t.pages));
        write_records(&dir.join(format!("records-{}.txt", t.name)), &t.records)?;
        write(&format!("report-{}.txt", t.name), t.report.to_text())?;
        write(&format!("report-{}.json", t.name), t.report.to_json()?)?;
    }
    write("summary.txt", summary)?;
    if let Some(pca) = &result.pca {
        pca.write(&dir.join("corpus.pca"))?;
    }
    // wall-clock data lives only here, so everything else stays reproducible
    let unix = started
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let cells: Vec<serde_json::Value> = result
        .cells
        .iter()
        .map(|c| {
            serde_json::json!({
                "group": c.group, "run": c.run, "seconds": c.seconds,
                "best_step": c.best_step, "best_dev_loss": c.best_dev_loss,
            })
        })
        .collect();
    let meta = serde_json::json!({ "started_unix": unix, "seconds": seconds, "cells": cells });
    write("meta.json", serde_json::to_string_pretty(&meta)?)
}
