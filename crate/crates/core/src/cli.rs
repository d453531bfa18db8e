//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::embeddings::{load_vectors, stack, Embedder, EmbeddingStore, OovPolicy};
use crate::embedmap::{
    fit_pca_maps, project_map, read_map, write_map, PcaModel, SparseEmbeddingMap,
    DEFAULT_MAX_ELEMENTS,
};
use crate::error::{Error, Result};
use crate::experiment::{
    load_dataset, load_source, page_records, prepare_pages, read_class_names, run_experiment,
    run_seed, segment_page, Dataset, ExperimentConfig, PreparedPage,
};
use crate::fusionnet::{
    reduce_map_channels, resample_mask, train, write_training_log, Modality, PixelModel, Sample,
    TrainConfig,
};
use crate::ingest::{read_mask_png, write_mask_png, ClassMask};
use crate::segmetrics::{
    iou_from_masks, read_records, summarize, write_records, EvalReport, PageRecord, ReportOptions,
    ThresholdRange,
};
use crate::synthgen::{generate_pages, write_corpus, CorpusSpec};

#[derive(Debug, Parser)]
#[command(
    name = "embedseg",
    version,
    about = "Text embedding maps and multimodal page segmentation"
)]
pub struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a dataset directory and write its ground-truth masks.
    Ingest(IngestArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Build text embedding maps and fit the corpus PCA model.
    BuildMaps(BuildMapsArgs),
    /// Render an embedding map in false color.
    Visualize(VisualizeArgs),
    /// Train pixel classifiers.
    Train(TrainArgs),
    /// Segment the pages of a dataset with a trained model.
    Predict(PredictArgs),
    /// Score predicted masks against ground-truth masks.
    Evaluate(EvaluateArgs),
    /// Aggregate per-page records into a report.
    Report(ReportArgs),
    /// Run a full experiment described by a config file.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Dataset directory.
    #[arg(long)]
    pub dir: PathBuf,
    /// Where to write `<page>.png` label masks.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Corpus spec (TOML).
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub pages: usize,
    /// Period to generate; its drift overrides apply.
    #[arg(long, default_value_t = 1)]
    pub period: u32,
    /// Replaces the spec's corpus seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EmbeddingArgs {
    /// Vector files to stack; defaults to the dataset's `embeddings.vec`.
    #[arg(long = "vectors", num_args = 1..)]
    pub vectors: Vec<PathBuf>,
    /// Out-of-vocabulary policy: `zero` or `subword-hash`.
    #[arg(long, default_value = "subword-hash")]
    pub oov: OovPolicy,
}

#[derive(Debug, Args)]
pub struct BuildMapsArgs {
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub embeddings: EmbeddingArgs,
    /// Pages are resized to fit this many pixels first.
    #[arg(long, default_value_t = 500_000)]
    pub budget: u64,
    /// Axes kept in `corpus.pca`.
    #[arg(long, default_value_t = 8)]
    pub pca_axes: usize,
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub pca: PathBuf,
    /// Output PNG; defaults to the map path with a `.png` extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset.
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `image`, `text` or `image+text`.
    #[arg(long, default_value = "image+text")]
    pub modality: Modality,
    #[arg(long, default_value_t = 1)]
    pub runs: u32,
    /// Training settings (TOML); flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Embedding channels kept after PCA.
    #[arg(long, default_value_t = 8)]
    pub map_channels: usize,
    /// Dataset to evaluate every run on; writes `records.txt`.
    #[arg(long)]
    pub eval_dir: Option<PathBuf>,
    #[command(flatten)]
    pub embeddings: EmbeddingArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// PCA model used at training time (text modalities).
    #[arg(long)]
    pub pca: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f32,
    #[arg(long, default_value_t = 0.05)]
    pub min_area: f64,
    #[arg(long, default_value_t = 500_000)]
    pub budget: u64,
    #[command(flatten)]
    pub embeddings: EmbeddingArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of predicted `<page>.png` masks.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth masks with the same file names.
    #[arg(long)]
    pub gt: PathBuf,
    /// Class count, or a file with one class name per line.
    #[arg(long)]
    pub classes: String,
    #[arg(long, default_value = "50:5:95")]
    pub range: ThresholdRange,
    /// Group label written to the records.
    #[arg(long, default_value = "model")]
    pub group: String,
    #[arg(long, default_value_t = 0)]
    pub run: u32,
    /// Output directory for `records.txt` and `report.{txt,json}`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Record files to merge.
    #[arg(long = "records", required = true, num_args = 1..)]
    pub records: Vec<PathBuf>,
    /// Class count, or a file with one class name per line.
    #[arg(long)]
    pub classes: String,
    /// Group that stars compare against.
    #[arg(long, default_value = "image")]
    pub baseline: String,
    #[arg(long, default_value = "50:5:95")]
    pub range: ThresholdRange,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Replaces the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => cmd_ingest(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::BuildMaps(a) => cmd_build_maps(&a),
        Command::Visualize(a) => cmd_visualize(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Report(a) => cmd_report(&a),
        Command::Experiment(a) => cmd_experiment(&a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// The dataset's own vectors, or the stack of `--vectors` files.
fn load_store(data: &Dataset, args: &EmbeddingArgs) -> Result<Box<dyn Embedder>> {
    if args.vectors.is_empty() {
        return Ok(Box::new(data.store.clone()));
    }
    let mut stores: Vec<EmbeddingStore> = args
        .vectors
        .iter()
        .map(|p| load_vectors(p, args.oov))
        .collect::<Result<_>>()?;
    if stores.len() == 1 {
        Ok(Box::new(stores.remove(0)))
    } else {
        Ok(Box::new(stack(stores)?))
    }
}

/// Class names with `background` first, from a count or a names file.
pub fn parse_classes(spec: &str) -> Result<Vec<String>> {
    if let Ok(n) = spec.parse::<usize>() {
        if n == 0 || n > 255 {
            return Err(Error::InvalidArgument(format!(
                "class count {n} outside 1..=255"
            )));
        }
        return Ok(std::iter::once("background".to_string())
            .chain((1..=n).map(|i| format!("class{i}")))
            .collect());
    }
    read_class_names(Path::new(spec))
}

pub fn cmd_ingest(a: &IngestArgs) -> Result<()> {
    let data = load_dataset(&a.dir, OovPolicy::Zero)?;
    create_dir(&a.out)?;
    let mut annotated = 0;
    let mut tokens = 0;
    let mut pixels = vec![0usize; data.class_names.len()];
    for p in &data.pages {
        tokens += p.tokens.len();
        if let Some(m) = &p.label_mask {
            annotated += 1;
            for (c, n) in pixels.iter_mut().enumerate() {
                *n += m.count(c as u8);
            }
            write_mask_png(&a.out.join(format!("{}.png", p.id)), m)?;
        }
    }
    println!("pages {}", data.pages.len());
    println!("annotated {annotated}");
    println!("tokens {tokens}");
    for (name, n) in data.class_names.iter().zip(&pixels) {
        println!("pixels {name} {n}");
    }
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut spec = CorpusSpec::load(&a.spec)?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let pages = generate_pages(&spec, a.period, 0..a.pages)?;
    write_corpus(&a.out, &spec, &pages)?;
    println!("wrote {} pages to {}", pages.len(), a.out.display());
    Ok(())
}

pub fn cmd_build_maps(a: &BuildMapsArgs) -> Result<()> {
    let data = load_dataset(&a.dir, a.embeddings.oov)?;
    let store = load_store(&data, &a.embeddings)?;
    let prepared = prepare_pages(&data.pages, store.as_ref(), a.budget)?;
    create_dir(&a.out)?;
    for p in &prepared {
        let dense = p.map.to_dense(DEFAULT_MAX_ELEMENTS)?;
        write_map(&a.out.join(format!("{}.tem", p.page.id)), &dense)?;
    }
    let k = a.pca_axes.min(store.dim());
    let pca = fit_pca_maps(prepared.iter().map(|p| &p.map), k)?;
    pca.write(&a.out.join("corpus.pca"))?;
    println!(
        "wrote {} maps (N = {}) and a {k}-axis PCA model",
        prepared.len(),
        store.dim()
    );
    Ok(())
}

pub fn cmd_visualize(a: &VisualizeArgs) -> Result<()> {
    let map = read_map(&a.map)?;
    let pca = PcaModel::read(&a.pca)?;
    let img = project_map(&map, &pca)?;
    let out = a.out.clone().unwrap_or_else(|| a.map.with_extension("png"));
    img.save(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn training_samples(prepared: &[PreparedPage], maps: Option<&[SparseEmbeddingMap]>) -> Vec<Sample> {
    prepared
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            p.page.label_mask.clone().map(|mask| Sample {
                image: p.page.image.clone(),
                map: maps.map(|m| m[i].clone()),
                mask,
            })
        })
        .collect()
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut tc = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<TrainConfig>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = a.steps {
        tc.steps = s;
    }
    if let Some(lr) = a.learning_rate {
        tc.learning_rate = lr;
    }
    tc.validate()?;
    let data = load_dataset(&a.dir, a.embeddings.oov)?;
    let store = load_store(&data, &a.embeddings)?;
    let classes = data.class_names.len() - 1;
    let prepared = prepare_pages(&data.pages, store.as_ref(), tc.pixel_budget)?;
    create_dir(&a.out)?;

    let (pca, reduced) = if a.modality.uses_text() {
        let k = a.map_channels.min(store.dim());
        let pca = fit_pca_maps(
            prepared
                .iter()
                .filter(|p| p.page.label_mask.is_some())
                .map(|p| &p.map),
            k,
        )?;
        pca.write(&a.out.join("corpus.pca"))?;
        let reduced = prepared
            .iter()
            .map(|p| reduce_map_channels(&p.map, &pca, k))
            .collect::<Result<Vec<_>>>()?;
        (Some(pca), Some(reduced))
    } else {
        (None, None)
    };
    let samples = training_samples(&prepared, reduced.as_deref());

    let eval = match &a.eval_dir {
        Some(dir) => {
            let ed = load_dataset(dir, a.embeddings.oov)?;
            let es = load_store(&ed, &a.embeddings)?;
            let ep = prepare_pages(&ed.pages, es.as_ref(), tc.pixel_budget)?;
            Some((ed, ep))
        }
        None => None,
    };

    let mut records = Vec::new();
    for run in 0..a.runs {
        let mut cfg = tc.clone();
        cfg.seed = run_seed(a.seed, run);
        let trained = train(&samples, a.modality, classes, &cfg)?;
        let stem = format!("{}-run{run}", a.modality.label().replace('+', "_"));
        trained.model.write(&a.out.join(format!("{stem}.pxm")))?;
        write_training_log(&a.out.join(format!("{stem}.log")), &trained.log)?;
        println!(
            "run {run}: best dev loss {:.5} at step {} ({} train / {} dev pages)",
            trained.best_dev_loss, trained.best_step, trained.train_pages, trained.dev_pages
        );
        if let Some((ed, ep)) = &eval {
            for p in ep {
                let Some(truth) = &p.page.label_mask else {
                    continue;
                };
                let map = match &pca {
                    Some(pca) => Some(reduce_map_channels(&p.map, pca, pca.k())?),
                    None => None,
                };
                let pred = segment_page(&trained.model, &p.page.image, map.as_ref(), 0.5, 0.05)?;
                records.extend(page_records(
                    a.modality.label(),
                    run,
                    &p.page.id,
                    &pred,
                    truth,
                    ed.class_names.len() - 1,
                )?);
            }
        }
    }
    if eval.is_some() {
        write_records(&a.out.join("records.txt"), &records)?;
    }
    Ok(())
}

pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let model = PixelModel::read(&a.model)?;
    let data = load_dataset(&a.dir, a.embeddings.oov)?;
    let store = load_store(&data, &a.embeddings)?;
    let pca = match (&a.pca, model.modality.uses_text()) {
        (Some(p), true) => Some(PcaModel::read(p)?),
        (None, true) => {
            return Err(Error::InvalidArgument(format!(
                "a {} model needs --pca",
                model.modality
            )))
        }
        _ => None,
    };
    let prepared = prepare_pages(&data.pages, store.as_ref(), a.budget)?;
    create_dir(&a.out)?;
    for (orig, p) in data.pages.iter().zip(&prepared) {
        let map = match &pca {
            Some(pca) => Some(reduce_map_channels(&p.map, pca, model.map_channels)?),
            None => None,
        };
        let mask = segment_page(&model, &p.page.image, map.as_ref(), a.threshold, a.min_area)?;
        let full = if (mask.width, mask.height) == (orig.width, orig.height) {
            mask
        } else {
            resample_mask(&mask, orig.width, orig.height)
        };
        write_mask_png(&a.out.join(format!("{}.png", p.page.id)), &full)?;
    }
    println!("wrote {} masks to {}", prepared.len(), a.out.display());
    Ok(())
}

fn mask_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for e in entries {
        let path = e.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

fn write_report(out: &Path, report: &EvalReport) -> Result<()> {
    write_text(&out.join("report.txt"), &report.to_text())?;
    write_text(&out.join("report.json"), &report.to_json()?)?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let names = parse_classes(&a.classes)?;
    let classes = names.len() - 1;
    let gt = mask_files(&a.gt)?;
    let pred = mask_files(&a.pred)?;
    if gt.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no masks in {}",
            a.gt.display()
        )));
    }
    let mut records = Vec::new();
    for (page, gt_path) in &gt {
        let truth = read_mask_png(gt_path)?;
        truth.validate(names.len())?;
        let predicted = match pred.get(page) {
            Some(p) => read_mask_png(p)?,
            None => {
                log::warn!("no prediction for page {page}; scoring it as empty");
                ClassMask::zeros(truth.width, truth.height)
            }
        };
        predicted.validate(names.len())?;
        for c in 1..=classes as u8 {
            records.push(PageRecord {
                group: a.group.clone(),
                run: a.run,
                page: page.clone(),
                class: c,
                result: iou_from_masks(&predicted, &truth, c)?,
            });
        }
    }
    create_dir(&a.out)?;
    write_records(&a.out.join("records.txt"), &records)?;
    let opts = ReportOptions {
        range: a.range,
        ..ReportOptions::default()
    };
    write_report(&a.out, &summarize(&records, &names, &opts)?)
}

pub fn cmd_report(a: &ReportArgs) -> Result<()> {
    let names = parse_classes(&a.classes)?;
    let mut records = Vec::new();
    for p in &a.records {
        records.extend(read_records(p)?);
    }
    let mut groups: Vec<String> = Vec::new();
    for r in &records {
        if !groups.contains(&r.group) {
            groups.push(r.group.clone());
        }
    }
    let baseline = groups.contains(&a.baseline).then(|| a.baseline.clone());
    if let Some(b) = &baseline {
        // baseline first, as in the experiment reports
        groups.retain(|g| g != b);
        groups.insert(0, b.clone());
    }
    let opts = ReportOptions {
        baseline,
        range: a.range,
        group_order: groups,
        ..ReportOptions::default()
    };
    create_dir(&a.out)?;
    write_report(&a.out, &summarize(&records, &names, &opts)?)
}

pub fn cmd_experiment(a: &ExperimentArgs) -> Result<()> {
    let mut config = ExperimentConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        config.seed = s;
    }
    let data = load_source(&config)?;
    let result = run_experiment(&config, &data, Some(&a.out))?;
    for t in &result.tests {
        println!("== {} ({} pages)", t.name, t.pages);
        print!("{}", t.report.to_text());
    }
    Ok(())
}
