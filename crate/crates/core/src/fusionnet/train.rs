//! Training with Adam on per-class sigmoid cross-entropy, model selection on
//! a held-out dev split, and the `PXM1` model file.

use std::path::Path;
use std::sync::mpsc;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{augment, Sample};
use super::net::{self, Architecture};
use super::{make_fused_input, FusedInput, Modality};
use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::postproc::ProbabilityMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    /// Step count of the full-size setup, kept for reference only.
    pub reference_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay per pass over the training split.
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub dev_fraction: f64,
    pub augment: bool,
    pub scale_range: (f64, f64),
    pub rotation_range: (f64, f64),
    pub pixel_budget: u64,
    pub hidden_widths: Vec<usize>,
    /// Dev loss is measured every this many steps and after the last one.
    pub eval_every: usize,
    pub seed: u64,
    /// Build batches on a helper thread. Batch order is unchanged.
    pub prefetch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            reference_steps: 17_000,
            batch_size: 4,
            learning_rate: 1e-4,
            lr_decay: 0.95,
            weight_decay: 1e-6,
            dev_fraction: 0.10,
            augment: true,
            scale_range: (0.8, 1.2),
            rotation_range: (-0.01, 0.01),
            pixel_budget: 500_000,
            hidden_widths: vec![16, 16],
            eval_every: 100,
            seed: 0,
            prefetch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.steps == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return bad("steps, batch_size and eval_every must be positive");
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return bad("dev_fraction must lie in (0, 1)");
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0) || self.weight_decay < 0.0 {
            return bad("learning_rate and lr_decay must be positive, weight_decay non-negative");
        }
        if self.scale_range.0 <= 0.0 || self.scale_range.0 > self.scale_range.1 {
            return bad("scale_range must be an increasing pair of positive numbers");
        }
        if self.rotation_range.0 > self.rotation_range.1 {
            return bad("rotation_range must be increasing");
        }
        if self.hidden_widths.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        Ok(())
    }
}

/// One input/target pair, planar. Targets hold one {0, 1} plane per class.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<T> {
    pub width: usize,
    pub height: usize,
    pub input: Vec<T>,
    pub targets: Vec<T>,
}

/// Fused input and one-vs-rest targets for classes `1..=classes`.
pub fn examples_for(sample: &Sample, modality: Modality, classes: usize) -> Result<Example<f32>> {
    let fused = make_fused_input(&sample.image, sample.map.as_ref(), modality)?;
    let plane = fused.plane_len();
    let mut targets = vec![0f32; classes * plane];
    for (i, &l) in sample.mask.labels.iter().enumerate() {
        if l > 0 {
            let c = l as usize - 1;
            if c >= classes {
                return Err(Error::InvalidArgument(format!(
                    "label {l} exceeds {classes} classes"
                )));
            }
            targets[c * plane + i] = 1.0;
        }
    }
    Ok(Example {
        width: fused.width as usize,
        height: fused.height as usize,
        input: fused.data,
        targets,
    })
}

/// Mean per-image cross-entropy over the batch plus `l2 * sum(w^2)`, and
/// its gradient with respect to every parameter.
pub fn loss_and_gradient<T: Float>(
    arch: &Architecture,
    params: &[T],
    batch: &[Example<T>],
    l2: T,
) -> (T, Vec<T>) {
    let mut grad = vec![T::zero(); params.len()];
    let scale = T::one() / T::from(batch.len()).expect("batch size fits");
    let mut loss = T::zero();
    for ex in batch {
        loss = loss
            + net::image_loss_grad(
                arch,
                params,
                &ex.input,
                &ex.targets,
                ex.height,
                ex.width,
                scale,
                Some(&mut grad),
            ) * scale;
    }
    loss = loss + net::l2_penalty(arch, params, l2, Some(&mut grad));
    (loss, grad)
}

fn mean_loss(arch: &Architecture, params: &[f32], examples: &[Example<f32>]) -> f64 {
    let total: f64 = examples
        .iter()
        .map(|ex| {
            net::image_loss_grad(
                arch,
                params,
                &ex.input,
                &ex.targets,
                ex.height,
                ex.width,
                1.0,
                None,
            ) as f64
        })
        .sum();
    total / examples.len() as f64
}

/// A trained classifier and the input layout it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelModel {
    pub modality: Modality,
    pub image_channels: usize,
    pub map_channels: usize,
    pub arch: Architecture,
    pub params: Vec<f32>,
}

const MODEL_VERSION: u32 = 1;

impl PixelModel {
    /// All-zero parameters: every probability is exactly 0.5.
    pub fn zeros(
        modality: Modality,
        image_channels: usize,
        map_channels: usize,
        widths: Vec<usize>,
    ) -> Self {
        let arch = Architecture {
            in_channels: image_channels + map_channels,
            widths,
        };
        let params = vec![0.0; arch.param_count()];
        PixelModel {
            modality,
            image_channels,
            map_channels,
            arch,
            params,
        }
    }

    pub fn classes(&self) -> usize {
        self.arch.classes()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(b"PXM1");
        w.u32(MODEL_VERSION);
        w.u8(self.modality.code());
        w.u32(self.image_channels as u32);
        w.u32(self.map_channels as u32);
        w.u32(self.arch.widths.len() as u32);
        for &width in &self.arch.widths {
            w.u32(width as u32);
        }
        w.u32(self.params.len() as u32);
        w.f32s(&self.params);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, b"PXM1", "model")?;
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "unsupported model version {version}"
            )));
        }
        let modality = Modality::from_code(r.u8()?)
            .ok_or_else(|| Error::Format("unknown modality code in model".into()))?;
        let image_channels = r.u32()? as usize;
        let map_channels = r.u32()? as usize;
        let layers = r.u32()? as usize;
        if layers == 0 || layers > 64 {
            return Err(Error::Format(format!("implausible layer count {layers}")));
        }
        let widths = (0..layers)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let arch = Architecture {
            in_channels: image_channels + map_channels,
            widths,
        };
        let n = r.u32()? as usize;
        if n != arch.param_count() {
            return Err(Error::Format(format!(
                "model holds {n} parameters, architecture needs {}",
                arch.param_count()
            )));
        }
        let params = r.f32s(n)?;
        r.finish()?;
        Ok(PixelModel {
            modality,
            image_channels,
            map_channels,
            arch,
            params,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

/// Per-class sigmoid probabilities for one fused input.
pub fn predict(model: &PixelModel, input: &FusedInput) -> Result<ProbabilityMap> {
    if (input.image_channels, input.map_channels) != (model.image_channels, model.map_channels) {
        return Err(Error::DimensionMismatch(format!(
            "input has {}+{} channels, model expects {}+{}",
            input.image_channels, input.map_channels, model.image_channels, model.map_channels
        )));
    }
    let (w, h) = (input.width as usize, input.height as usize);
    let planar = net::probabilities(&model.arch, &model.params, &input.data, h, w);
    let k = model.classes();
    let plane = w * h;
    let mut data = vec![0f32; plane * k];
    for c in 0..k {
        for i in 0..plane {
            data[i * k + c] = planar[c * plane + i];
        }
    }
    ProbabilityMap::new(input.width, input.height, k, data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    pub loss: f32,
    pub dev_loss: Option<f32>,
}

/// One line per step: `step loss [dev_loss]`.
pub fn write_training_log(path: &Path, log: &[LogEntry]) -> Result<()> {
    let mut s = String::new();
    for e in log {
        match e.dev_loss {
            Some(d) => s.push_str(&format!("{} {} {}\n", e.step, e.loss, d)),
            None => s.push_str(&format!("{} {}\n", e.step, e.loss)),
        }
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_training_log(path: &Path) -> Result<Vec<LogEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| {
                s.parse::<f32>()
                    .map_err(|_| Error::parse(&name, i + 1, format!("bad number `{s}`")))
            };
            match f.as_slice() {
                [step, loss, rest @ ..] if rest.len() <= 1 => Ok(LogEntry {
                    step: step
                        .parse()
                        .map_err(|_| Error::parse(&name, i + 1, format!("bad step `{step}`")))?,
                    loss: num(loss)?,
                    dev_loss: rest.first().map(|d| num(d)).transpose()?,
                }),
                _ => Err(Error::parse(
                    &name,
                    i + 1,
                    "expected `step loss [dev_loss]`",
                )),
            }
        })
        .collect()
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct Trained {
    /// Parameters with the lowest dev loss.
    pub model: PixelModel,
    pub log: Vec<LogEntry>,
    pub best_step: usize,
    pub best_dev_loss: f64,
    pub train_pages: usize,
    pub dev_pages: usize,
}

/// Deterministic batch stream: epoch-wise shuffles of the training split,
/// each sample augmented with its own draw.
struct BatchSource<'a> {
    samples: &'a [Sample],
    train: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
    modality: Modality,
    classes: usize,
    config: &'a TrainConfig,
}

impl BatchSource<'_> {
    fn next_batch(&mut self) -> Result<Vec<Example<f32>>> {
        let mut batch = Vec::with_capacity(self.config.batch_size);
        while batch.len() < self.config.batch_size {
            if self.pos == self.order.len() {
                self.order = self.train.clone();
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            let sample = &self.samples[self.order[self.pos]];
            self.pos += 1;
            let ex = if self.config.augment {
                let (aug, _, _) = augment(
                    sample,
                    &mut self.rng,
                    self.config.scale_range,
                    self.config.rotation_range,
                );
                examples_for(&aug, self.modality, self.classes)?
            } else {
                examples_for(sample, self.modality, self.classes)?
            };
            batch.push(ex);
        }
        Ok(batch)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Glorot-uniform weights, zero biases.
fn init_params(arch: &Architecture, rng: &mut impl Rng) -> Vec<f32> {
    let mut params = vec![0f32; arch.param_count()];
    for ((cin, cout), range) in arch.layers().into_iter().zip(arch.weight_ranges()) {
        let a = (6.0 / ((cin + cout) * 9) as f64).sqrt() as f32;
        for p in &mut params[range] {
            *p = rng.random_range(-a..a);
        }
    }
    params
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    const B1: f32 = 0.9;
    const B2: f32 = 0.999;
    const EPS: f32 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f32], grad: &[f32], lr: f32) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

fn channel_layout(samples: &[Sample], modality: Modality) -> Result<(usize, usize)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("no training samples".into()))?;
    let image_channels = first.image.channels;
    let map_channels = if modality.uses_text() {
        first.map.as_ref().map(|m| m.dim).ok_or_else(|| {
            Error::InvalidArgument(format!("modality {modality} needs embedding maps"))
        })?
    } else {
        0
    };
    for s in samples {
        let m = if modality.uses_text() {
            s.map.as_ref().map(|m| m.dim)
        } else {
            Some(0)
        };
        if s.image.channels != image_channels || m != Some(map_channels) {
            return Err(Error::DimensionMismatch(
                "training samples disagree on channel counts".into(),
            ));
        }
    }
    Ok((image_channels, map_channels))
}

/// Trains a classifier for classes `1..=classes` and returns the snapshot
/// with the lowest dev loss.
pub fn train(
    samples: &[Sample],
    modality: Modality,
    classes: usize,
    config: &TrainConfig,
) -> Result<Trained> {
    config.validate()?;
    if classes == 0 {
        return Err(Error::InvalidArgument("need at least one class".into()));
    }
    let (image_channels, map_channels) = channel_layout(samples, modality)?;
    let mut widths = config.hidden_widths.clone();
    widths.push(classes);
    let arch = Architecture {
        in_channels: image_channels + map_channels,
        widths,
    };

    let mut split: Vec<usize> = (0..samples.len()).collect();
    split.shuffle(&mut stream_rng(config.seed, 1));
    let n_dev = (samples.len() as f64 * config.dev_fraction).ceil() as usize;
    if n_dev == 0 || n_dev >= samples.len() {
        return Err(Error::InvalidArgument(format!(
            "{} samples leave an empty dev or train split at dev fraction {}",
            samples.len(),
            config.dev_fraction
        )));
    }
    let (dev_idx, train_idx) = split.split_at(n_dev);
    let mut train_idx = train_idx.to_vec();
    train_idx.sort_unstable();
    let dev: Vec<Example<f32>> = dev_idx
        .iter()
        .map(|&i| examples_for(&samples[i], modality, classes))
        .collect::<Result<_>>()?;

    let mut params = init_params(&arch, &mut stream_rng(config.seed, 0));
    let mut adam = Adam::new(params.len());
    let steps_per_epoch = train_idx.len().div_ceil(config.batch_size) as f64;

    let mut source = BatchSource {
        samples,
        train: train_idx.clone(),
        order: Vec::new(),
        pos: 0,
        rng: stream_rng(config.seed, 2),
        modality,
        classes,
        config,
    };

    let mut log = Vec::with_capacity(config.steps);
    let mut best: Option<(f64, usize, Vec<f32>)> = None;
    let l2 = config.weight_decay as f32;

    let mut run = |next: &mut dyn FnMut() -> Result<Vec<Example<f32>>>| -> Result<()> {
        for step in 0..config.steps {
            let batch = next()?;
            let (loss, grad) = loss_and_gradient(&arch, &params, &batch, l2);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "training loss became {loss} at step {}; try a lower learning rate",
                    step + 1
                )));
            }
            let lr = config.learning_rate * config.lr_decay.powf(step as f64 / steps_per_epoch);
            adam.step(&mut params, &grad, lr as f32);
            let done = step + 1;
            let dev_loss = if done % config.eval_every == 0 || done == config.steps {
                let d = mean_loss(&arch, &params, &dev);
                if !d.is_finite() {
                    return Err(Error::Numeric(format!(
                        "dev loss became {d} at step {done}"
                    )));
                }
                if best.as_ref().is_none_or(|(b, _, _)| d < *b) {
                    best = Some((d, done, params.clone()));
                }
                log::debug!("step {done} loss {loss:.5} dev {d:.5}");
                Some(d as f32)
            } else {
                None
            };
            log.push(LogEntry {
                step: done,
                loss,
                dev_loss,
            });
        }
        Ok(())
    };

    if config.prefetch {
        std::thread::scope(|scope| {
            let (tx, rx) = mpsc::sync_channel(2);
            let steps = config.steps;
            let mut src = source;
            scope.spawn(move || {
                for _ in 0..steps {
                    let b = src.next_batch();
                    let failed = b.is_err();
                    if tx.send(b).is_err() || failed {
                        break;
                    }
                }
            });
            run(&mut || {
                rx.recv()
                    .unwrap_or_else(|_| Err(Error::Numeric("batch producer stopped early".into())))
            })
        })?;
    } else {
        run(&mut || source.next_batch())?;
    }

    let (best_dev_loss, best_step, params) = best.expect("at least one evaluation");
    Ok(Trained {
        model: PixelModel {
            modality,
            image_channels,
            map_channels,
            arch,
            params,
        },
        log,
        best_step,
        best_dev_loss,
        train_pages: train_idx.len(),
        dev_pages: n_dev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ClassMask, Raster};
    use crate::postproc::postprocess;
    use crate::segmetrics::iou_from_masks;

    /// Two-channel image; class 1 lights channel 0, class 2 lights channel 1.
    fn separable(seed: u64, w: u32, h: u32) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut image = Raster::filled(w, h, 2, 0.0);
        let mut mask = ClassMask::zeros(w, h);
        for class in 1..=2u8 {
            let bw = rng.random_range(4..w / 2);
            let bh = rng.random_range(3..h / 2);
            let x0 = rng.random_range(0..w - bw);
            let y0 = rng.random_range(0..h - bh);
            for y in y0..y0 + bh {
                for x in x0..x0 + bw {
                    mask.set(x, y, class);
                }
            }
        }
        for y in 0..h {
            for x in 0..w {
                match mask.get(x, y) {
                    1 => image.set(0, x, y, 1.0),
                    2 => image.set(1, x, y, 1.0),
                    _ => {}
                }
            }
        }
        Sample {
            image,
            map: None,
            mask,
        }
    }

    fn toy_config(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            learning_rate: 1e-2,
            augment: false,
            eval_every: 50,
            hidden_widths: vec![4, 4],
            seed: 3,
            ..TrainConfig::default()
        }
    }

    fn toy_set() -> Vec<Sample> {
        (0..20).map(|i| separable(i, 16, 12)).collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let arch = Architecture {
            in_channels: 5,
            widths: vec![16, 16, 2],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params: Vec<f64> = (0..arch.param_count())
            .map(|_| rng.random_range(-0.4..0.4))
            .collect();
        let batch: Vec<Example<f64>> = (0..2)
            .map(|_| Example {
                width: 6,
                height: 6,
                input: (0..5 * 36).map(|_| rng.random_range(-1.0..1.0)).collect(),
                targets: (0..2 * 36)
                    .map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 })
                    .collect(),
            })
            .collect();
        let l2 = 1e-3;
        let (_, grad) = loss_and_gradient(&arch, &params, &batch, l2);
        let h = 1e-5;
        let mut worst = 0f64;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            let (up, _) = loss_and_gradient(&arch, &p, &batch, l2);
            p[i] -= 2.0 * h;
            let (down, _) = loss_and_gradient(&arch, &p, &batch, l2);
            let numeric = (up - down) / (2.0 * h);
            let rel = (numeric - grad[i]).abs() / numeric.abs().max(grad[i].abs()).max(1e-7);
            worst = worst.max(rel);
        }
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn zero_model_predicts_one_half() {
        let model = PixelModel::zeros(Modality::Image, 2, 0, vec![16, 16, 3]);
        let s = separable(1, 16, 12);
        let input = make_fused_input(&s.image, None, Modality::Image).unwrap();
        let p = predict(&model, &input).unwrap();
        assert!(p.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn separable_toy_converges_and_segments() {
        let set = toy_set();
        let t = train(&set, Modality::Image, 2, &toy_config(500)).unwrap();
        assert!(t.best_dev_loss < 0.1, "dev loss {}", t.best_dev_loss);

        // loss trend: over any 200-step window the loss goes down; batch
        // losses are averaged over 20 steps to remove batch-to-batch noise
        let raw: Vec<f32> = t.log.iter().map(|e| e.loss).collect();
        let losses: Vec<f32> = raw
            .windows(20)
            .map(|w| w.iter().sum::<f32>() / 20.0)
            .collect();
        let windows = losses.len() - 200;
        let violations = (0..windows)
            .filter(|&i| losses[i + 200] >= losses[i])
            .count();
        assert!(
            violations as f64 <= 0.05 * windows as f64,
            "{violations} of {windows}"
        );

        let test = separable(999, 16, 12);
        let input = make_fused_input(&test.image, None, Modality::Image).unwrap();
        let mask = postprocess(&predict(&t.model, &input).unwrap(), 0.5, 0.05).unwrap();
        for class in 1..=2 {
            let r = iou_from_masks(&mask, &test.mask, class).unwrap();
            assert!(r.value().unwrap() >= 0.95, "class {class}: {r:?}");
        }
    }

    #[test]
    fn same_seed_same_parameters_and_log() {
        let set = toy_set();
        let mut cfg = toy_config(60);
        cfg.augment = true;
        let a = train(&set, Modality::Image, 2, &cfg).unwrap();
        let b = train(&set, Modality::Image, 2, &cfg).unwrap();
        assert_eq!(a.model.to_bytes(), b.model.to_bytes());
        assert_eq!(a.log, b.log);
        cfg.prefetch = true;
        let c = train(&set, Modality::Image, 2, &cfg).unwrap();
        assert_eq!(a.model.to_bytes(), c.model.to_bytes());
        assert_eq!(a.log, c.log);
    }

    #[test]
    fn dev_split_must_be_nonempty() {
        let set = toy_set();
        assert!(train(&set[..1], Modality::Image, 2, &toy_config(5)).is_err());
        let mut cfg = toy_config(5);
        cfg.dev_fraction = 0.0;
        assert!(train(&set, Modality::Image, 2, &cfg).is_err());
    }

    #[test]
    fn diverging_training_reports_numeric_error() {
        let set = toy_set();
        let mut cfg = toy_config(30);
        cfg.learning_rate = f64::MAX;
        match train(&set, Modality::Image, 2, &cfg) {
            Err(e @ Error::Numeric(_)) => assert_eq!(e.exit_code(), 3),
            other => panic!("expected a numeric error, got {other:?}"),
        }
    }

    #[test]
    fn model_file_round_trip() {
        let set = toy_set();
        let t = train(&set, Modality::Image, 2, &toy_config(10)).unwrap();
        let bytes = t.model.to_bytes();
        assert_eq!(&bytes[..4], b"PXM1");
        assert_eq!(PixelModel::from_bytes(&bytes).unwrap(), t.model);
        assert!(PixelModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.log");
        let log = vec![
            LogEntry {
                step: 1,
                loss: 0.75,
                dev_loss: None,
            },
            LogEntry {
                step: 2,
                loss: 0.5,
                dev_loss: Some(0.625),
            },
        ];
        write_training_log(&path, &log).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "1 0.75\n2 0.5 0.625\n"
        );
        assert_eq!(read_training_log(&path).unwrap(), log);
    }
}
