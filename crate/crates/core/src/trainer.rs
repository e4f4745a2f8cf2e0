//! Desk-scale training and inference.
//!
//! The numeric path is single-threaded so a run is a pure function of its
//! config and data. Only label generation and inference fan out over rayon,
//! and both are per-image independent.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::image_io::{load_rgb, resize_chw, resize_nearest_chw, save_map};
use crate::data::{load_sample, stem, DatasetManifest, Sample, BOUND_SUFFIX, GRAD_SUFFIX};
use crate::error::{io_err, Error, Result};
use crate::gradlabel::{attach_labels, CannyParams};
use crate::losses::{total_loss, LossBreakdown};
use crate::model::{apply_bn_updates, Checkpoint, Ctx, Model, ModelConfig, Stored, Supervision};
use crate::tensor::optim::{AdamHyper, AdamState, CosineSchedule};
use crate::tensor::{Tape, Tensor};

pub const LOSS_LOG: &str = "loss_log.csv";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

/// Smallest crop side as a fraction of the input side.
const CROP_MIN_SCALE: f64 = 0.75;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    /// Stop after this many optimizer steps in total, even mid-epoch.
    pub max_iterations: Option<usize>,
    pub batch_size: usize,
    pub lr_min: f64,
    pub lr_max: f64,
    /// Cosine half-period in epochs.
    pub lr_period: usize,
    pub seed: u64,
    pub hflip: bool,
    pub random_crop: bool,
    /// Store generated labels beside the masks and reuse them.
    pub cache_labels: bool,
    pub canny: CannyParams,
    /// Receives the loss log and checkpoints.
    pub out_dir: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    pub resume: Option<PathBuf>,
}

impl TrainConfig {
    /// Width-8 model trained from scratch at 96×96: batch 8, 25 epochs
    /// (200 steps on 64 images), lr annealed from 5e-3 over 40 epochs.
    pub fn toy(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            model: ModelConfig::toy(),
            epochs: 25,
            max_iterations: None,
            batch_size: 8,
            lr_min: 1e-4,
            lr_max: 5e-3,
            lr_period: 40,
            seed: 0,
            hflip: true,
            random_crop: false,
            cache_labels: true,
            canny: CannyParams::default(),
            out_dir: out_dir.into(),
            resume: None,
        }
    }

    /// Full schedule: batch 12, 100 epochs, lr in [1e-5, 1e-4], period 20.
    pub fn full(model: ModelConfig, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            model,
            epochs: 100,
            batch_size: 12,
            lr_min: 1e-5,
            lr_max: 1e-4,
            lr_period: 20,
            random_crop: true,
            ..Self::toy(out_dir)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(0.0 <= self.lr_min && self.lr_min < self.lr_max && self.lr_max.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 <= lr_min ({}) < lr_max ({})",
                self.lr_min, self.lr_max
            )));
        }
        self.canny.validate()
    }

    pub fn schedule(&self) -> CosineSchedule {
        CosineSchedule {
            lr_min: self.lr_min,
            lr_max: self.lr_max,
            period: self.lr_period,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

impl LogRow {
    fn csv(&self) -> String {
        let l = &self.loss;
        format!("{},{},{},{},{},{}\n", self.iteration, self.lr, l.wbce, l.wiou, l.mse, l.total)
    }
}

pub const LOG_HEADER: &str = "iteration,lr,wbce,wiou,mse,total\n";

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub model: Model<f32>,
    /// Every row of the loss log, including rows from before a resume.
    pub log: Vec<LogRow>,
    /// Optimizer steps taken in total.
    pub iterations: usize,
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: Option<PathBuf>,
    pub best_epoch: Option<usize>,
}

/// Resumable training state beyond the model itself.
#[derive(Clone, Debug)]
struct Progress {
    iteration: usize,
    epoch_sum: f64,
    epoch_count: usize,
    best_loss: f64,
    best_epoch: Option<usize>,
}

fn meta_value<V: std::str::FromStr>(ckpt: &Checkpoint, key: &str) -> Result<V> {
    ckpt.meta_get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Checkpoint(format!("missing or malformed `{key}`")))
}

fn state_checkpoint(model: &Model<f32>, adam: &AdamState<f32>, p: &Progress, seed: u64) -> Checkpoint {
    let mut ckpt = model.to_checkpoint();
    // f64 Display is shortest round-trip, so these parse back bit-exactly
    ckpt.meta.extend([
        ("train.seed".into(), seed.to_string()),
        ("train.iteration".into(), p.iteration.to_string()),
        ("train.epoch_sum".into(), p.epoch_sum.to_string()),
        ("train.epoch_count".into(), p.epoch_count.to_string()),
        ("train.best_loss".into(), p.best_loss.to_string()),
        (
            "train.best_epoch".into(),
            p.best_epoch.map_or_else(|| "none".into(), |e| e.to_string()),
        ),
        ("adam.step".into(), adam.step.to_string()),
    ]);
    let weights = model.params.weight_indices();
    for (slot, &i) in weights.iter().enumerate() {
        let name = model.params.name(i);
        ckpt.tensors
            .push((format!("adam.m.{name}"), Stored::F32(adam.m[slot].clone())));
        ckpt.tensors
            .push((format!("adam.v.{name}"), Stored::F32(adam.v[slot].clone())));
    }
    ckpt
}

fn restore(ckpt: &Checkpoint, cfg: &TrainConfig) -> Result<(Model<f32>, AdamState<f32>, Progress)> {
    let model = Model::<f32>::from_checkpoint(ckpt)?;
    if model.config != cfg.model {
        return Err(Error::Checkpoint("checkpoint model config differs from the training config".into()));
    }
    let seed: u64 = meta_value(ckpt, "train.seed")?;
    if seed != cfg.seed {
        return Err(Error::Checkpoint(format!("checkpoint was trained with seed {seed}, not {}", cfg.seed)));
    }
    let mut adam = AdamState::new(
        model.params.weight_indices().iter().map(|&i| model.params.get(i)),
        AdamHyper::default(),
    );
    adam.step = meta_value(ckpt, "adam.step")?;
    for (slot, i) in model.params.weight_indices().into_iter().enumerate() {
        let name = model.params.name(i);
        for (buf, kind) in [(&mut adam.m[slot], "m"), (&mut adam.v[slot], "v")] {
            let key = format!("adam.{kind}.{name}");
            let t = ckpt
                .tensor(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing `{key}`")))?
                .to::<f32>();
            if t.shape() != buf.shape() {
                return Err(Error::Checkpoint(format!("`{key}` has shape {:?}", t.shape())));
            }
            *buf = t;
        }
    }
    let best_epoch = match ckpt.meta_get("train.best_epoch") {
        Some("none") => None,
        _ => Some(meta_value(ckpt, "train.best_epoch")?),
    };
    let progress = Progress {
        iteration: meta_value(ckpt, "train.iteration")?,
        epoch_sum: meta_value(ckpt, "train.epoch_sum")?,
        epoch_count: meta_value(ckpt, "train.epoch_count")?,
        best_loss: meta_value(ckpt, "train.best_loss")?,
        best_epoch,
    };
    Ok((model, adam, progress))
}

fn read_log(path: &Path, before: usize) -> Result<Vec<LogRow>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let parse = |i: usize| -> Result<f64> {
            f.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Dataset(format!("{}: malformed row `{line}`", path.display())))
        };
        let row = LogRow {
            iteration: parse(0)? as usize,
            lr: parse(1)?,
            loss: LossBreakdown {
                wbce: parse(2)?,
                wiou: parse(3)?,
                mse: parse(4)?,
                total: parse(5)?,
            },
        };
        if row.iteration < before {
            rows.push(row);
        }
    }
    Ok(rows)
}

fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut text = String::from(LOG_HEADER);
    for r in rows {
        text.push_str(&r.csv());
    }
    std::fs::write(path, text).map_err(io_err(path))
}

fn append_log(path: &Path, row: &LogRow) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    f.write_all(row.csv().as_bytes()).map_err(io_err(path))
}

/// Loads every sample at the model resolution and attaches its labels.
pub fn load_training_set(manifest: &DatasetManifest, cfg: &TrainConfig) -> Result<Vec<Sample>> {
    if manifest.is_empty() {
        return Err(Error::Dataset("training manifest is empty".into()));
    }
    let size = cfg.model.input_size;
    manifest
        .pairs
        .par_iter()
        .map(|(img, mask)| {
            let mut s = load_sample(img, mask, size)?;
            attach_labels(&mut s, &cfg.canny, cfg.cache_labels)?;
            Ok(s)
        })
        .collect()
}

fn crop_chw(t: &Tensor<f32>, y0: usize, x0: usize, side: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    debug_assert!(y0 + side <= h && x0 + side <= w);
    let mut data = Vec::with_capacity(c * side * side);
    for ch in 0..c {
        for y in y0..y0 + side {
            data.extend_from_slice(&t.data()[(ch * h + y) * w + x0..][..side]);
        }
    }
    Tensor::new(vec![c, side, side], data)
}

/// Image, mask and texture target of one sample after augmentation.
fn augment(
    s: &Sample,
    target: Option<&Tensor<f32>>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<f32>, Tensor<f32>, Option<Tensor<f32>>)> {
    let mut image = s.image.clone();
    let mut mask = s.mask.clone();
    let mut target = target.cloned();
    if cfg.random_crop {
        let size = image.shape()[1];
        let side = ((size as f64 * rng.random_range(CROP_MIN_SCALE..=1.0)).round() as usize).clamp(1, size);
        let (y0, x0) = (rng.random_range(0..=size - side), rng.random_range(0..=size - side));
        image = resize_chw(&crop_chw(&image, y0, x0, side)?, size, size)?;
        mask = resize_nearest_chw(&crop_chw(&mask, y0, x0, side)?, size, size)?;
        target = target
            .map(|t| resize_nearest_chw(&crop_chw(&t, y0, x0, side)?, size, size))
            .transpose()?;
    }
    if cfg.hflip && rng.random_bool(0.5) {
        image = image.flip_horizontal();
        mask = mask.flip_horizontal();
        target = target.map(|t| t.flip_horizontal());
    }
    Ok((image, mask, target))
}

fn texture_target<'a>(s: &'a Sample, cfg: &ModelConfig) -> Result<Option<&'a Tensor<f32>>> {
    if !cfg.ablation.texture_branch {
        return Ok(None);
    }
    let (label, suffix) = match cfg.ablation.supervision {
        Supervision::Gradient => (&s.gradient_label, GRAD_SUFFIX),
        Supervision::Boundary => (&s.boundary_label, BOUND_SUFFIX),
    };
    label
        .as_ref()
        .map(Some)
        .ok_or_else(|| Error::Dataset(format!("sample {} has no {suffix} label", s.id)))
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Augmentation stream for one slot of one epoch, independent of any other
/// draw so a resumed run sees the same batches.
fn slot_rng(seed: u64, epoch: usize, slot: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64 + 1) << 32) | slot as u64);
    rng
}

/// One optimizer step on a batch. Returns the loss before the update.
/// A non-finite value anywhere in the step is reported against `iteration`.
fn train_step(
    model: &mut Model<f32>,
    adam: &mut AdamState<f32>,
    batch: (Tensor<f32>, Tensor<f32>, Option<Tensor<f32>>),
    lr: f64,
    iteration: usize,
) -> Result<LossBreakdown> {
    step_inner(model, adam, batch, lr, iteration).map_err(|e| match e {
        Error::NonFinite { .. } => Error::NonFiniteLoss { iteration },
        e => e,
    })
}

fn step_inner(
    model: &mut Model<f32>,
    adam: &mut AdamState<f32>,
    batch: (Tensor<f32>, Tensor<f32>, Option<Tensor<f32>>),
    lr: f64,
    iteration: usize,
) -> Result<LossBreakdown> {
    let (images, masks, zg) = batch;
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(&mut tape, &model.params, true)?;
    let x = ctx.tape.constant(images)?;
    let f = model.forward(&mut ctx, x)?;
    let texture = match (f.pg, zg.as_ref()) {
        (Some(pg), Some(z)) => Some((pg, z)),
        _ => None,
    };
    let (vars, loss) = total_loss(ctx.tape, f.pc, &masks, texture)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { iteration });
    }
    let grads = ctx.tape.backward(vars.total)?;
    let weight_vars: Vec<_> = model.params.weight_indices().into_iter().map(|i| ctx.var(i)).collect();
    let updates = std::mem::take(&mut ctx.bn_updates);
    drop(ctx);
    let grads: Vec<Tensor<f32>> = weight_vars.iter().map(|&v| grads.get(v)).collect();
    if grads.iter().any(|g| !g.all_finite()) {
        return Err(Error::NonFiniteLoss { iteration });
    }
    apply_bn_updates(&mut model.params, &updates);
    adam.step(&mut model.params.weights_mut(), &grads, lr)?;
    Ok(loss)
}

/// Trains on `manifest`, writing `loss_log.csv`, `last.ckpt` and, after each
/// epoch whose mean loss is the lowest so far, `best.ckpt` into `out_dir`.
pub fn train(cfg: &TrainConfig, manifest: &DatasetManifest) -> Result<TrainReport> {
    cfg.validate()?;
    let samples = load_training_set(manifest, cfg)?;
    train_on(cfg, &samples)
}

/// [`train`] on samples that already carry their labels.
pub fn train_on(cfg: &TrainConfig, samples: &[Sample]) -> Result<TrainReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let log_path = out.join(LOSS_LOG);
    let last_path = out.join(LAST_CHECKPOINT);
    let best_path = out.join(BEST_CHECKPOINT);

    let (mut model, mut adam, mut progress, mut log) = match &cfg.resume {
        Some(path) => {
            let (model, adam, progress) = restore(&Checkpoint::load(path)?, cfg)?;
            let log = if log_path.is_file() {
                read_log(&log_path, progress.iteration)?
            } else {
                Vec::new()
            };
            (model, adam, progress, log)
        }
        None => {
            let model = Model::<f32>::new(cfg.model.clone(), cfg.seed)?;
            let adam = AdamState::new(
                model.params.weight_indices().iter().map(|&i| model.params.get(i)),
                AdamHyper::default(),
            );
            let progress = Progress {
                iteration: 0,
                epoch_sum: 0.0,
                epoch_count: 0,
                best_loss: f64::INFINITY,
                best_epoch: None,
            };
            (model, adam, progress, Vec::new())
        }
    };
    write_log(&log_path, &log)?;

    let n = samples.len();
    let per_epoch = n.div_ceil(cfg.batch_size);
    let mut end = cfg.epochs * per_epoch;
    if let Some(m) = cfg.max_iterations {
        end = end.min(m);
    }
    let schedule = cfg.schedule();
    while progress.iteration < end {
        let t = progress.iteration;
        let (epoch, pos) = (t / per_epoch, t % per_epoch);
        let order = epoch_order(n, cfg.seed, epoch);
        let slots = pos * cfg.batch_size..((pos + 1) * cfg.batch_size).min(n);
        let mut images = Vec::new();
        let mut masks = Vec::new();
        let mut targets = Vec::new();
        for slot in slots {
            let s = &samples[order[slot]];
            let (i, m, z) = augment(s, texture_target(s, &cfg.model)?, cfg, &mut slot_rng(cfg.seed, epoch, slot))?;
            images.push(i);
            masks.push(m);
            targets.extend(z);
        }
        let zg = (!targets.is_empty()).then(|| Tensor::stack(&targets)).transpose()?;
        let batch = (Tensor::stack(&images)?, Tensor::stack(&masks)?, zg);
        let lr = schedule.lr_at(epoch);
        let loss = train_step(&mut model, &mut adam, batch, lr, t)?;
        let row = LogRow { iteration: t, lr, loss };
        append_log(&log_path, &row)?;
        log.push(row);
        progress.iteration += 1;
        progress.epoch_sum += loss.total;
        progress.epoch_count += 1;
        if pos + 1 == per_epoch {
            let mean = progress.epoch_sum / progress.epoch_count as f64;
            progress.epoch_sum = 0.0;
            progress.epoch_count = 0;
            if mean < progress.best_loss {
                progress.best_loss = mean;
                progress.best_epoch = Some(epoch);
                state_checkpoint(&model, &adam, &progress, cfg.seed).save(&best_path)?;
            }
        }
    }
    state_checkpoint(&model, &adam, &progress, cfg.seed).save(&last_path)?;
    Ok(TrainReport {
        model,
        log,
        iterations: progress.iteration,
        last_checkpoint: last_path,
        best_checkpoint: progress.best_epoch.map(|_| best_path),
        best_epoch: progress.best_epoch,
    })
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        let label = name.ends_with(GRAD_SUFFIX) || name.ends_with(BOUND_SUFFIX);
        if path.is_file() && matches!(ext.as_str(), "png" | "jpg" | "jpeg" | "bmp") && !label {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// `sigmoid(logits)` at the image's own resolution, eval-mode BN.
pub fn predict_map(model: &Model<f32>, image: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let size = model.config.input_size;
    let x = resize_chw(image, size, size)?;
    let (logits, _) = model.predict(&x)?;
    let p = logits.map(|v| 1.0 / (1.0 + (-v).exp()));
    let p = p.reshape(vec![1, size, size])?;
    resize_chw(&p, h, w)
}

/// Writes `<stem>.png` prediction maps for every image in `image_dir` (or
/// its `Imgs/` subdirectory when present) into `out_dir`.
pub fn infer(checkpoint: &Path, image_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let model = Model::<f32>::load(checkpoint)?;
    infer_with(&model, image_dir, out_dir)
}

pub fn infer_with(model: &Model<f32>, image_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let nested = image_dir.join(crate::data::IMAGE_DIR);
    let dir = if nested.is_dir() { nested } else { image_dir.to_path_buf() };
    let files = image_files(&dir)?;
    if files.is_empty() {
        return Err(Error::Dataset(format!("no images in {}", dir.display())));
    }
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    files
        .par_iter()
        .map(|f| {
            let p = predict_map(model, &load_rgb(f)?)?;
            let dst = out_dir.join(format!("{}.png", stem(f)));
            save_map(&p, &dst)?;
            Ok(dst)
        })
        .collect()
}

/// Keys read by [`TrainConfig::overlay`] besides the model keys.
pub const TRAIN_KEYS: [&str; 14] = [
    "epochs",
    "max_iterations",
    "batch_size",
    "lr_min",
    "lr_max",
    "lr_period",
    "seed",
    "hflip",
    "random_crop",
    "cache_labels",
    "canny_sigma",
    "canny_kernel",
    "canny_low",
    "canny_high",
];

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key} = `{v}` is not a number")))
}

impl TrainConfig {
    /// Applies recognised model and training keys on top of `self`; other
    /// keys are ignored. `max_iterations = none` removes the cap.
    pub fn overlay(mut self, map: &BTreeMap<String, String>) -> Result<Self> {
        use crate::model::config::{parse_switch, parse_usize};
        self.model = self.model.overlay(map)?;
        for (k, v) in map {
            match k.as_str() {
                "epochs" => self.epochs = parse_usize(k, v)?,
                "max_iterations" => {
                    self.max_iterations = match v.trim() {
                        "none" => None,
                        v => Some(parse_usize(k, v)?),
                    }
                }
                "batch_size" => self.batch_size = parse_usize(k, v)?,
                "lr_min" => self.lr_min = parse_f64(k, v)?,
                "lr_max" => self.lr_max = parse_f64(k, v)?,
                "lr_period" => self.lr_period = parse_usize(k, v)?,
                "seed" => {
                    self.seed = v
                        .trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("seed = `{v}` is not a 64-bit unsigned integer")))?
                }
                "hflip" => self.hflip = parse_switch(k, v)?,
                "random_crop" => self.random_crop = parse_switch(k, v)?,
                "cache_labels" => self.cache_labels = parse_switch(k, v)?,
                "canny_sigma" => self.canny.gaussian_sigma = parse_f64(k, v)?,
                "canny_kernel" => self.canny.gaussian_kernel = parse_usize(k, v)?,
                "canny_low" => self.canny.low_ratio = parse_f64(k, v)?,
                "canny_high" => self.canny.high_ratio = parse_f64(k, v)?,
                _ => {}
            }
        }
        Ok(self)
    }
}

/// Resolved training settings as `key = value` lines, readable back by
/// [`TrainConfig::overlay`].
pub fn describe(cfg: &TrainConfig) -> String {
    let mut pairs: BTreeMap<String, String> = cfg.model.to_pairs().into_iter().collect();
    let on = |b: bool| if b { "on" } else { "off" }.to_string();
    let c = &cfg.canny;
    for (k, v) in [
        ("epochs", cfg.epochs.to_string()),
        ("max_iterations", cfg.max_iterations.map_or_else(|| "none".into(), |m| m.to_string())),
        ("batch_size", cfg.batch_size.to_string()),
        ("lr_min", cfg.lr_min.to_string()),
        ("lr_max", cfg.lr_max.to_string()),
        ("lr_period", cfg.lr_period.to_string()),
        ("seed", cfg.seed.to_string()),
        ("hflip", on(cfg.hflip)),
        ("random_crop", on(cfg.random_crop)),
        ("cache_labels", on(cfg.cache_labels)),
        ("canny_sigma", c.gaussian_sigma.to_string()),
        ("canny_kernel", c.gaussian_kernel.to_string()),
        ("canny_low", c.low_ratio.to_string()),
        ("canny_high", c.high_ratio.to_string()),
    ] {
        pairs.insert(k.into(), v);
    }
    let mut s = String::new();
    for (k, v) in pairs {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

#[cfg(test)]
mod tests;
