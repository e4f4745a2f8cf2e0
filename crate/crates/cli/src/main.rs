//! `codlab`: label generation, synthetic data, training, inference,
//! evaluation, gradient checks and model accounting.
//!
//! Exit status is 0 on success, 1 for usage or configuration errors and 2
//! for runtime failures.

mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use codlab_core::data::synth::synth_generate;
use codlab_core::data::{label_path, load_sample, save_map, DatasetManifest, BOUND_SUFFIX, GRAD_SUFFIX};
use codlab_core::gradlabel::{boundary_label, object_gradient_label};
use codlab_core::metrics::{evaluate_dataset, EvalOptions, SCORE_COLUMNS};
use codlab_core::model::Model;
use codlab_core::tensor::gradcheck::GradCheckConfig;
use codlab_core::trainer::{describe, infer_with, train, BEST_CHECKPOINT, LAST_CHECKPOINT, LOSS_LOG};
use codlab_core::verify::full_suite;

use settings::{parse_assignment, Settings, Usage};

#[derive(Parser, Debug)]
#[command(name = "codlab", version, about = "Gradient-supervised camouflaged object detection lab")]
#[command(propagate_version = true, arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Config file of `key = value` lines; `#` starts a comment.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable. Wins over the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Base preset: toy, dgnet_s or dgnet (default toy).
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Random seed. Only `synth` and `train` are stochastic.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-image work (default: logical cores).
    #[arg(long, global = true, env = "CODLAB_JOBS")]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write `_grad.png` and `_bound.png` labels beside every GT mask.
    Genlabel {
        /// Dataset root holding `Imgs/` and `GT/`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Generate synthetic camouflage scenes into `Imgs/` and `GT/`.
    Synth {
        /// Dataset root; created if missing.
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes.
        #[arg(long, default_value_t = 64)]
        count: usize,
        /// Side length in pixels (default: the model input size).
        #[arg(long)]
        size: Option<usize>,
    },
    /// Train on a dataset and write checkpoints plus the loss log.
    Train {
        /// Dataset root holding `Imgs/` and `GT/`.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for the loss log and checkpoints.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the `epochs` key.
        #[arg(long)]
        epochs: Option<usize>,
        /// Overrides the `batch_size` key.
        #[arg(long)]
        batch_size: Option<usize>,
        /// Stop after this many optimizer steps.
        #[arg(long)]
        max_iterations: Option<usize>,
        /// Continue from a checkpoint of an interrupted run.
        #[arg(long, value_name = "CHECKPOINT")]
        resume: Option<PathBuf>,
    },
    /// Predict maps for a directory of images.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Image directory, or a dataset root with `Imgs/`.
        #[arg(long)]
        images: PathBuf,
        /// Directory for the predicted PNG maps.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against masks and write per_image, summary and curves CSVs.
    Eval {
        /// Directory of predicted PNG maps.
        #[arg(long)]
        pred: PathBuf,
        /// Mask directory, or a dataset root with `GT/`.
        #[arg(long)]
        gt: PathBuf,
        /// Directory for the CSV reports.
        #[arg(long)]
        out: PathBuf,
        /// Dataset name for summary.csv.
        #[arg(long, default_value = "dataset")]
        name: String,
        /// Min-max normalize each prediction before scoring.
        #[arg(long)]
        normalize: bool,
    },
    /// Finite-difference check of every layer and the toy network.
    Gradcheck {
        /// Coordinates sampled per network tensor.
        #[arg(long, default_value_t = 4)]
        coords: usize,
    },
    /// Parameter and multiply-accumulate counts with a per-module breakdown.
    Params,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Genlabel { .. } => "genlabel",
            Command::Synth { .. } => "synth",
            Command::Train { .. } => "train",
            Command::Infer { .. } => "infer",
            Command::Eval { .. } => "eval",
            Command::Gradcheck { .. } => "gradcheck",
            Command::Params => "params",
        }
    }

    fn stochastic(&self) -> bool {
        matches!(self, Command::Synth { .. } | Command::Train { .. })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage(&e) { 1 } else { 2 })
        }
    }
}

fn is_usage(e: &anyhow::Error) -> bool {
    e.chain()
        .any(|c| c.is::<Usage>() || matches!(c.downcast_ref(), Some(codlab_core::Error::Config(_))))
}

fn run(cli: Cli) -> Result<()> {
    let Cli { common, command } = cli;
    let mut flags = common
        .set
        .iter()
        .map(|s| parse_assignment(s))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(p) = &common.preset {
        flags.push(("preset".into(), p.clone()));
    }
    if let Some(s) = common.seed {
        flags.push(("seed".into(), s.to_string()));
    }
    match &command {
        Command::Train {
            epochs,
            batch_size,
            max_iterations,
            ..
        } => {
            flags.extend(epochs.map(|v| ("epochs".to_string(), v.to_string())));
            flags.extend(batch_size.map(|v| ("batch_size".to_string(), v.to_string())));
            flags.extend(max_iterations.map(|v| ("max_iterations".to_string(), v.to_string())));
        }
        Command::Eval { normalize: true, .. } => flags.push(("normalize".into(), "on".into())),
        _ => {}
    }
    let settings = Settings::resolve(common.config.as_deref(), flags)?;
    if !command.stochastic() && settings.explicit().contains("seed") {
        eprintln!("note: `{}` is deterministic; the seed is ignored", command.name());
    }
    if let Some(jobs) = common.jobs {
        if jobs == 0 {
            bail!(Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("starting the worker pool")?;
    }

    match command {
        Command::Genlabel { data } => genlabel(&settings, &data),
        Command::Synth { out, count, size } => synth(&settings, &out, count, size),
        Command::Train { data, out, resume, .. } => train_cmd(&settings, &data, &out, resume),
        Command::Infer {
            checkpoint,
            images,
            out,
        } => infer_cmd(&checkpoint, &images, &out),
        Command::Eval {
            pred, gt, out, name, ..
        } => eval(&settings, &pred, &gt, &out, &name),
        Command::Gradcheck { coords } => gradcheck(coords),
        Command::Params => params(&settings),
    }
}

/// Prints the settings a subcommand runs with, one `key = value` per line.
fn print_resolved(command: &str, lines: &[(&str, String)], extra: &str) {
    println!("# resolved config: {command}");
    for (k, v) in lines {
        println!("{k} = {v}");
    }
    print!("{extra}");
    println!("# end config");
}

fn genlabel(settings: &Settings, data: &Path) -> Result<()> {
    let cfg = settings.train_config(Path::new("."))?;
    let size = cfg.model.input_size;
    let c = &cfg.canny;
    print_resolved(
        "genlabel",
        &[
            ("data", data.display().to_string()),
            ("input_size", size.to_string()),
            ("canny_sigma", c.gaussian_sigma.to_string()),
            ("canny_kernel", c.gaussian_kernel.to_string()),
            ("canny_low", c.low_ratio.to_string()),
            ("canny_high", c.high_ratio.to_string()),
        ],
        "",
    );
    let manifest = DatasetManifest::from_dir(data, size)?;
    if manifest.is_empty() {
        bail!("no image/mask pairs under {}", data.display());
    }
    let counts = manifest
        .pairs
        .par_iter()
        .map(|(img, mask)| -> Result<(usize, usize)> {
            let s = load_sample(img, mask, size)?;
            let grad = object_gradient_label(&s.image, &s.mask, &cfg.canny)?;
            let bound = boundary_label(&s.mask)?;
            save_map(&grad, &label_path(mask, GRAD_SUFFIX))?;
            save_map(&bound, &label_path(mask, BOUND_SUFFIX))?;
            let on = |t: &codlab_core::Tensor<f32>| t.data().iter().filter(|&&v| v > 0.5).count();
            Ok((on(&grad), on(&bound)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (g, b) = counts.iter().fold((0, 0), |(g, b), c| (g + c.0, b + c.1));
    println!(
        "labelled {} masks at {size}x{size}: {g} gradient pixels, {b} boundary pixels",
        counts.len()
    );
    Ok(())
}

fn synth(settings: &Settings, out: &Path, count: usize, size: Option<usize>) -> Result<()> {
    let cfg = settings.train_config(Path::new("."))?;
    let size = size.unwrap_or(cfg.model.input_size);
    print_resolved(
        "synth",
        &[
            ("out", out.display().to_string()),
            ("count", count.to_string()),
            ("size", size.to_string()),
            ("seed", cfg.seed.to_string()),
        ],
        "",
    );
    let pairs = synth_generate(count, size, cfg.seed, out)?;
    println!("wrote {} scenes to {}", pairs.len(), out.display());
    Ok(())
}

fn train_cmd(settings: &Settings, data: &Path, out: &Path, resume: Option<PathBuf>) -> Result<()> {
    let mut cfg = settings.train_config(out)?;
    cfg.resume = resume;
    let preset = settings.preset()?;
    print_resolved(
        "train",
        &[
            ("preset", preset.to_string()),
            ("data", data.display().to_string()),
            ("out", out.display().to_string()),
            (
                "resume",
                cfg.resume.as_ref().map_or_else(|| "none".into(), |p| p.display().to_string()),
            ),
        ],
        &describe(&cfg),
    );
    let manifest = DatasetManifest::from_dir(data, cfg.model.input_size)?;
    let report = train(&cfg, &manifest)?;
    if let (Some(first), Some(last)) = (report.log.first(), report.log.last()) {
        println!(
            "trained {} iterations: total loss {:.6} -> {:.6}",
            report.iterations, first.loss.total, last.loss.total
        );
    } else {
        println!("no iterations run; saved the initialization");
    }
    println!("loss log: {}", out.join(LOSS_LOG).display());
    println!("last checkpoint: {}", out.join(LAST_CHECKPOINT).display());
    if let Some(epoch) = report.best_epoch {
        println!("best checkpoint: {} (epoch {epoch})", out.join(BEST_CHECKPOINT).display());
    }
    Ok(())
}

fn infer_cmd(checkpoint: &Path, images: &Path, out: &Path) -> Result<()> {
    let model = Model::<f32>::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let mut extra = String::new();
    for (k, v) in model.config.to_pairs() {
        extra.push_str(&format!("{k} = {v}\n"));
    }
    print_resolved(
        "infer",
        &[
            ("checkpoint", checkpoint.display().to_string()),
            ("images", images.display().to_string()),
            ("out", out.display().to_string()),
        ],
        &extra,
    );
    let written = infer_with(&model, images, out)?;
    if written.is_empty() {
        bail!("no images found under {}", images.display());
    }
    println!("wrote {} prediction maps to {}", written.len(), out.display());
    Ok(())
}

fn eval(settings: &Settings, pred: &Path, gt: &Path, out: &Path, name: &str) -> Result<()> {
    let normalize = settings.normalize()?;
    let gt_dir = if gt.join(codlab_core::data::MASK_DIR).is_dir() {
        gt.join(codlab_core::data::MASK_DIR)
    } else {
        gt.to_path_buf()
    };
    print_resolved(
        "eval",
        &[
            ("pred", pred.display().to_string()),
            ("gt", gt_dir.display().to_string()),
            ("out", out.display().to_string()),
            ("name", name.to_string()),
            ("normalize", if normalize { "on" } else { "off" }.to_string()),
        ],
        "",
    );
    let report = evaluate_dataset(pred, &gt_dir, &EvalOptions { normalize })?;
    if !report.unmatched.is_empty() {
        eprintln!(
            "warning: {} stems present on one side only: {}",
            report.unmatched.len(),
            report.unmatched.join(", ")
        );
    }
    report.write_csvs(out, name)?;
    println!("scored {} images", report.images.len());
    for (c, m) in SCORE_COLUMNS.iter().zip(report.means) {
        println!("{c:>11} {m:.6}");
    }
    Ok(())
}

fn gradcheck(coords: usize) -> Result<()> {
    if coords == 0 {
        bail!(Usage("--coords must be at least 1".into()));
    }
    let cfg = GradCheckConfig::default();
    print_resolved(
        "gradcheck",
        &[
            ("step", cfg.step.to_string()),
            ("tolerance", cfg.tolerance.to_string()),
            ("floor", cfg.floor.to_string()),
            ("coords", coords.to_string()),
        ],
        "",
    );
    let reports = full_suite(&cfg, coords)?;
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        bail!("{failed} of {} gradient checks failed", reports.len());
    }
    println!("all {} gradient checks passed", reports.len());
    Ok(())
}

fn params(settings: &Settings) -> Result<()> {
    let config = settings.model_config()?;
    let preset = settings.preset()?;
    let mut extra = String::new();
    for (k, v) in config.to_pairs() {
        extra.push_str(&format!("{k} = {v}\n"));
    }
    print_resolved("params", &[("preset", preset.to_string())], &extra);
    let s = config.input_size;
    let model = Model::<f32>::new(config, 0)?;
    let total = model.count_params();
    let macs = model.count_macs(s, s);
    println!("parameters {total} ({:.2}M)", total as f64 / 1e6);
    println!("macs@{s}x{s} {macs} ({:.2}G)", macs as f64 / 1e9);
    for (module, n) in model.param_breakdown() {
        println!("  {module:<12} {n}");
    }
    Ok(())
}
