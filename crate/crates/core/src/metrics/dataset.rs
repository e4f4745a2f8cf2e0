//! Scoring a directory of predictions against a directory of masks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{e_curve_from, f_curve_from, mae, s_measure, weighted_f, Counts, Frame, THRESHOLDS};
use crate::data::image_io::{load_gray, load_mask, resize_chw};
use crate::data::stem;
use crate::error::{io_err, Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalOptions {
    /// Min-max normalize each prediction before scoring.
    pub normalize: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScores {
    pub id: String,
    pub mae: f64,
    pub s_alpha: f64,
    pub e_max: f64,
    pub e_mean: f64,
    pub e_adaptive: f64,
    pub f_max: f64,
    pub f_mean: f64,
    pub f_adaptive: f64,
    pub f_weighted: f64,
    /// The mask has no foreground; F-based scores are recorded as 0.
    pub empty_gt: bool,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f_curve: Vec<f64>,
    pub e_curve: Vec<f64>,
}

pub const SCORE_COLUMNS: [&str; 9] = [
    "mae",
    "s_alpha",
    "e_max",
    "e_mean",
    "e_adaptive",
    "f_max",
    "f_mean",
    "f_adaptive",
    "f_weighted",
];

impl ImageScores {
    pub fn values(&self) -> [f64; 9] {
        [
            self.mae,
            self.s_alpha,
            self.e_max,
            self.e_mean,
            self.e_adaptive,
            self.f_max,
            self.f_mean,
            self.f_adaptive,
            self.f_weighted,
        ]
    }
}

/// Every metric for one frame.
pub fn score_frame(id: &str, f: &Frame) -> ImageScores {
    let counts = Counts::curve(f);
    let fc = f_curve_from(f, &counts);
    let ec = e_curve_from(f, &counts);
    let empty_gt = f.foreground() == 0;
    ImageScores {
        id: id.to_string(),
        mae: mae(f),
        s_alpha: s_measure(f),
        e_max: ec.max,
        e_mean: ec.mean,
        e_adaptive: ec.adaptive,
        f_max: fc.max,
        f_mean: fc.mean,
        f_adaptive: fc.adaptive,
        f_weighted: weighted_f(f),
        empty_gt,
        precision: fc.precision,
        recall: fc.recall,
        f_curve: fc.f,
        e_curve: ec.e,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    /// Ordered by id.
    pub images: Vec<ImageScores>,
    /// Arithmetic means, in [`SCORE_COLUMNS`] order.
    pub means: [f64; 9],
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f_curve: Vec<f64>,
    pub e_curve: Vec<f64>,
    /// Stems present on only one side.
    pub unmatched: Vec<String>,
}

fn mean_curve(images: &[ImageScores], pick: impl Fn(&ImageScores) -> &Vec<f64>) -> Vec<f64> {
    let n = images.len() as f64;
    (0..THRESHOLDS)
        .map(|t| images.iter().map(|s| pick(s)[t]).sum::<f64>() / n)
        .collect()
}

impl MetricReport {
    pub fn from_scores(mut images: Vec<ImageScores>, unmatched: Vec<String>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Dataset("no images to score".into()));
        }
        images.sort_by(|a, b| a.id.cmp(&b.id));
        let n = images.len() as f64;
        let mut means = [0.0; 9];
        for s in &images {
            for (m, v) in means.iter_mut().zip(s.values()) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        Ok(Self {
            precision: mean_curve(&images, |s| &s.precision),
            recall: mean_curve(&images, |s| &s.recall),
            f_curve: mean_curve(&images, |s| &s.f_curve),
            e_curve: mean_curve(&images, |s| &s.e_curve),
            images,
            means,
            unmatched,
        })
    }

    pub fn mean(&self, column: &str) -> Option<f64> {
        SCORE_COLUMNS.iter().position(|c| *c == column).map(|i| self.means[i])
    }

    pub fn per_image_csv(&self) -> String {
        let mut out = format!("id,{},empty_gt\n", SCORE_COLUMNS.join(","));
        for s in &self.images {
            out.push_str(&s.id);
            for v in s.values() {
                let _ = write!(out, ",{v:.6}");
            }
            let _ = writeln!(out, ",{}", s.empty_gt as u8);
        }
        out
    }

    pub fn summary_csv(&self, dataset: &str) -> String {
        let mut out = format!("dataset,images,empty_gt,{}\n", SCORE_COLUMNS.join(","));
        let empty = self.images.iter().filter(|s| s.empty_gt).count();
        let _ = write!(out, "{dataset},{},{empty}", self.images.len());
        for v in self.means {
            let _ = write!(out, ",{v:.6}");
        }
        out.push('\n');
        out
    }

    pub fn curves_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall,f,e\n");
        for t in 0..THRESHOLDS {
            let _ = writeln!(
                out,
                "{t},{:.6},{:.6},{:.6},{:.6}",
                self.precision[t], self.recall[t], self.f_curve[t], self.e_curve[t]
            );
        }
        out
    }

    /// Writes `per_image.csv`, `summary.csv` and `curves.csv` into `dir`.
    pub fn write_csvs(&self, dir: &Path, dataset: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (name, text) in [
            ("per_image.csv", self.per_image_csv()),
            ("summary.csv", self.summary_csv(dataset)),
            ("curves.csv", self.curves_csv()),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(io_err(&p))?;
        }
        Ok(())
    }
}

fn images_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let label = name.ends_with(crate::data::GRAD_SUFFIX) || name.ends_with(crate::data::BOUND_SUFFIX);
        if path.is_file() && matches!(ext.as_str(), "png" | "jpg" | "jpeg" | "bmp") && !label {
            out.insert(stem(&path), path);
        }
    }
    Ok(out)
}

/// Loads a prediction and mask pair at the mask's resolution.
pub fn load_frame(pred: &Path, gt: &Path, opts: &EvalOptions) -> Result<Frame> {
    let g = load_mask(gt)?;
    let (h, w) = (g.shape()[1], g.shape()[2]);
    // scored in f64 so an unresized 8-bit level k is exactly k/255
    let p = resize_chw(&load_gray::<f64>(pred)?, h, w)?;
    let mut p: Vec<f64> = p.data().iter().map(|&v| v.clamp(0.0, 1.0)).collect();
    if opts.normalize {
        let (lo, hi) = p.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        if hi > lo {
            p.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
        }
    }
    Frame::new(h, w, p, g.data().iter().map(|&v| v >= 0.5).collect())
}

/// Scores every stem present in both directories, in parallel on the
/// current rayon pool. Output order does not depend on the pool size.
pub fn evaluate_dataset(pred_dir: &Path, gt_dir: &Path, opts: &EvalOptions) -> Result<MetricReport> {
    let preds = images_by_stem(pred_dir)?;
    let gts = images_by_stem(gt_dir)?;
    let unmatched: Vec<String> = preds
        .keys()
        .filter(|k| !gts.contains_key(*k))
        .chain(gts.keys().filter(|k| !preds.contains_key(*k)))
        .cloned()
        .collect();
    let pairs: Vec<(&String, &PathBuf, &PathBuf)> = preds
        .iter()
        .filter_map(|(k, p)| gts.get(k).map(|g| (k, p, g)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Dataset(format!(
            "no prediction in {} matches a mask in {}",
            pred_dir.display(),
            gt_dir.display()
        )));
    }
    let scores = pairs
        .par_iter()
        .map(|(id, p, g)| Ok(score_frame(id, &load_frame(p, g, opts)?)))
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_scores(scores, unmatched)
}
