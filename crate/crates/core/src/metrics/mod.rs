//! Per-image segmentation scores: MAE, F-measure and E-measure curves,
//! S-measure and weighted F-measure.
//!
//! Denominators that can vanish are guarded by returning the documented
//! limit instead of adding a small constant, so a perfect prediction scores
//! exactly 1 wherever the formulas allow it.

pub mod dataset;

use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

pub use dataset::{evaluate_dataset, EvalOptions, ImageScores, MetricReport, SCORE_COLUMNS};

pub const THRESHOLDS: usize = 256;
pub const BETA2: f64 = 0.3;
pub const ALPHA: f64 = 0.5;

/// A prediction in `[0, 1]` and its binary ground truth, row-major `h × w`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub h: usize,
    pub w: usize,
    pub p: Vec<f64>,
    pub g: Vec<bool>,
}

impl Frame {
    pub fn new(h: usize, w: usize, p: Vec<f64>, g: Vec<bool>) -> Result<Self> {
        if p.len() != h * w || g.len() != h * w || h == 0 || w == 0 {
            return Err(shape_err(
                "metrics",
                format!("{h}×{w} frame with {} prediction and {} mask values", p.len(), g.len()),
            ));
        }
        if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(shape_err("metrics", format!("prediction value {v} outside [0, 1]")));
        }
        Ok(Self { h, w, p, g })
    }

    /// From `[1, H, W]` (or `[H, W]`) maps; the mask is binarized at 0.5.
    pub fn from_tensors<T: Scalar>(p: &Tensor<T>, g: &Tensor<T>) -> Result<Self> {
        if p.shape() != g.shape() || p.shape().len() < 2 {
            return Err(shape_err("metrics", format!("{:?} vs {:?}", p.shape(), g.shape())));
        }
        let r = p.shape().len();
        let (h, w) = (p.shape()[r - 2], p.shape()[r - 1]);
        if p.len() != h * w {
            return Err(shape_err("metrics", format!("expected a single map, got {:?}", p.shape())));
        }
        Self::new(
            h,
            w,
            p.data().iter().map(|v| v.to_f64_lossy()).collect(),
            g.data().iter().map(|v| v.to_f64_lossy() >= 0.5).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn foreground(&self) -> usize {
        self.g.iter().filter(|&&g| g).count()
    }

    pub fn mean_p(&self) -> f64 {
        self.p.iter().sum::<f64>() / self.len() as f64
    }

    /// `min(2·mean(p), 1)`.
    pub fn adaptive_threshold(&self) -> f64 {
        (2.0 * self.mean_p()).min(1.0)
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.h {
            for x in 0..self.w {
                let (a, b) = (y * self.w + x, y * self.w + self.w - 1 - x);
                out.p[a] = self.p[b];
                out.g[a] = self.g[b];
            }
        }
        out
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn mae(f: &Frame) -> f64 {
    f.p.iter()
        .zip(&f.g)
        .map(|(&p, &g)| (p - if g { 1.0 } else { 0.0 }).abs())
        .sum::<f64>()
        / f.len() as f64
}

/// Largest `t ∈ 0..=255` with `v ≥ t/255`.
pub fn threshold_bin(v: f64) -> usize {
    let mut t = (v * 255.0).floor().clamp(0.0, 255.0) as usize;
    while t < 255 && v >= (t + 1) as f64 / 255.0 {
        t += 1;
    }
    while t > 0 && v < t as f64 / 255.0 {
        t -= 1;
    }
    t
}

/// Confusion counts of `p ≥ threshold` against the mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Counts {
    pub fn at(f: &Frame, threshold: f64) -> Self {
        let mut c = Counts::default();
        for (&p, &g) in f.p.iter().zip(&f.g) {
            match (p >= threshold, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    /// Counts at every threshold `t/255`, from one histogram pass.
    pub fn curve(f: &Frame) -> Vec<Counts> {
        let (mut fg, mut bg) = ([0usize; THRESHOLDS], [0usize; THRESHOLDS]);
        for (&p, &g) in f.p.iter().zip(&f.g) {
            let b = threshold_bin(p);
            if g {
                fg[b] += 1;
            } else {
                bg[b] += 1;
            }
        }
        let (nfg, nbg) = (fg.iter().sum::<usize>(), bg.iter().sum::<usize>());
        let mut out = vec![Counts::default(); THRESHOLDS];
        let (mut tp, mut fp) = (0, 0);
        for t in (0..THRESHOLDS).rev() {
            tp += fg[t];
            fp += bg[t];
            out[t] = Counts {
                tp,
                fp,
                fn_: nfg - tp,
                tn: nbg - fp,
            };
        }
        out
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp as f64, (self.tp + self.fp) as f64)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp as f64, (self.tp + self.fn_) as f64)
    }

    /// `(1+β²)PR / (β²P + R)` with `β² = 0.3`.
    pub fn f_measure(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        ratio((1.0 + BETA2) * p * r, BETA2 * p + r)
    }

    /// Mean enhanced-alignment score of the binarized prediction.
    pub fn e_measure(&self) -> f64 {
        let n = (self.tp + self.fp + self.fn_ + self.tn) as f64;
        let (ng, np) = ((self.tp + self.fn_) as f64, (self.tp + self.fp) as f64);
        if ng == 0.0 {
            return 1.0 - np / n;
        }
        if ng == n {
            return np / n;
        }
        let (mg, mp) = (ng / n, np / n);
        let score = |g: f64, p: f64| {
            let (a, b) = (g - mg, p - mp);
            let xi = ratio(2.0 * a * b, a * a + b * b);
            (1.0 + xi) * (1.0 + xi) / 4.0
        };
        (self.tp as f64 * score(1.0, 1.0)
            + self.fp as f64 * score(0.0, 1.0)
            + self.fn_ as f64 * score(1.0, 0.0)
            + self.tn as f64 * score(0.0, 0.0))
            / n
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FCurve {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f: Vec<f64>,
    pub max: f64,
    pub mean: f64,
    pub adaptive: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ECurve {
    pub e: Vec<f64>,
    pub max: f64,
    pub mean: f64,
    pub adaptive: f64,
}

fn max_mean(v: &[f64]) -> (f64, f64) {
    (v.iter().copied().fold(0.0, f64::max), v.iter().sum::<f64>() / v.len() as f64)
}

pub fn f_measure_curve(f: &Frame) -> FCurve {
    f_curve_from(f, &Counts::curve(f))
}

fn f_curve_from(f: &Frame, counts: &[Counts]) -> FCurve {
    let precision: Vec<f64> = counts.iter().map(Counts::precision).collect();
    let recall: Vec<f64> = counts.iter().map(Counts::recall).collect();
    let fm: Vec<f64> = counts.iter().map(Counts::f_measure).collect();
    let (max, mean) = max_mean(&fm);
    FCurve {
        precision,
        recall,
        f: fm,
        max,
        mean,
        adaptive: Counts::at(f, f.adaptive_threshold()).f_measure(),
    }
}

pub fn e_measure_curve(f: &Frame) -> ECurve {
    e_curve_from(f, &Counts::curve(f))
}

fn e_curve_from(f: &Frame, counts: &[Counts]) -> ECurve {
    let e: Vec<f64> = counts.iter().map(Counts::e_measure).collect();
    let (max, mean) = max_mean(&e);
    ECurve {
        e,
        max,
        mean,
        adaptive: Counts::at(f, f.adaptive_threshold()).e_measure(),
    }
}

/// Mean and sample standard deviation.
fn mean_std(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    if n == 0.0 {
        return (0.0, 0.0);
    }
    let m = v.clone().sum::<f64>() / n;
    let var = if n > 1.0 {
        v.map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// `2x̄ / (x̄² + 1 + σ_x)` over the values of one region.
fn object_score(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let (m, sd) = mean_std(v);
    2.0 * m / (m * m + 1.0 + sd)
}

/// SSIM-style agreement of one quadrant.
fn quadrant_score(f: &Frame, (y0, y1): (usize, usize), (x0, x1): (usize, usize)) -> f64 {
    let n = (y1 - y0) * (x1 - x0);
    if n == 0 {
        return 0.0;
    }
    let at = |y: usize, x: usize| (f.p[y * f.w + x], if f.g[y * f.w + x] { 1.0 } else { 0.0 });
    let cells = || (y0..y1).flat_map(move |y| (x0..x1).map(move |x| at(y, x)));
    let nf = n as f64;
    let (mx, my) = cells().fold((0.0, 0.0), |(a, b), (p, g)| (a + p, b + g));
    let (mx, my) = (mx / nf, my / nf);
    let dof = if n > 1 { nf - 1.0 } else { 1.0 };
    let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
    for (p, g) in cells() {
        sx += (p - mx) * (p - mx);
        sy += (g - my) * (g - my);
        sxy += (p - mx) * (g - my);
    }
    let (sx, sy, sxy) = (sx / dof, sy / dof, sxy / dof);
    let alpha = 4.0 * mx * my * sxy;
    let beta = (mx * mx + my * my) * (sx + sy);
    if alpha != 0.0 {
        ratio(alpha, beta)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Split point: rounded foreground centroid (ties to even) plus one, so the
/// top-left quadrant includes the centroid row and column.
fn centroid(f: &Frame) -> (usize, usize) {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
    for (i, _) in f.g.iter().enumerate().filter(|(_, &g)| g) {
        sy += (i / f.w) as f64;
        sx += (i % f.w) as f64;
        n += 1.0;
    }
    let (x, y) = if n == 0.0 {
        ((f.w as f64 / 2.0).round_ties_even(), (f.h as f64 / 2.0).round_ties_even())
    } else {
        ((sx / n).round_ties_even(), (sy / n).round_ties_even())
    };
    ((x as usize + 1).min(f.w), (y as usize + 1).min(f.h))
}

/// Structure measure: `α·S_o + (1−α)·S_r`, clamped at 0.
pub fn s_measure(f: &Frame) -> f64 {
    let n = f.len() as f64;
    let ng = f.foreground() as f64;
    if ng == 0.0 {
        return 1.0 - f.mean_p();
    }
    if ng == n {
        return f.mean_p();
    }
    let mu = ng / n;
    let pairs = || f.p.iter().zip(&f.g);
    let fg = object_score(pairs().filter(|(_, &g)| g).map(|(&p, _)| p));
    let bg = object_score(pairs().filter(|(_, &g)| !g).map(|(&p, _)| 1.0 - p));
    let s_o = mu * fg + (1.0 - mu) * bg;

    let (x, y) = centroid(f);
    let area = n;
    let w1 = (x * y) as f64 / area;
    let w2 = (y * (f.w - x)) as f64 / area;
    let w3 = ((f.h - y) * x) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;
    let s_r = w1 * quadrant_score(f, (0, y), (0, x))
        + w2 * quadrant_score(f, (0, y), (x, f.w))
        + w3 * quadrant_score(f, (y, f.h), (0, x))
        + w4 * quadrant_score(f, (y, f.h), (x, f.w));
    (ALPHA * s_o + (1.0 - ALPHA) * s_r).max(0.0)
}

/// Squared distance and row-major index of the nearest mask pixel, for
/// every pixel. Ties go to the lowest index. `None` when the mask is empty.
pub fn nearest_foreground(mask: &[bool], h: usize, w: usize) -> Option<Vec<(usize, usize)>> {
    if !mask.iter().any(|&m| m) {
        return None;
    }
    // per column: nearest foreground row above-or-at and below-or-at
    let mut col = vec![None::<usize>; h * w];
    for x in 0..w {
        let mut last = None;
        for y in 0..h {
            if mask[y * w + x] {
                last = Some(y);
            }
            col[y * w + x] = last;
        }
        let mut next = None;
        for y in (0..h).rev() {
            if mask[y * w + x] {
                next = Some(y);
            }
            // keep the closer one; on a tie the upper row has the lower index
            col[y * w + x] = match (col[y * w + x], next) {
                (Some(a), Some(b)) => Some(if y - a <= b - y { a } else { b }),
                (a, b) => a.or(b),
            };
        }
    }
    let mut out = vec![(0, 0); h * w];
    for y in 0..h {
        for x in 0..w {
            let candidate = |xx: usize| {
                col[y * w + xx].map_or((usize::MAX, usize::MAX), |r| {
                    (r.abs_diff(y).pow(2) + xx.abs_diff(x).pow(2), r * w + xx)
                })
            };
            let mut best = candidate(x);
            for step in 1..w {
                if step * step > best.0 {
                    break;
                }
                if let Some(xx) = x.checked_sub(step) {
                    best = best.min(candidate(xx));
                }
                if x + step < w {
                    best = best.min(candidate(x + step));
                }
            }
            out[y * w + x] = best;
        }
    }
    Some(out)
}

/// Normalized 7×7 Gaussian with σ = 5.
fn gaussian_kernel() -> [[f64; 7]; 7] {
    let mut k = [[0.0; 7]; 7];
    let mut sum = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 3.0, j as f64 - 3.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * 25.0)).exp();
            sum += *v;
        }
    }
    for v in k.iter_mut().flatten() {
        *v /= sum;
    }
    k
}

/// Weighted F-measure (β = 1). Zero when the mask is empty.
pub fn weighted_f(f: &Frame) -> f64 {
    let (h, w) = (f.h, f.w);
    let Some(nearest) = nearest_foreground(&f.g, h, w) else {
        return 0.0;
    };
    let gv = |i: usize| if f.g[i] { 1.0 } else { 0.0 };
    let e: Vec<f64> = (0..h * w).map(|i| (f.p[i] - gv(i)).abs()).collect();
    let et: Vec<f64> = (0..h * w).map(|i| if f.g[i] { e[i] } else { e[nearest[i].1] }).collect();
    let k = gaussian_kernel();
    let mut ea = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, row) in k.iter().enumerate() {
                let yy = y as i64 + i as i64 - 3;
                if yy < 0 || yy >= h as i64 {
                    continue;
                }
                for (j, kv) in row.iter().enumerate() {
                    let xx = x as i64 + j as i64 - 3;
                    if xx >= 0 && xx < w as i64 {
                        acc += kv * et[yy as usize * w + xx as usize];
                    }
                }
            }
            ea[y * w + x] = acc;
        }
    }
    let decay = 0.5f64.ln() / 5.0;
    let (mut fg_sum, mut bg_sum, mut nfg) = (0.0, 0.0, 0.0);
    for i in 0..h * w {
        if f.g[i] {
            fg_sum += if ea[i] < e[i] { ea[i] } else { e[i] };
            nfg += 1.0;
        } else {
            let d = (nearest[i].0 as f64).sqrt();
            bg_sum += e[i] * (2.0 - (decay * d).exp());
        }
    }
    let tp = nfg - fg_sum;
    let r = 1.0 - fg_sum / nfg;
    let p = ratio(tp, tp + bg_sum);
    ratio(2.0 * p * r, p + r)
}
