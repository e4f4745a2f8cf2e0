//! Synthetic camouflage scenes.
//!
//! Background and object share one multi-octave value-noise texture and
//! palette. The object samples it at phase-shifted, rescaled coordinates with
//! perturbed contrast and brightness, so it blends in without being identical
//! to its surroundings.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image_io::{save_gray, save_rgb};
use super::{IMAGE_DIR, MASK_DIR};
use crate::error::{Error, Result};

pub const MIN_SIZE: usize = 32;
pub const MIN_AREA: f64 = 0.05;
pub const MAX_AREA: f64 = 0.50;
/// Object texture frequency relative to the background.
const OBJECT_SCALE: std::ops::Range<f64> = 1.7..2.3;
/// Object brightness offset magnitude; the sign is random.
const OBJECT_SHIFT: std::ops::Range<f64> = 0.25..0.35;

/// Periodic lattice of random values, bilinearly smoothed.
struct ValueNoise {
    cells: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(cells: usize, rng: &mut impl Rng) -> Self {
        Self {
            cells,
            lattice: (0..cells * cells).map(|_| rng.random::<f64>()).collect(),
        }
    }

    fn at(&self, ix: i64, iy: i64) -> f64 {
        let c = self.cells as i64;
        self.lattice[(iy.rem_euclid(c) * c + ix.rem_euclid(c)) as usize]
    }

    /// `u, v` in frame units (one frame = `cells` lattice cells).
    fn sample(&self, u: f64, v: f64) -> f64 {
        let (x, y) = (u * self.cells as f64, v * self.cells as f64);
        let (x0, y0) = (x.floor(), y.floor());
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (smooth(x - x0), smooth(y - y0));
        let (ix, iy) = (x0 as i64, y0 as i64);
        let top = self.at(ix, iy) * (1.0 - tx) + self.at(ix + 1, iy) * tx;
        let bot = self.at(ix, iy + 1) * (1.0 - tx) + self.at(ix + 1, iy + 1) * tx;
        top * (1.0 - ty) + bot * ty
    }
}

struct Texture {
    octaves: Vec<(ValueNoise, f64)>,
}

impl Texture {
    fn new(rng: &mut impl Rng) -> Self {
        let base = rng.random_range(3..=5);
        let octaves = (0..4)
            .map(|o| (ValueNoise::new(base << o, rng), 0.5f64.powi(o as i32)))
            .collect();
        Self { octaves }
    }

    /// Normalized fractal value in `[0, 1]`.
    fn sample(&self, u: f64, v: f64) -> f64 {
        let (mut acc, mut norm) = (0.0, 0.0);
        for (n, amp) in &self.octaves {
            acc += amp * n.sample(u, v);
            norm += amp;
        }
        acc / norm
    }
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (c, s) = (self.angle.cos(), self.angle.sin());
        let (u, v) = (dx * c + dy * s, -dx * s + dy * c);
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }
}

fn rasterize(ellipses: &[Ellipse], size: usize) -> Vec<bool> {
    let mut out = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            out[y * size + x] = ellipses.iter().any(|e| e.contains(fx, fy));
        }
    }
    out
}

fn object_mask(size: usize, rng: &mut impl Rng) -> Vec<bool> {
    let sz = size as f64;
    loop {
        let count = rng.random_range(1..=3);
        let ellipses: Vec<Ellipse> = (0..count)
            .map(|_| Ellipse {
                cx: rng.random_range(0.25..0.75) * sz,
                cy: rng.random_range(0.25..0.75) * sz,
                rx: rng.random_range(0.10..0.30) * sz,
                ry: rng.random_range(0.10..0.30) * sz,
                angle: rng.random_range(0.0..std::f64::consts::PI),
            })
            .collect();
        let mask = rasterize(&ellipses, size);
        let frac = mask.iter().filter(|&&m| m).count() as f64 / (size * size) as f64;
        if (MIN_AREA..=MAX_AREA).contains(&frac) {
            return mask;
        }
    }
}

/// One deterministic scene for `(seed, index)`.
pub fn synth_sample(seed: u64, index: u64, size: usize) -> Result<(RgbImage, GrayImage)> {
    if size < MIN_SIZE {
        return Err(Error::Config(format!("synthetic size {size} is below {MIN_SIZE}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);

    let texture = Texture::new(&mut rng);
    let palette: [[f64; 3]; 2] = [
        [rng.random_range(0.1..0.5), rng.random_range(0.1..0.5), rng.random_range(0.1..0.5)],
        [rng.random_range(0.5..0.9), rng.random_range(0.5..0.9), rng.random_range(0.5..0.9)],
    ];
    let phase = (rng.random_range(0.2..0.8), rng.random_range(0.2..0.8));
    let contrast = rng.random_range(0.45..0.75);
    let scale = rng.random_range(OBJECT_SCALE);
    let brightness = rng.random_range(OBJECT_SHIFT) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let mask = object_mask(size, &mut rng);

    let mut img = RgbImage::new(size as u32, size as u32);
    let mut gt = GrayImage::new(size as u32, size as u32);
    let sz = size as f64;
    for y in 0..size {
        for x in 0..size {
            let (u, v) = ((x as f64 + 0.5) / sz, (y as f64 + 0.5) / sz);
            let inside = mask[y * size + x];
            let t = if inside {
                let t = texture.sample(u * scale + phase.0 / 4.0, v * scale + phase.1 / 4.0);
                (0.5 + (t - 0.5) * contrast + brightness).clamp(0.0, 1.0)
            } else {
                texture.sample(u, v)
            };
            let px = std::array::from_fn(|c| super::quantize(palette[0][c] + t * (palette[1][c] - palette[0][c])));
            img.put_pixel(x as u32, y as u32, Rgb(px));
            gt.put_pixel(x as u32, y as u32, Luma([if inside { 255 } else { 0 }]));
        }
    }
    Ok((img, gt))
}

pub fn sample_id(index: u64) -> String {
    format!("synth_{index:05}")
}

/// Writes `n` scenes as `out_dir/Imgs/<id>.png` and `out_dir/GT/<id>.png`.
pub fn synth_generate(n: usize, size: usize, seed: u64, out_dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    use rayon::prelude::*;
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let (img, gt) = synth_sample(seed, i, size)?;
            let id = sample_id(i);
            let ip = out_dir.join(IMAGE_DIR).join(format!("{id}.png"));
            let mp = out_dir.join(MASK_DIR).join(format!("{id}.png"));
            save_rgb(&img, &ip)?;
            save_gray(&gt, &mp)?;
            Ok((ip, mp))
        })
        .collect()
}
