//! Object-level gradient labels (Canny edges masked by the object) and the
//! morphological boundary labels used by the boundary-supervision ablation.

use std::collections::VecDeque;
use std::path::Path;

use crate::data::{self, image_io, Sample, BOUND_SUFFIX, GRAD_SUFFIX};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Canny settings. Thresholds are fractions of the largest gradient
/// magnitude in the image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CannyParams {
    pub gaussian_sigma: f64,
    pub gaussian_kernel: usize,
    pub low_ratio: f64,
    pub high_ratio: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            gaussian_sigma: 1.0,
            gaussian_kernel: 5,
            low_ratio: 0.10,
            high_ratio: 0.20,
        }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.low_ratio && self.low_ratio < self.high_ratio && self.high_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "canny thresholds need 0 < low ({}) < high ({}) <= 1",
                self.low_ratio, self.high_ratio
            )));
        }
        if self.gaussian_kernel < 3 || self.gaussian_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "gaussian kernel {} must be odd and >= 3",
                self.gaussian_kernel
            )));
        }
        if self.gaussian_sigma <= 0.0 {
            return Err(Error::Config("gaussian sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Single-channel working plane.
#[derive(Clone, Debug)]
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.v[y * self.w + x]
    }

    fn get_or_zero(&self, x: isize, y: isize) -> f64 {
        if x < 0 || y < 0 || x >= self.w as isize || y >= self.h as isize {
            0.0
        } else {
            self.v[y as usize * self.w + x as usize]
        }
    }
}

fn image_hw(image: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [c, h, w] | [1, c, h, w] => Ok((c, h, w)),
        _ => Err(shape_err("canny", format!("expected [C,H,W], got {:?}", image.shape()))),
    }
}

/// ITU-R 601 luma; single-channel input is used as is.
fn luma(image: &Tensor<f32>) -> Result<Plane> {
    let (c, h, w) = image_hw(image)?;
    let d = image.data();
    let hw = h * w;
    let v = match c {
        1 => d.iter().map(|&x| x as f64).collect(),
        3 => (0..hw)
            .map(|i| 0.299 * d[i] as f64 + 0.587 * d[hw + i] as f64 + 0.114 * d[2 * hw + i] as f64)
            .collect(),
        _ => return Err(shape_err("canny", format!("{c} channels"))),
    };
    Ok(Plane { w, h, v })
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let k: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

/// Separable Gaussian blur with replicated borders.
fn blur(p: &Plane, params: &CannyParams) -> Plane {
    let k = gaussian_kernel(params.gaussian_kernel, params.gaussian_sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = p.clone();
    for y in 0..p.h {
        for x in 0..p.w {
            tmp.v[y * p.w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * p.clamped(x as isize + i as isize - r, y as isize))
                .sum();
        }
    }
    let mut out = tmp.clone();
    for y in 0..p.h {
        for x in 0..p.w {
            out.v[y * p.w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp.clamped(x as isize, y as isize + i as isize - r))
                .sum();
        }
    }
    out
}

/// 3×3 Sobel responses with replicated borders.
fn sobel(p: &Plane) -> (Plane, Plane) {
    let mut gx = p.clone();
    let mut gy = p.clone();
    for y in 0..p.h as isize {
        for x in 0..p.w as isize {
            let a = |dx: isize, dy: isize| p.clamped(x + dx, y + dy);
            let i = y as usize * p.w + x as usize;
            gx.v[i] = (a(1, -1) + 2.0 * a(1, 0) + a(1, 1)) - (a(-1, -1) + 2.0 * a(-1, 0) + a(-1, 1));
            gy.v[i] = (a(-1, 1) + 2.0 * a(0, 1) + a(1, 1)) - (a(-1, -1) + 2.0 * a(0, -1) + a(1, -1));
        }
    }
    (gx, gy)
}

/// Unit step along the gradient for each of the four orientation buckets
/// (0°, 45°, 90°, 135°), in image coordinates with y pointing down.
const DIRECTIONS: [(isize, isize); 4] = [(1, 0), (1, 1), (0, 1), (-1, 1)];

pub(crate) fn orientation_bucket(gx: f64, gy: f64) -> usize {
    let mut deg = gy.atan2(gx).to_degrees();
    if deg < 0.0 {
        deg += 180.0;
    }
    match deg {
        d if !(22.5..157.5).contains(&d) => 0,
        d if d < 67.5 => 1,
        d if d < 112.5 => 2,
        _ => 3,
    }
}

/// Intermediate Canny products, exposed for tests and diagnostics.
#[derive(Clone, Debug)]
pub struct CannyTrace {
    pub width: usize,
    pub height: usize,
    pub magnitude: Vec<f64>,
    pub bucket: Vec<usize>,
    /// Magnitude after non-maximum suppression (zero where suppressed).
    pub thinned: Vec<f64>,
    pub edges: Vec<bool>,
}

pub fn canny_trace(image: &Tensor<f32>, params: &CannyParams) -> Result<CannyTrace> {
    params.validate()?;
    let gray = luma(image)?;
    let (w, h) = (gray.w, gray.h);
    let blurred = blur(&gray, params);
    let (gx, gy) = sobel(&blurred);
    let magnitude: Vec<f64> = gx.v.iter().zip(&gy.v).map(|(a, b)| a.hypot(*b)).collect();
    let bucket: Vec<usize> = gx.v.iter().zip(&gy.v).map(|(a, b)| orientation_bucket(*a, *b)).collect();
    let mag = Plane { w, h, v: magnitude.clone() };

    // A pixel survives if it is strictly above its neighbour against the
    // gradient and not below the one along it; a two-pixel plateau keeps
    // exactly one pixel.
    let mut thinned = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = magnitude[i];
            if m <= 0.0 {
                continue;
            }
            let (dx, dy) = DIRECTIONS[bucket[i]];
            let before = mag.get_or_zero(x as isize - dx, y as isize - dy);
            let after = mag.get_or_zero(x as isize + dx, y as isize + dy);
            if m > before && m >= after {
                thinned[i] = m;
            }
        }
    }

    let max = magnitude.iter().copied().fold(0.0, f64::max);
    let mut edges = vec![false; w * h];
    if max > 0.0 {
        let (low, high) = (params.low_ratio * max, params.high_ratio * max);
        let mut queue: VecDeque<usize> = VecDeque::new();
        for (i, &t) in thinned.iter().enumerate() {
            if t >= high {
                edges[i] = true;
                queue.push_back(i);
            }
        }
        while let Some(i) = queue.pop_front() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if !edges[j] && thinned[j] >= low {
                        edges[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    Ok(CannyTrace {
        width: w,
        height: h,
        magnitude,
        bucket,
        thinned,
        edges,
    })
}

fn bool_map(v: &[bool], h: usize, w: usize) -> Tensor<f32> {
    Tensor::new(vec![1, h, w], v.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).expect("label shape")
}

/// Binary Canny edge map `[1, H, W]` of an RGB image in `[0, 1]`.
pub fn canny(image: &Tensor<f32>, params: &CannyParams) -> Result<Tensor<f32>> {
    let t = canny_trace(image, params)?;
    Ok(bool_map(&t.edges, t.height, t.width))
}

fn mask_hw(mask: &Tensor<f32>) -> Result<(usize, usize)> {
    match *mask.shape() {
        [1, h, w] | [1, 1, h, w] => Ok((h, w)),
        _ => Err(shape_err("mask", format!("expected [1,H,W], got {:?}", mask.shape()))),
    }
}

/// Canny edges restricted to the object: `canny(image) ⊙ mask`.
pub fn object_gradient_label(image: &Tensor<f32>, mask: &Tensor<f32>, params: &CannyParams) -> Result<Tensor<f32>> {
    let (_, h, w) = image_hw(image)?;
    if mask_hw(mask)? != (h, w) {
        return Err(shape_err(
            "object_gradient_label",
            format!("image {h}x{w} vs mask {:?}", mask.shape()),
        ));
    }
    let edges = canny(image, params)?;
    let data = edges.data().iter().zip(mask.data()).map(|(e, m)| e * m).collect();
    Tensor::new(vec![1, h, w], data)
}

/// 3×3 max filter; outside the frame counts as background.
pub fn dilate3(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    window3(mask, h, w, false, |acc, v| acc || v)
}

/// 3×3 min filter; outside the frame counts as background, so the frame
/// border always erodes.
pub fn erode3(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    window3(mask, h, w, true, |acc, v| acc && v)
}

fn window3(mask: &[bool], h: usize, w: usize, init: bool, f: impl Fn(bool, bool) -> bool) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = init;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    let v = nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize && mask[ny as usize * w + nx as usize];
                    acc = f(acc, v);
                }
            }
            out[y as usize * w + x as usize] = acc;
        }
    }
    out
}

/// Morphological gradient `dilate3(mask) − erode3(mask)`.
pub fn boundary_label(mask: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (h, w) = mask_hw(mask)?;
    let m: Vec<bool> = mask.data().iter().map(|&v| v >= 0.5).collect();
    let d = dilate3(&m, h, w);
    let e = erode3(&m, h, w);
    let band: Vec<bool> = d.iter().zip(&e).map(|(&a, &b)| a && !b).collect();
    Ok(bool_map(&band, h, w))
}

/// Fills the sample's gradient and boundary labels, reusing cached
/// `_grad.png` / `_bound.png` files beside the mask when they match the
/// sample resolution and writing them otherwise.
pub fn attach_labels(sample: &mut Sample, params: &CannyParams, cache: bool) -> Result<()> {
    let (_, h, w) = image_hw(&sample.image)?;
    let grad_path = data::label_path(&sample.mask_path, GRAD_SUFFIX);
    let bound_path = data::label_path(&sample.mask_path, BOUND_SUFFIX);
    let cached = |p: &Path| -> Option<Tensor<f32>> {
        let t = image_io::load_mask(p).ok()?;
        (t.shape() == [1, h, w]).then_some(t)
    };
    let grad = match cache.then(|| cached(&grad_path)).flatten() {
        Some(t) => t,
        None => {
            let t = object_gradient_label(&sample.image, &sample.mask, params)?;
            if cache {
                image_io::save_map(&t, &grad_path)?;
            }
            t
        }
    };
    let bound = match cache.then(|| cached(&bound_path)).flatten() {
        Some(t) => t,
        None => {
            let t = boundary_label(&sample.mask)?;
            if cache {
                image_io::save_map(&t, &bound_path)?;
            }
            t
        }
    };
    sample.gradient_label = Some(grad);
    sample.boundary_label = Some(bound);
    Ok(())
}
