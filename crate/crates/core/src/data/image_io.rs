//! PNG/JPEG decoding into `[C, H, W]` tensors and 8-bit map emission.

use std::path::Path;

use image::{GrayImage, Luma, RgbImage};

use crate::error::{io_err, shape_err, Error, Result};
use crate::tensor::{kernels, Tensor};

fn open(path: &Path) -> Result<image::DynamicImage> {
    let img = image::ImageReader::open(path)
        .map_err(io_err(path))?
        .with_guessed_format()
        .map_err(io_err(path))?
        .decode()
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            reason: "zero-sized image".into(),
        });
    }
    Ok(img)
}

pub fn rgb_to_tensor(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px.0[c] as f32 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data).expect("rgb shape")
}

/// Values are the correctly rounded `v/255` in `T`.
pub fn gray_to_tensor<T: crate::Scalar>(img: &GrayImage) -> Tensor<T> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| T::from_f64_lossy(p.0[0] as f64 / 255.0)).collect();
    Tensor::new(vec![1, h, w], data).expect("gray shape")
}

/// Decodes any supported image to RGB in `[0, 1]`, shape `[3, H, W]`.
pub fn load_rgb(path: &Path) -> Result<Tensor<f32>> {
    Ok(rgb_to_tensor(&open(path)?.to_rgb8()))
}

/// Decodes to 8-bit luminance, shape `[1, H, W]` with values `v/255`.
pub fn load_gray<T: crate::Scalar>(path: &Path) -> Result<Tensor<T>> {
    Ok(gray_to_tensor(&open(path)?.to_luma8()))
}

/// Decodes a ground-truth mask, binarized at 128.
pub fn load_mask(path: &Path) -> Result<Tensor<f32>> {
    let img = open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .pixels()
        .map(|p| if p.0[0] >= 128 { 1.0 } else { 0.0 })
        .collect();
    Tensor::new(vec![1, h, w], data)
}

/// Quantizes `v ∈ [0,1]` to `round(255·v)` after clamping.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn map_to_gray<T: crate::Scalar>(map: &Tensor<T>) -> Result<GrayImage> {
    let (h, w) = match map.shape() {
        [1, h, w] | [1, 1, h, w] => (*h, *w),
        other => return Err(shape_err("save_map", format!("expected [1,H,W], got {other:?}"))),
    };
    let mut img = GrayImage::new(w as u32, h as u32);
    for (i, v) in map.data().iter().enumerate() {
        img.put_pixel((i % w) as u32, (i / w) as u32, Luma([quantize(v.to_f64_lossy())]));
    }
    Ok(img)
}

pub fn save_gray(img: &GrayImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Writes a `[1, H, W]` map in `[0, 1]` as an 8-bit grayscale PNG.
pub fn save_map<T: crate::Scalar>(map: &Tensor<T>, path: &Path) -> Result<()> {
    save_gray(&map_to_gray(map)?, path)
}

/// Bilinear resize of a `[C, H, W]` tensor.
pub fn resize_chw<T: crate::Scalar>(t: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let shape = t.shape().to_vec();
    let [c, h, w] = shape[..] else {
        return Err(shape_err("resize", format!("expected [C,H,W], got {shape:?}")));
    };
    let x = t.clone().reshape(vec![1, c, h, w])?;
    kernels::resize_bilinear(&x, out_h, out_w)?.reshape(vec![c, out_h, out_w])
}

/// Nearest-neighbour resize of a `[C, H, W]` tensor (half-pixel centers).
pub fn resize_nearest_chw<T: crate::Scalar>(t: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let shape = t.shape().to_vec();
    let [c, h, w] = shape[..] else {
        return Err(shape_err("resize", format!("expected [C,H,W], got {shape:?}")));
    };
    if (h, w) == (out_h, out_w) {
        return Ok(t.clone());
    }
    let src = |o: usize, n_in: usize, n_out: usize| (((o as f64 + 0.5) * n_in as f64 / n_out as f64) as usize).min(n_in - 1);
    let mut data = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        for oy in 0..out_h {
            let y = src(oy, h, out_h);
            for ox in 0..out_w {
                data.push(t.data()[(ch * h + y) * w + src(ox, w, out_w)]);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], data)
}
