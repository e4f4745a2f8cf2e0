//! Dataset ingestion: samples, the `Imgs/` + `GT/` layout, manifest files and
//! the synthetic camouflage generator.

pub mod image_io;
pub mod synth;

use std::path::{Path, PathBuf};

use crate::error::{io_err, Error, Result};
use crate::tensor::Tensor;

pub use image_io::{load_gray, load_mask, load_rgb, quantize, save_map};

/// Full-scale training resolution.
pub const FULL_RESOLUTION: usize = 352;
/// Desk-scale resolution used by the toy trainer.
pub const TOY_RESOLUTION: usize = 96;

pub const IMAGE_DIR: &str = "Imgs";
pub const MASK_DIR: &str = "GT";
pub const GRAD_SUFFIX: &str = "_grad.png";
pub const BOUND_SUFFIX: &str = "_bound.png";

/// An image, its binary mask and the derived supervision maps.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor<f32>,
    /// `[1, H, W]` with values in `{0, 1}`.
    pub mask: Tensor<f32>,
    pub gradient_label: Option<Tensor<f32>>,
    pub boundary_label: Option<Tensor<f32>>,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
}

pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Decodes an image/mask pair and resizes both to `target × target`
/// (bilinear for the image, nearest for the mask).
pub fn load_sample(image_path: &Path, mask_path: &Path, target: usize) -> Result<Sample> {
    let (is, ms) = (stem(image_path), stem(mask_path));
    if is != ms {
        return Err(Error::StemMismatch { image: is, mask: ms });
    }
    let image = load_rgb(image_path)?;
    let mask = load_mask(mask_path)?;
    let image = image_io::resize_chw(&image, target, target)?;
    let mask = image_io::resize_nearest_chw(&mask, target, target)?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
    Ok(Sample {
        id: is,
        image,
        mask,
        gradient_label: None,
        boundary_label: None,
        image_path: image_path.to_path_buf(),
        mask_path: mask_path.to_path_buf(),
    })
}

/// Where the cached gradient / boundary label for a mask lives.
pub fn label_path(mask_path: &Path, suffix: &str) -> PathBuf {
    let dir = mask_path.parent().unwrap_or(Path::new(""));
    dir.join(format!("{}{suffix}", stem(mask_path)))
}

fn is_label_file(name: &str) -> bool {
    name.ends_with(GRAD_SUFFIX) || name.ends_with(BOUND_SUFFIX)
}

/// Image/mask pairs of a dataset, ordered by stem.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub pairs: Vec<(PathBuf, PathBuf)>,
    pub resize: usize,
}

fn list_dir(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if path.is_file() && exts.contains(&ext.as_str()) && !is_label_file(&name) {
            out.push(path);
        }
    }
    Ok(out)
}

impl DatasetManifest {
    /// Pairs `root/Imgs/<stem>.{png,jpg,jpeg}` with `root/GT/<stem>.png`.
    pub fn from_dir(root: &Path, resize: usize) -> Result<Self> {
        let images = list_dir(&root.join(IMAGE_DIR), &["png", "jpg", "jpeg"])?;
        let gt_dir = root.join(MASK_DIR);
        let mut pairs = Vec::new();
        let mut missing = Vec::new();
        for img in images {
            let mask = gt_dir.join(format!("{}.png", stem(&img)));
            if mask.is_file() {
                pairs.push((img, mask));
            } else {
                missing.push(stem(&img));
            }
        }
        if !missing.is_empty() {
            missing.sort();
            return Err(Error::Dataset(format!("no GT mask for: {}", missing.join(", "))));
        }
        pairs.sort_by_key(|p| stem(&p.0));
        Ok(Self {
            root: root.to_path_buf(),
            pairs,
            resize,
        })
    }

    /// Reads `image_relpath<TAB>mask_relpath` lines relative to `root`.
    pub fn from_file(path: &Path, root: &Path, resize: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (img, mask) = line
                .split_once('\t')
                .ok_or_else(|| Error::Dataset(format!("{}:{}: expected two tab-separated paths", path.display(), n + 1)))?;
            let (img, mask) = (root.join(img), root.join(mask));
            for p in [&img, &mask] {
                if !p.is_file() {
                    return Err(Error::Dataset(format!("{} does not exist", p.display())));
                }
            }
            if stem(&img) != stem(&mask) {
                return Err(Error::StemMismatch {
                    image: stem(&img),
                    mask: stem(&mask),
                });
            }
            pairs.push((img, mask));
        }
        pairs.sort_by_key(|p| stem(&p.0));
        Ok(Self {
            root: root.to_path_buf(),
            pairs,
            resize,
        })
    }

    /// Writes the manifest with paths relative to `root`, LF line endings.
    pub fn write(&self, path: &Path) -> Result<()> {
        let rel = |p: &Path| p.strip_prefix(&self.root).unwrap_or(p).to_string_lossy().replace('\\', "/");
        let mut text = String::new();
        for (i, m) in &self.pairs {
            text.push_str(&format!("{}\t{}\n", rel(i), rel(m)));
        }
        std::fs::write(path, text).map_err(io_err(path))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn load(&self, index: usize) -> Result<Sample> {
        let (i, m) = &self.pairs[index];
        load_sample(i, m, self.resize)
    }
}
