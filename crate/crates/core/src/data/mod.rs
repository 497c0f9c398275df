//! Samples, dataset bundles and their on-disk layout.
//!
//! A prepared dataset directory looks like
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/<split>/<class_name>/images/<id>.png
//! <dir>/<split>/<class_name>/masks/<id>.png      (optional per image)
//! ```
//!
//! where `<split>` is one of `train`, `val`, `test` and, for decoy data,
//! `test_clean`.

mod decoy;
mod radiography;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio;

pub use decoy::{generate_decoy, DecoySpec, ShapeKind};
pub use radiography::{load_radiography, RadiographyOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `H×W×C`, values in `[0,1]`.
    pub image: Array3<f32>,
    /// `H×W`, 1 marks the relevant region.
    pub mask: Option<Array2<u8>>,
    pub label: usize,
}

impl Sample {
    pub fn resolution(&self) -> (usize, usize, usize) {
        self.image.dim()
    }

    /// Number of relevant mask pixels, or `None` when unannotated.
    pub fn mask_area(&self) -> Option<usize> {
        self.mask
            .as_ref()
            .map(|m| m.iter().filter(|&&v| v != 0).count())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" | "test_clean" => Ok(Split::Test),
            other => Err(Error::invalid("split", format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    samples: Vec<Sample>,
    class_names: Vec<String>,
    split: Split,
}

impl DatasetBundle {
    /// Validates every bundle invariant: non-empty, unique ids, shared resolution,
    /// labels below K, images in `[0,1]`, binary masks matching the image size.
    pub fn new(samples: Vec<Sample>, class_names: Vec<String>, split: Split) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("samples", "bundle must contain at least one sample"));
        }
        if class_names.is_empty() {
            return Err(Error::invalid("class_names", "at least one class is required"));
        }
        let k = class_names.len();
        let res = samples[0].image.dim();
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::invalid("id", format!("duplicate sample id '{}'", s.id)));
            }
            if s.label >= k {
                return Err(Error::invalid(
                    "label",
                    format!("sample '{}' has label {} but K = {k}", s.id, s.label),
                ));
            }
            if s.image.dim() != res {
                return Err(Error::Shape(format!(
                    "sample '{}' is {:?}, expected {:?}",
                    s.id,
                    s.image.dim(),
                    res
                )));
            }
            if s.image.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid("image", format!("sample '{}' has values outside [0,1]", s.id)));
            }
            if let Some(mask) = &s.mask {
                if mask.dim() != (res.0, res.1) {
                    return Err(Error::Shape(format!(
                        "mask of '{}' is {:?}, image is {:?}",
                        s.id,
                        mask.dim(),
                        (res.0, res.1)
                    )));
                }
                if mask.iter().any(|&v| v > 1) {
                    return Err(Error::invalid("mask", format!("mask of '{}' is not binary", s.id)));
                }
            }
        }
        Ok(DatasetBundle {
            samples,
            class_names,
            split,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(H, W, C)` shared by every image.
    pub fn resolution(&self) -> (usize, usize, usize) {
        self.samples[0].image.dim()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Images as an `N×C×H×W` tensor.
    pub fn images_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let refs: Vec<&Array3<f32>> = self.samples.iter().map(|s| &s.image).collect();
        images_to_tensor(&refs, dtype, device)
    }

    /// Writes `<dir>/<class>/{images,masks}/<id>.png`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for s in &self.samples {
            let class_dir = dir.join(&self.class_names[s.label]);
            imageio::write_rgb(&class_dir.join("images").join(format!("{}.png", s.id)), &s.image)?;
            if let Some(mask) = &s.mask {
                imageio::write_mask(&class_dir.join("masks").join(format!("{}.png", s.id)), mask)?;
            }
        }
        Ok(())
    }

    /// Reads a split directory written by [`DatasetBundle::save`]. Samples are
    /// ordered by class, then by id.
    pub fn load(dir: &Path, class_names: &[String], split: Split) -> Result<Self> {
        let mut samples = Vec::new();
        for (label, name) in class_names.iter().enumerate() {
            let class_dir = dir.join(name);
            let images_dir = class_dir.join("images");
            if !images_dir.is_dir() {
                return Err(Error::NotFound(format!(
                    "class directory {} has no images/ folder",
                    class_dir.display()
                )));
            }
            for (id, path) in list_pngs(&images_dir)? {
                let image = imageio::read_rgb(&path)?;
                let mask_path = class_dir.join("masks").join(format!("{id}.png"));
                let mask = if mask_path.is_file() {
                    Some(imageio::read_mask(&mask_path)?)
                } else {
                    None
                };
                samples.push(Sample {
                    id,
                    image,
                    mask,
                    label,
                });
            }
        }
        DatasetBundle::new(samples, class_names.to_vec(), split)
    }
}

/// Lists `<stem, path>` of the PNG files in a directory, sorted by stem.
pub(crate) fn list_pngs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Stacks `H×W×C` images into an `N×C×H×W` tensor.
pub fn images_to_tensor(images: &[&Array3<f32>], dtype: DType, device: &Device) -> Result<Tensor> {
    let Some(first) = images.first() else {
        return Err(Error::invalid("images", "empty batch"));
    };
    let (h, w, c) = first.dim();
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for img in images {
        if img.dim() != (h, w, c) {
            return Err(Error::Shape(format!("batch mixes {:?} and {:?}", (h, w, c), img.dim())));
        }
        data.extend(img.iter().copied());
    }
    let t = Tensor::from_vec(data, (images.len(), h, w, c), device)?
        .permute((0, 3, 1, 2))?
        .contiguous()?
        .to_dtype(dtype)?;
    Ok(t)
}

/// Train/val/test bundles; decoy data also carries a patch-free copy of test.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: DatasetBundle,
    pub val: DatasetBundle,
    pub test: DatasetBundle,
    pub test_clean: Option<DatasetBundle>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SplitInfo {
    pub count: usize,
    pub per_class: Vec<usize>,
    pub with_mask: usize,
}

/// Metadata record stored next to a persisted dataset.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub source: String,
    pub class_names: Vec<String>,
    pub image_size: [usize; 2],
    pub channels: usize,
    pub seed: u64,
    pub splits: BTreeMap<String, SplitInfo>,
    /// Echo of the generation or preparation parameters.
    pub spec: serde_json::Value,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn split_info(bundle: &DatasetBundle) -> SplitInfo {
    SplitInfo {
        count: bundle.len(),
        per_class: bundle.class_counts(),
        with_mask: bundle.samples().iter().filter(|s| s.mask.is_some()).count(),
    }
}

impl DatasetSplits {
    pub fn class_names(&self) -> &[String] {
        self.train.class_names()
    }

    /// Named bundles in on-disk order.
    pub fn named(&self) -> Vec<(&'static str, &DatasetBundle)> {
        let mut out = vec![("train", &self.train), ("val", &self.val), ("test", &self.test)];
        if let Some(clean) = &self.test_clean {
            out.push(("test_clean", clean));
        }
        out
    }

    pub fn manifest(&self, source: &str, seed: u64, spec: serde_json::Value) -> Manifest {
        let (h, w, c) = self.train.resolution();
        Manifest {
            source: source.to_string(),
            class_names: self.class_names().to_vec(),
            image_size: [h, w],
            channels: c,
            seed,
            splits: self
                .named()
                .into_iter()
                .map(|(name, b)| (name.to_string(), split_info(b)))
                .collect(),
            spec,
        }
    }

    pub fn save(&self, dir: &Path, manifest: &Manifest) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, bundle) in self.named() {
            bundle.save(&dir.join(name))?;
        }
        let text = serde_json::to_string_pretty(manifest)?;
        imageio::write_bytes(&dir.join(MANIFEST_FILE), text.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<(Self, Manifest)> {
        let manifest = read_manifest(dir)?;
        let names = &manifest.class_names;
        let test_clean = if dir.join("test_clean").is_dir() {
            Some(DatasetBundle::load(&dir.join("test_clean"), names, Split::Test)?)
        } else {
            None
        };
        let splits = DatasetSplits {
            train: DatasetBundle::load(&dir.join("train"), names, Split::Train)?,
            val: DatasetBundle::load(&dir.join("val"), names, Split::Val)?,
            test: DatasetBundle::load(&dir.join("test"), names, Split::Test)?,
            test_clean,
        };
        Ok((splits, manifest))
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads a single named split (`train`, `val`, `test`, `test_clean`) of a persisted dataset.
pub fn load_split(dir: &Path, name: &str) -> Result<DatasetBundle> {
    let manifest = read_manifest(dir)?;
    let split: Split = name.parse()?;
    let split_dir = dir.join(name);
    if !split_dir.is_dir() {
        return Err(Error::NotFound(format!("split directory {}", split_dir.display())));
    }
    DatasetBundle::load(&split_dir, &manifest.class_names, split)
}
