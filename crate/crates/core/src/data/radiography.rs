//! Loader for the mask-annotated chest radiography directory layout.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{list_pngs, DatasetBundle, DatasetSplits, Sample, Split};
use crate::error::{Error, Result};
use crate::imageio;
use crate::resample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadiographyOptions {
    pub per_class_train: usize,
    /// Total over all classes; must divide evenly by K.
    pub val_total: usize,
    pub test_total: usize,
    pub target_size: usize,
    pub seed: u64,
    /// Restrict to (and require) these class directories. Empty = every subdirectory.
    pub class_names: Vec<String>,
    /// Fail on images without a mask instead of keeping them unannotated.
    pub require_masks: bool,
}

impl Default for RadiographyOptions {
    fn default() -> Self {
        RadiographyOptions {
            per_class_train: 800,
            val_total: 1200,
            test_total: 800,
            target_size: 224,
            seed: 0,
            class_names: Vec::new(),
            require_masks: true,
        }
    }
}

fn discover_classes(root: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.join("images").is_dir() {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                names.push(name.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

/// Builds class-balanced train/val/test bundles from
/// `root/<class>/images/<id>.png` with masks at `root/<class>/masks/<id>.png`.
///
/// Per class, ids are sorted, shuffled with a seeded generator and cut into
/// consecutive train, val and test runs.
pub fn load_radiography(root: &Path, opts: &RadiographyOptions) -> Result<DatasetSplits> {
    if opts.target_size == 0 {
        return Err(Error::invalid("target_size", "must be positive"));
    }
    if opts.per_class_train == 0 {
        return Err(Error::invalid("per_class_train", "must be positive"));
    }
    if !root.is_dir() {
        return Err(Error::NotFound(format!("dataset root {}", root.display())));
    }
    let class_names = if opts.class_names.is_empty() {
        discover_classes(root)?
    } else {
        opts.class_names.clone()
    };
    if class_names.is_empty() {
        return Err(Error::NotFound(format!(
            "no <class>/images directories under {}",
            root.display()
        )));
    }
    let k = class_names.len();
    for (field, total) in [("val_total", opts.val_total), ("test_total", opts.test_total)] {
        if total == 0 || total % k != 0 {
            return Err(Error::invalid(
                field,
                format!("{total} cannot be split evenly across {k} classes"),
            ));
        }
    }
    let per_val = opts.val_total / k;
    let per_test = opts.test_total / k;
    let needed = opts.per_class_train + per_val + per_test;

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (label, name) in class_names.iter().enumerate() {
        let class_dir = root.join(name);
        let images_dir = class_dir.join("images");
        if !images_dir.is_dir() {
            return Err(Error::NotFound(format!("class directory {}", images_dir.display())));
        }
        let mut files = list_pngs(&images_dir)?;
        if files.len() < needed {
            return Err(Error::invalid(
                "per_class_train",
                format!("class '{name}' has {} images, {needed} requested", files.len()),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(label as u64);
        files.shuffle(&mut rng);
        files.truncate(needed);

        for (i, (id, path)) in files.into_iter().enumerate() {
            let image = imageio::read_rgb(&path)?;
            let image = resample::resize_bilinear(&image, opts.target_size, opts.target_size);
            let mask_path = class_dir.join("masks").join(format!("{id}.png"));
            let mask = if mask_path.is_file() {
                let m = imageio::read_mask(&mask_path)?;
                Some(resample::resize_nearest(&m, opts.target_size, opts.target_size))
            } else if opts.require_masks {
                return Err(Error::NotFound(format!("mask for image '{id}' in class '{name}'")));
            } else {
                None
            };
            let sample = Sample {
                id,
                image,
                mask,
                label,
            };
            if i < opts.per_class_train {
                train.push(sample);
            } else if i < opts.per_class_train + per_val {
                val.push(sample);
            } else {
                test.push(sample);
            }
        }
    }
    for bucket in [&mut train, &mut val, &mut test] {
        bucket.sort_by(|a, b| a.label.cmp(&b.label).then_with(|| a.id.cmp(&b.id)));
    }
    Ok(DatasetSplits {
        train: DatasetBundle::new(train, class_names.clone(), Split::Train)?,
        val: DatasetBundle::new(val, class_names.clone(), Split::Val)?,
        test: DatasetBundle::new(test, class_names, Split::Test)?,
        test_clean: None,
    })
}
