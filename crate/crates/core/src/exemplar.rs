//! Explanation products `x ⊙ GradCAM(x)` and the choice of one good and one
//! bad exemplar.
//!
//! Automatic selection takes the product of the highest-AR sample as the good
//! exemplar and of the lowest-AR sample as the bad one. Ties go to the
//! lexicographically lowest id, and the bad exemplar never reuses the good
//! sample.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetBundle, Sample};
use crate::error::{Error, Result};
use crate::explain::{cams_for_samples, Cam, CamClass};
use crate::imageio;
use crate::metrics::activation_recall;
use crate::model::Model;

/// Elementwise product of an `H×W×C` image with a cam broadcast over channels.
pub fn explanation_product(image: &Array3<f32>, cam: &Cam) -> Result<Array3<f32>> {
    let (h, w, _) = image.dim();
    if cam.dims() != (h, w) {
        return Err(Error::Shape(format!("cam {:?} vs image {:?}", cam.dims(), (h, w))));
    }
    Ok(Array3::from_shape_fn(image.dim(), |(y, x, c)| image[[y, x, c]] * cam.map[[y, x]]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Auto,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarMeta {
    pub good_id: String,
    pub bad_id: String,
    pub good_ar: Option<f64>,
    pub bad_ar: Option<f64>,
    /// Fingerprint of the model whose explanations were used.
    pub model_checkpoint: String,
    pub mode: SelectionMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarPair {
    /// Good exemplar product, `H×W×C`.
    pub good: Array3<f32>,
    /// Bad exemplar product, `H×W×C`.
    pub bad: Array3<f32>,
    pub meta: ExemplarMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArEntry {
    pub id: String,
    pub label: usize,
    pub ar: Option<f64>,
}

/// An automatic selection together with the AR of every candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub pair: ExemplarPair,
    pub table: Vec<ArEntry>,
}

/// Indices of the good (max AR) and bad (min AR) entries under the tie rule.
pub fn pick_extremes(scores: &[(&str, f64)]) -> Result<(usize, usize)> {
    if scores.len() < 2 {
        return Err(Error::invalid(
            "bundle",
            format!("{} scorable samples; at least two masked samples are required", scores.len()),
        ));
    }
    let better = |a: usize, b: usize, want_max: bool| {
        let (ia, sa) = scores[a];
        let (ib, sb) = scores[b];
        let by_score = if want_max { sa > sb } else { sa < sb };
        by_score || (sa == sb && ia < ib)
    };
    let mut good = 0;
    for i in 1..scores.len() {
        if better(i, good, true) {
            good = i;
        }
    }
    let mut bad = usize::from(good == 0);
    for i in 0..scores.len() {
        if i != good && better(i, bad, false) {
            bad = i;
        }
    }
    Ok((good, bad))
}

fn masked<'a>(bundle: &'a DatasetBundle) -> Vec<&'a Sample> {
    bundle
        .samples()
        .iter()
        .filter(|s| s.mask_area().is_some_and(|a| a > 0))
        .collect()
}

/// Scores every masked sample by ground-truth-class AR and builds the pair.
pub fn select_exemplars(model: &Model, bundle: &DatasetBundle) -> Result<Selection> {
    let pool = masked(bundle);
    if pool.len() < 2 {
        return Err(Error::invalid(
            "bundle",
            format!("{} masked samples; at least two are required", pool.len()),
        ));
    }
    let cams = cams_for_samples(model, &pool, CamClass::GroundTruth, 32)?;
    let mut scores = Vec::with_capacity(pool.len());
    for (cam, s) in cams.iter().zip(&pool) {
        let mask = s.mask.as_ref().expect("pool is masked");
        scores.push((s.id.as_str(), activation_recall(cam, mask)?));
    }
    let (g, b) = pick_extremes(&scores)?;
    let by_id: HashMap<&str, f64> = scores.iter().copied().collect();
    let table = bundle
        .samples()
        .iter()
        .map(|s| ArEntry {
            id: s.id.clone(),
            label: s.label,
            ar: by_id.get(s.id.as_str()).copied(),
        })
        .collect();
    let pair = ExemplarPair {
        good: explanation_product(&pool[g].image, &cams[g])?,
        bad: explanation_product(&pool[b].image, &cams[b])?,
        meta: ExemplarMeta {
            good_id: pool[g].id.clone(),
            bad_id: pool[b].id.clone(),
            good_ar: Some(scores[g].1),
            bad_ar: Some(scores[b].1),
            model_checkpoint: model.fingerprint()?,
            mode: SelectionMode::Auto,
        },
    };
    Ok(Selection { pair, table })
}

/// Builds a pair from two human-chosen samples. AR is recorded where a mask exists;
/// the pair is not required to satisfy `good_ar ≥ bad_ar`.
pub fn set_exemplars_manual(good_id: &str, bad_id: &str, model: &Model, bundle: &DatasetBundle) -> Result<ExemplarPair> {
    if good_id == bad_id {
        return Err(Error::invalid("bad_id", format!("good and bad exemplar are both '{good_id}'")));
    }
    let find = |id: &str| {
        bundle
            .get(id)
            .ok_or_else(|| Error::NotFound(format!("sample '{id}' in {} split", bundle.split())))
    };
    let chosen = [find(good_id)?, find(bad_id)?];
    let cams = cams_for_samples(model, &chosen, CamClass::GroundTruth, 2)?;
    let ar = |i: usize| -> Result<Option<f64>> {
        match &chosen[i].mask {
            Some(m) if m.iter().any(|&v| v != 0) => Ok(Some(activation_recall(&cams[i], m)?)),
            _ => Ok(None),
        }
    };
    Ok(ExemplarPair {
        good: explanation_product(&chosen[0].image, &cams[0])?,
        bad: explanation_product(&chosen[1].image, &cams[1])?,
        meta: ExemplarMeta {
            good_id: good_id.to_string(),
            bad_id: bad_id.to_string(),
            good_ar: ar(0)?,
            bad_ar: ar(1)?,
            model_checkpoint: model.fingerprint()?,
            mode: SelectionMode::Manual,
        },
    })
}

pub const PAIR_TENSORS: &str = "exemplars.safetensors";
pub const PAIR_META: &str = "exemplars.json";
pub const AR_TABLE: &str = "ar_table.json";

fn hwc_tensor(a: &Array3<f32>) -> Result<Tensor> {
    Ok(Tensor::from_vec(a.iter().copied().collect::<Vec<_>>(), a.dim(), &Device::Cpu)?)
}

fn hwc_array(t: &Tensor) -> Result<Array3<f32>> {
    let (h, w, c) = t.dims3()?;
    let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Array3::from_shape_vec((h, w, c), data).map_err(|e| Error::Shape(e.to_string()))
}

impl ExemplarPair {
    /// `(good, bad)` as `C×H×W` tensors.
    pub fn tensors(&self, dtype: DType, device: &Device) -> Result<(Tensor, Tensor)> {
        let conv = |a: &Array3<f32>| -> Result<Tensor> {
            Ok(hwc_tensor(a)?
                .permute((2, 0, 1))?
                .contiguous()?
                .to_dtype(dtype)?
                .to_device(device)?)
        };
        Ok((conv(&self.good)?, conv(&self.bad)?))
    }

    /// Writes lossless tensors, metadata and PNG previews.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tensors = HashMap::from([
            ("good".to_string(), hwc_tensor(&self.good)?),
            ("bad".to_string(), hwc_tensor(&self.bad)?),
        ]);
        candle_core::safetensors::save(&tensors, dir.join(PAIR_TENSORS))?;
        let meta = serde_json::to_string_pretty(&self.meta)?;
        imageio::write_bytes(&dir.join(PAIR_META), meta.as_bytes())?;
        imageio::write_rgb(&dir.join("good.png"), &self.good)?;
        imageio::write_rgb(&dir.join("bad.png"), &self.bad)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(PAIR_META);
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: ExemplarMeta = serde_json::from_str(&text)?;
        let tensors = candle_core::safetensors::load(dir.join(PAIR_TENSORS), &Device::Cpu)?;
        let get = |k: &str| {
            tensors
                .get(k)
                .ok_or_else(|| Error::NotFound(format!("tensor '{k}' in {}", dir.display())))
        };
        Ok(ExemplarPair {
            good: hwc_array(get("good")?)?,
            bad: hwc_array(get("bad")?)?,
            meta,
        })
    }
}

impl Selection {
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.pair.save(dir)?;
        let table = serde_json::to_string_pretty(&self.table)?;
        imageio::write_bytes(&dir.join(AR_TABLE), table.as_bytes())
    }
}
