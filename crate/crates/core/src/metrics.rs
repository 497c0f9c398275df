//! Activation Recall and classification metrics.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetBundle, Sample};
use crate::error::{Error, Result};
use crate::explain::{cams_for_samples, Cam, CamClass};
use crate::model::Model;

/// Share of the relevant region covered by the saliency map:
/// `Σ(cam ⊙ M) / Σ M`.
pub fn activation_recall(cam: &Cam, mask: &Array2<u8>) -> Result<f64> {
    if cam.dims() != mask.dim() {
        return Err(Error::Shape(format!("cam {:?} vs mask {:?}", cam.dims(), mask.dim())));
    }
    let mut covered = 0.0f64;
    let mut area = 0u64;
    for (&c, &m) in cam.map.iter().zip(mask.iter()) {
        if m != 0 {
            covered += f64::from(c);
            area += 1;
        }
    }
    if area == 0 {
        return Err(Error::invalid("mask", format!("empty mask for '{}'", cam.source)));
    }
    Ok(covered / area as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    /// Recall of each class.
    pub per_class_accuracy: Vec<f64>,
    /// `confusion[truth][prediction]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Accuracy plus macro-averaged precision and recall. Classes that are never
/// predicted (or never present) contribute 0 to the respective average.
pub fn classification_metrics(predictions: &[usize], truths: &[usize], k: usize) -> Result<ClassificationMetrics> {
    if predictions.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::invalid("truths", "no labels to score"));
    }
    if k == 0 {
        return Err(Error::invalid("k", "need at least one class"));
    }
    if let Some(bad) = predictions.iter().chain(truths).find(|&&l| l >= k) {
        return Err(Error::invalid("label", format!("label {bad} out of range for K = {k}")));
    }
    let mut confusion = vec![vec![0usize; k]; k];
    for (&p, &t) in predictions.iter().zip(truths) {
        confusion[t][p] += 1;
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let recall: Vec<f64> = (0..k)
        .map(|c| ratio(confusion[c][c], confusion[c].iter().sum()))
        .collect();
    let precision: Vec<f64> = (0..k)
        .map(|c| ratio(confusion[c][c], (0..k).map(|t| confusion[t][c]).sum()))
        .collect();
    Ok(ClassificationMetrics {
        accuracy: ratio(correct, truths.len()),
        macro_precision: precision.iter().sum::<f64>() / k as f64,
        macro_recall: recall.iter().sum::<f64>() / k as f64,
        per_class_accuracy: recall,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArSummary {
    pub mean: f64,
    pub scored: usize,
    /// Samples without a mask (or with an empty one).
    pub skipped_no_mask: usize,
    pub per_sample: Vec<(String, f64)>,
}

/// Mean AR over the samples that carry a non-empty mask. `cams[i]` must
/// explain `samples[i]`.
pub fn summarize_ar(cams: &[Cam], samples: &[&Sample]) -> Result<ArSummary> {
    if cams.len() != samples.len() {
        return Err(Error::Shape(format!("{} cams for {} samples", cams.len(), samples.len())));
    }
    let mut per_sample = Vec::new();
    let mut skipped = 0;
    for (cam, sample) in cams.iter().zip(samples) {
        match &sample.mask {
            Some(mask) if mask.iter().any(|&v| v != 0) => {
                per_sample.push((sample.id.clone(), activation_recall(cam, mask)?));
            }
            _ => skipped += 1,
        }
    }
    if per_sample.is_empty() {
        return Err(Error::invalid("mask", "no sample carries a non-empty mask"));
    }
    let mean = per_sample.iter().map(|(_, v)| v).sum::<f64>() / per_sample.len() as f64;
    Ok(ArSummary {
        mean,
        scored: per_sample.len(),
        skipped_no_mask: skipped,
        per_sample,
    })
}

/// Mean ground-truth-class AR of a model over a bundle.
pub fn mean_activation_recall(model: &Model, bundle: &DatasetBundle) -> Result<ArSummary> {
    let masked: Vec<&Sample> = bundle
        .samples()
        .iter()
        .filter(|s| s.mask_area().is_some_and(|a| a > 0))
        .collect();
    if masked.is_empty() {
        return Err(Error::invalid("mask", "no sample carries a non-empty mask"));
    }
    let cams = cams_for_samples(model, &masked, CamClass::GroundTruth, 32)?;
    let mut summary = summarize_ar(&cams, &masked)?;
    summary.skipped_no_mask = bundle.len() - masked.len();
    Ok(summary)
}

/// Classification and explanation quality of one checkpoint on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub checkpoint: String,
    pub n: usize,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub per_class_accuracy: Vec<f64>,
    pub mean_ar: Option<f64>,
    pub skipped_no_mask: usize,
}
