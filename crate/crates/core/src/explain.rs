//! GradCAM saliency maps and their visual rendering.
//!
//! For a target layer with activations `A^k` and class score `y^c` (the
//! pre-softmax logit), the channel weights are `α_k = mean_{i,j} ∂y^c/∂A^k_ij`
//! and the map is `ReLU(Σ_k α_k A^k)`, bilinearly upsampled to the input size
//! and divided by its maximum. A map whose maximum is zero stays all-zero.
//!
//! The weights are always computed on a detached copy of the activations, so a
//! map built with `keep_graph` carries gradients through `A^k` only.

use candle_core::{DType, Tensor, Var};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::data::{images_to_tensor, DatasetBundle, Sample};
use crate::error::{Error, Result};
use crate::imageio;
use crate::model::Model;
use crate::resample::bilinear_matrix;

/// Normalized saliency map at input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Cam {
    /// `H×W`, values in `[0,1]`.
    pub map: Array2<f32>,
    /// Maximum before normalization.
    pub raw_max: f32,
    pub source: String,
    pub class_idx: usize,
}

impl Cam {
    /// Wraps an already-normalized map.
    pub fn from_map(map: Array2<f32>, source: impl Into<String>, class_idx: usize) -> Self {
        let raw_max = map.iter().copied().fold(0.0f32, f32::max);
        Cam {
            map,
            raw_max,
            source: source.into(),
            class_idx,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.map.dim()
    }
}

/// Which class a map explains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CamClass {
    /// The labelled class; used for training, exemplar selection and AR.
    #[default]
    GroundTruth,
    /// The arg-max prediction; used for visualization.
    Predicted,
}

/// How gradients flow through the channel weights when a map is differentiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlphaGradient {
    #[default]
    Detached,
    SecondOrder,
}

/// Batched GradCAM output as tensors.
#[derive(Debug, Clone)]
pub struct CamBatch {
    /// `N×H×W`, normalized.
    pub maps: Tensor,
    /// `N`.
    pub raw_max: Tensor,
    /// `N×K×1×1`, detached.
    pub alphas: Tensor,
}

fn check_classes(model: &Model, classes: &[usize]) -> Result<()> {
    let k = model.num_classes();
    if let Some(&c) = classes.iter().find(|&&c| c >= k) {
        return Err(Error::invalid("class_idx", format!("class {c} out of range for K = {k}")));
    }
    Ok(())
}

/// Channel weights `α` for each sample's class, from detached activations.
pub fn channel_weights(model: &Model, activations: &Tensor, classes: &[usize]) -> Result<Tensor> {
    check_classes(model, classes)?;
    let n = activations.dim(0)?;
    if classes.len() != n {
        return Err(Error::Shape(format!("{} classes for {n} samples", classes.len())));
    }
    let leaf = Var::from_tensor(&activations.detach().copy()?)?;
    let logits = model.head_logits(leaf.as_tensor(), false)?;
    let idx: Vec<u32> = classes.iter().map(|&c| c as u32).collect();
    let idx = Tensor::from_vec(idx, (n, 1), activations.device())?;
    // Samples are independent in eval mode, so d(Σ_i y_i)/dA_i = dy_i/dA_i.
    let score = logits.gather(&idx, 1)?.sum_all()?;
    let grads = score.backward()?;
    let g = grads
        .get(leaf.as_tensor())
        .ok_or_else(|| Error::Unsupported("target layer does not reach the class score".into()))?;
    Ok(g.mean_keepdim(3)?.mean_keepdim(2)?.detach())
}

/// `ReLU(Σ_k α_k A^k)`, upsampled to `height×width` and max-normalized.
/// Returns `(maps N×H×W, raw_max N)`.
pub fn cam_from_weights(activations: &Tensor, alphas: &Tensor, height: usize, width: usize) -> Result<(Tensor, Tensor)> {
    let dtype = activations.dtype();
    let device = activations.device();
    let coarse = activations.broadcast_mul(alphas)?.sum(1)?.relu()?;
    let (n, h, w) = coarse.dims3()?;
    let rows = Tensor::from_vec(bilinear_matrix(h, height), (height, h), device)?.to_dtype(dtype)?;
    let cols = Tensor::from_vec(bilinear_matrix(w, width), (width, w), device)?
        .to_dtype(dtype)?
        .t()?;
    let rows = rows.unsqueeze(0)?.broadcast_as((n, height, h))?.contiguous()?;
    let cols = cols.unsqueeze(0)?.broadcast_as((n, w, width))?.contiguous()?;
    let up = rows.matmul(&coarse.contiguous()?)?.matmul(&cols)?;
    let raw_max = up.flatten_from(1)?.max_keepdim(1)?;
    let positive = raw_max.gt(0.0)?;
    let denom = positive.where_cond(&raw_max, &raw_max.ones_like()?)?;
    let maps = up.broadcast_div(&denom.unsqueeze(2)?)?;
    Ok((maps, raw_max.squeeze(1)?))
}

/// GradCAM for a batch of `N×C×H×W` images in evaluation mode.
///
/// With `keep_graph` the maps stay attached to the trainable parameters.
pub fn gradcam_batch(
    model: &Model,
    images: &Tensor,
    classes: &[usize],
    keep_graph: bool,
    alpha_gradient: AlphaGradient,
) -> Result<CamBatch> {
    if alpha_gradient == AlphaGradient::SecondOrder {
        return Err(Error::Unsupported(
            "second-order gradients through the channel weights are not available in this backend".into(),
        ));
    }
    check_classes(model, classes)?;
    let (_, _, h, w) = images.dims4()?;
    let acts = model.features(images, false)?;
    let alphas = channel_weights(model, &acts, classes)?;
    let acts = if keep_graph { acts } else { acts.detach() };
    let (maps, raw_max) = cam_from_weights(&acts, &alphas, h, w)?;
    Ok(CamBatch { maps, raw_max, alphas })
}

fn to_cams(batch: &CamBatch, samples: &[&Sample], classes: &[usize]) -> Result<Vec<Cam>> {
    let maps = batch.maps.to_dtype(DType::F32)?.to_vec3::<f32>()?;
    let raw = batch.raw_max.to_dtype(DType::F32)?.to_vec1::<f32>()?;
    let mut out = Vec::with_capacity(maps.len());
    for (i, rows) in maps.into_iter().enumerate() {
        let h = rows.len();
        let w = rows.first().map_or(0, Vec::len);
        let flat: Vec<f32> = rows.into_iter().flatten().collect();
        out.push(Cam {
            map: Array2::from_shape_vec((h, w), flat).map_err(|e| Error::Shape(e.to_string()))?,
            raw_max: raw[i],
            source: samples[i].id.clone(),
            class_idx: classes[i],
        });
    }
    Ok(out)
}

/// GradCAM of a single `H×W×C` image for `class_idx`.
pub fn gradcam(model: &Model, sample: &Sample, class_idx: usize) -> Result<Cam> {
    let x = images_to_tensor(&[&sample.image], model.dtype(), model.device())?;
    let batch = gradcam_batch(model, &x, &[class_idx], false, AlphaGradient::Detached)?;
    Ok(to_cams(&batch, &[sample], &[class_idx])?.remove(0))
}

/// GradCAM of arbitrary samples, processed in chunks of `batch`.
pub fn cams_for_samples(model: &Model, samples: &[&Sample], class: CamClass, batch: usize) -> Result<Vec<Cam>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let images: Vec<&Array3<f32>> = chunk.iter().map(|s| &s.image).collect();
        let x = images_to_tensor(&images, model.dtype(), model.device())?;
        let classes = match class {
            CamClass::GroundTruth => chunk.iter().map(|s| s.label).collect(),
            CamClass::Predicted => model.predict_labels(&x, chunk.len())?,
        };
        let cams = gradcam_batch(model, &x, &classes, false, AlphaGradient::Detached)?;
        out.extend(to_cams(&cams, chunk, &classes)?);
    }
    Ok(out)
}

/// GradCAM for every sample of a bundle, in bundle order.
pub fn cams_for_bundle(model: &Model, bundle: &DatasetBundle, class: CamClass) -> Result<Vec<Cam>> {
    let refs: Vec<&Sample> = bundle.samples().iter().collect();
    cams_for_samples(model, &refs, class, 32)
}

/// Jet colormap; 0 maps to dark blue `(0, 0, 0.5)`, 1 to dark red.
pub fn jet(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    let ch = |centre: f32| (1.5 - (4.0 * v - centre).abs()).clamp(0.0, 1.0);
    [ch(3.0), ch(2.0), ch(1.0)]
}

/// Color-mapped cam as `H×W×3`.
pub fn colorize(cam: &Cam) -> Array3<f32> {
    let (h, w) = cam.dims();
    let mut out = Array3::zeros((h, w, 3));
    for ((y, x), &v) in cam.map.indexed_iter() {
        let c = jet(v);
        for k in 0..3 {
            out[[y, x, k]] = c[k];
        }
    }
    out
}

/// `(1 - alpha)·image + alpha·jet(cam)`, in `[0,1]`.
pub fn overlay(image: &Array3<f32>, cam: &Cam, alpha: f32) -> Result<Array3<f32>> {
    let (h, w, c) = image.dim();
    if cam.dims() != (h, w) {
        return Err(Error::Shape(format!("cam {:?} vs image {:?}", cam.dims(), (h, w))));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("alpha", "opacity must lie in [0, 1]"));
    }
    if c != 1 && c != 3 {
        return Err(Error::Shape(format!("cannot overlay a {c}-channel image")));
    }
    let colors = colorize(cam);
    let mut out = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            for k in 0..3 {
                let base = image[[y, x, if c == 1 { 0 } else { k }]];
                out[[y, x, k]] = ((1.0 - alpha) * base + alpha * colors[[y, x, k]]).clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

/// Opacity used by every rendered overlay.
pub const OVERLAY_ALPHA: f32 = 0.4;

pub fn overlay_png(image: &Array3<f32>, cam: &Cam) -> Result<Vec<u8>> {
    imageio::encode_rgb(&overlay(image, cam, OVERLAY_ALPHA)?)
}

pub fn cam_png(cam: &Cam) -> Result<Vec<u8>> {
    imageio::encode_rgb(&colorize(cam))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam(values: Vec<f32>, h: usize, w: usize) -> Cam {
        Cam::from_map(Array2::from_shape_vec((h, w), values).unwrap(), "s", 0)
    }

    #[test]
    fn overlay_endpoints() {
        let img = Array3::from_shape_fn((2, 3, 3), |(y, x, c)| (y + x + c) as f32 / 8.0);
        let c = cam(vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0], 2, 3);
        assert_eq!(overlay(&img, &c, 0.0).unwrap(), img);
        assert_eq!(overlay(&img, &c, 1.0).unwrap(), colorize(&c));
    }

    #[test]
    fn zero_cam_blends_with_dark_blue() {
        let img = Array3::from_elem((2, 2, 3), 0.5f32);
        let c = cam(vec![0.0; 4], 2, 2);
        let out = overlay(&img, &c, 0.5).unwrap();
        for px in out.outer_iter().flat_map(|r| r.outer_iter().map(|p| p.to_vec()).collect::<Vec<_>>()) {
            assert_eq!(px, vec![0.25, 0.25, 0.5]);
        }
    }

    #[test]
    fn overlay_rejects_mismatch() {
        let img = Array3::zeros((2, 2, 3));
        assert!(overlay(&img, &cam(vec![0.0; 6], 2, 3), 0.5).is_err());
        assert!(overlay(&img, &cam(vec![0.0; 4], 2, 2), 1.5).is_err());
    }

    #[test]
    fn jet_endpoints() {
        assert_eq!(jet(0.0), [0.0, 0.0, 0.5]);
        assert_eq!(jet(1.0), [0.5, 0.0, 0.0]);
        assert_eq!(jet(0.5), [0.5, 1.0, 0.5]);
    }
}
