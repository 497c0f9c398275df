//! Training objectives.
//!
//! The combined objective is `L = L_CE + w·L_expl + λ·Σ|θ|`, where `L_expl`
//! is either the triplet explanation loss
//!
//! ```text
//! L_expl = Σ_i max(d(p_i, good) − d(p_i, bad) + margin, 0)
//! ```
//!
//! over explanation products `p_i = x_i ⊙ cam_i`, or the mask-penalty
//! baseline `Σ_i Σ(cam_i ⊙ M_i)`. Both are summed over the batch, not
//! averaged, so the margin keeps its meaning at any batch size.

use candle_core::{DType, Tensor, Var, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    /// Plain Euclidean distance between flattened tensors.
    RawEuclidean,
    /// Euclidean distance divided by √(element count).
    #[default]
    Rms,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RegularizationMode {
    /// `λ·Σ|θ|` added to the loss.
    #[default]
    L1,
    /// Decoupled weight decay applied by the optimizer; contributes 0 to the loss.
    Decoupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub margin: f64,
    pub expl_weight: f64,
    pub weight_decay: f64,
    pub distance_mode: DistanceMode,
    pub regularization: RegularizationMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 1.0,
            expl_weight: 1.0,
            weight_decay: 0.0,
            distance_mode: DistanceMode::Rms,
            regularization: RegularizationMode::L1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::invalid("margin", "must be positive"));
        }
        if !(self.expl_weight >= 0.0) {
            return Err(Error::invalid("expl_weight", "must be non-negative"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay", "must be non-negative"));
        }
        Ok(())
    }
}

/// Per-step loss components; `total = cross_entropy + w·explanation + regularization`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cross_entropy: f64,
    pub explanation: f64,
    pub regularization: f64,
}

impl LossBreakdown {
    /// Sample-weighted running mean helper.
    pub fn accumulate(&mut self, other: &LossBreakdown, weight: f64) {
        self.total += other.total * weight;
        self.cross_entropy += other.cross_entropy * weight;
        self.explanation += other.explanation * weight;
        self.regularization += other.regularization * weight;
    }

    pub fn scaled(&self, factor: f64) -> LossBreakdown {
        LossBreakdown {
            total: self.total * factor,
            cross_entropy: self.cross_entropy * factor,
            explanation: self.explanation * factor,
            regularization: self.regularization * factor,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.total, self.cross_entropy, self.explanation, self.regularization]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Triplet loss value together with per-sample distances.
#[derive(Debug, Clone)]
pub struct TripletOutput {
    pub loss: Tensor,
    pub d_good: Tensor,
    pub d_bad: Tensor,
}

// Keeps the square-root derivative finite when a product equals an exemplar.
const DIST_EPS: f64 = 1e-12;

fn distances(products: &Tensor, exemplar: &Tensor, mode: DistanceMode) -> Result<Tensor> {
    let n = products.dim(0)?;
    let flat = products.reshape((n, ()))?;
    let target = exemplar.flatten_all()?.unsqueeze(0)?;
    let ssq = flat.broadcast_sub(&target)?.sqr()?.sum(1)?;
    let d = (ssq + DIST_EPS)?.sqrt()?;
    Ok(match mode {
        DistanceMode::RawEuclidean => d,
        DistanceMode::Rms => (d / (flat.dim(1)? as f64).sqrt())?,
    })
}

/// `Σ_i max(d_xg,i − d_xb,i + margin, 0)` for a batch of products `N×…`
/// against exemplars shaped like one product.
pub fn triplet_explanation_loss(products: &Tensor, good: &Tensor, bad: &Tensor, config: &LossConfig) -> Result<TripletOutput> {
    let sample_dims = &products.dims()[1..];
    if good.dims() != sample_dims || bad.dims() != sample_dims {
        return Err(Error::Shape(format!(
            "products {:?} vs exemplars {:?} / {:?}",
            products.dims(),
            good.dims(),
            bad.dims()
        )));
    }
    let d_good = distances(products, good, config.distance_mode)?;
    let d_bad = distances(products, bad, config.distance_mode)?;
    let loss = ((&d_good - &d_bad)? + config.margin)?.relu()?.sum_all()?;
    Ok(TripletOutput { loss, d_good, d_bad })
}

/// `Σ_i Σ(cam_i ⊙ M_i)` where `M` marks regions to avoid.
pub fn mask_penalty_loss(cams: &Tensor, inverse_masks: &Tensor) -> Result<Tensor> {
    if cams.dims() != inverse_masks.dims() {
        return Err(Error::Shape(format!("cams {:?} vs masks {:?}", cams.dims(), inverse_masks.dims())));
    }
    Ok(cams.mul(&inverse_masks.to_dtype(cams.dtype())?)?.sum_all()?)
}

/// Model outputs fed to the cross-entropy term.
#[derive(Debug, Clone, Copy)]
pub enum Scores<'a> {
    Logits(&'a Tensor),
    Probabilities(&'a Tensor),
}

/// Mean categorical cross-entropy over the batch.
pub fn cross_entropy(scores: Scores<'_>, labels: &[usize]) -> Result<Tensor> {
    let t = match scores {
        Scores::Logits(t) | Scores::Probabilities(t) => t,
    };
    let (n, k) = t.dims2()?;
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid("label", format!("label {bad} out of range for K = {k}")));
    }
    let log_probs = match scores {
        Scores::Logits(t) => candle_nn::ops::log_softmax(t, D::Minus1)?,
        Scores::Probabilities(t) => t.clamp(1e-12, 1.0)?.log()?,
    };
    let idx: Vec<u32> = labels.iter().map(|&l| l as u32).collect();
    let idx = Tensor::from_vec(idx, (n, 1), t.device())?;
    Ok(log_probs.gather(&idx, 1)?.neg()?.mean_all()?)
}

/// `λ·Σ|θ|` over the given parameters (0 when decoupled or λ = 0).
pub fn regularization(params: &[Var], config: &LossConfig, dtype: DType) -> Result<Option<Tensor>> {
    if config.weight_decay == 0.0 || config.regularization == RegularizationMode::Decoupled || params.is_empty() {
        return Ok(None);
    }
    let mut acc: Option<Tensor> = None;
    for p in params {
        let s = p.as_tensor().abs()?.sum_all()?.to_dtype(dtype)?;
        acc = Some(match acc {
            None => s,
            Some(a) => (a + s)?,
        });
    }
    Ok(Some((acc.expect("non-empty params") * config.weight_decay)?))
}

#[derive(Debug, Clone)]
pub struct CombinedLoss {
    pub total: Tensor,
    pub breakdown: LossBreakdown,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// `L_CE + expl_weight·L_expl + λ·Σ|θ|`, keeping the graph for backpropagation.
pub fn combined_loss(
    scores: Scores<'_>,
    labels: &[usize],
    expl_loss: Option<&Tensor>,
    config: &LossConfig,
    params: &[Var],
) -> Result<CombinedLoss> {
    let ce = cross_entropy(scores, labels)?;
    let dtype = ce.dtype();
    let mut total = ce.clone();
    let mut explanation = 0.0;
    if let Some(e) = expl_loss {
        explanation = scalar(e)?;
        if config.expl_weight != 0.0 {
            total = (total + (e.to_dtype(dtype)? * config.expl_weight)?)?;
        }
    }
    let mut reg = 0.0;
    if let Some(r) = regularization(params, config, dtype)? {
        reg = scalar(&r)?;
        total = (total + r)?;
    }
    let breakdown = LossBreakdown {
        total: scalar(&total)?,
        cross_entropy: scalar(&ce)?,
        explanation,
        regularization: reg,
    };
    Ok(CombinedLoss { total, breakdown })
}
