//! Base training, eXBL refinement and evaluation.
//!
//! Both procedures share one loop: Adam over the trainable partition,
//! a seeded shuffle per epoch, early stopping on validation loss with
//! best-epoch restoration, and a multiplicative learning-rate decay when the
//! validation loss plateaus.

use candle_core::{DType, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{images_to_tensor, DatasetBundle, Sample};
use crate::error::{Error, Result};
use crate::exemplar::{ExemplarMeta, ExemplarPair};
use crate::explain::{cam_from_weights, channel_weights, AlphaGradient, Cam};
use crate::loss::{
    combined_loss, mask_penalty_loss, triplet_explanation_loss, CombinedLoss, LossBreakdown, LossConfig,
    RegularizationMode, Scores,
};
use crate::metrics::{activation_recall, classification_metrics, mean_activation_recall, EvalReport};
use crate::model::{Model, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStopMetric {
    #[default]
    ValLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub early_stop_metric: EarlyStopMetric,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Learning rate multiplier applied after `lr_decay_patience` epochs without improvement.
    pub lr_decay_factor: f64,
    pub lr_decay_patience: usize,
    pub alpha_gradient: AlphaGradient,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::Adam,
            early_stop_metric: EarlyStopMetric::ValLoss,
            patience: 5,
            batch_size: 32,
            seed: 0,
            lr_decay_factor: 0.5,
            lr_decay_patience: 2,
            alpha_gradient: AlphaGradient::Detached,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Base training defaults (60 epochs).
    pub fn base() -> Self {
        TrainConfig::default()
    }

    /// Refinement defaults (100 epochs).
    pub fn refine() -> Self {
        TrainConfig {
            epochs: 100,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be positive"));
        }
        if self.patience > self.epochs {
            return Err(Error::invalid("patience", "must not exceed epochs"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::invalid("lr_decay_factor", "must be in (0, 1]"));
        }
        self.loss.validate()
    }
}

/// Tracks the best validation loss and decides when to stop.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Records epoch `epoch` (1-based). Returns whether it improved on the best so far.
    pub fn observe(&mut self, epoch: usize, value: f64) -> bool {
        if value < self.best {
            self.best = value;
            self.best_epoch = epoch;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.patience > 0 && self.since_best >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Multiplies the learning rate by `factor` after `patience` epochs without improvement.
#[derive(Debug, Clone)]
pub struct PlateauDecay {
    factor: f64,
    patience: usize,
    wait: usize,
}

impl PlateauDecay {
    pub fn new(factor: f64, patience: usize) -> Self {
        PlateauDecay { factor, patience, wait: 0 }
    }

    /// New learning rate after an epoch.
    pub fn step(&mut self, lr: f64, improved: bool) -> f64 {
        if improved || self.patience == 0 {
            self.wait = 0;
            return lr;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            self.wait = 0;
            lr * self.factor
        } else {
            lr
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Unrefined,
    Exbl,
    MaskPenalty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    EarlyStopped,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lce: f64,
    pub lexpl: f64,
    pub reg: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
    pub val_accuracy: f64,
    /// Mean AR of the validation cams, when they are computed and masks exist.
    pub val_mean_ar: Option<f64>,
}

/// Metadata of a trained model; the parameters live in the model itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub phase: Phase,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
    pub history: Vec<EpochRecord>,
    /// Parameter fingerprint after best-epoch restoration.
    pub fingerprint: String,
    /// Fingerprint of the checkpoint this one was refined from.
    pub parent: Option<String>,
    pub exemplars: Option<ExemplarMeta>,
    pub version: String,
    #[serde(skip)]
    pub steps: Vec<StepRecord>,
}

pub fn version_string() -> String {
    format!("{}-{}", env!("CARGO_PKG_VERSION"), env!("EXBL_GIT_DESCRIBE"))
}

/// Progress hooks; `should_stop` is polled at epoch boundaries.
pub trait TrainObserver {
    fn on_step(&mut self, _step: &StepRecord) {}
    fn on_epoch(&mut self, _epoch: &EpochRecord) {}
    fn should_stop(&self) -> bool {
        false
    }
}

pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

fn check_compatible(model: &Model, bundle: &DatasetBundle) -> Result<()> {
    let (h, w, c) = bundle.resolution();
    let cfg = model.config();
    if h != cfg.input_size || w != cfg.input_size || c != cfg.in_channels {
        return Err(Error::Shape(format!(
            "{} split is {h}×{w}×{c}, model expects {s}×{s}×{}",
            bundle.split(),
            cfg.in_channels,
            s = cfg.input_size,
        )));
    }
    if bundle.num_classes() != model.num_classes() {
        return Err(Error::Shape(format!(
            "{} split has {} classes, model has {}",
            bundle.split(),
            bundle.num_classes(),
            model.num_classes()
        )));
    }
    Ok(())
}

enum Explanation {
    None,
    Triplet { good: Tensor, bad: Tensor },
    MaskPenalty,
}

/// Explanation term of one batch.
#[derive(Clone, Copy)]
pub enum ExplanationTerm<'a> {
    None,
    /// Triplet loss against `C×H×W` exemplar products.
    Triplet { good: &'a Tensor, bad: &'a Tensor },
    /// Mask penalty against `N×H×W` regions to avoid.
    MaskPenalty { inverse_masks: &'a Tensor },
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub loss: CombinedLoss,
    pub logits: Tensor,
    /// Normalized cams, `N×H×W`, when an explanation term is active.
    pub maps: Option<Tensor>,
    /// Channel weights used for the cams, `N×K×1×1`.
    pub alphas: Option<Tensor>,
}

/// The training objective for a batch of `N×C×H×W` images.
///
/// Cams explain the ground-truth class and carry gradients through the
/// target activations only. `alphas` pins the channel weights; by default
/// they are computed from the current parameters and then held constant.
#[allow(clippy::too_many_arguments)]
pub fn batch_objective(
    model: &Model,
    images: &Tensor,
    labels: &[usize],
    term: ExplanationTerm<'_>,
    alphas: Option<&Tensor>,
    config: &LossConfig,
    params: &[Var],
    train: bool,
) -> Result<BatchOutput> {
    let (_, _, h, w) = images.dims4()?;
    let x = images.to_dtype(model.dtype())?;
    let acts = model.features(&x, train)?;
    let (expl, maps, alphas) = match term {
        ExplanationTerm::None => (None, None, None),
        term => {
            let alphas = match alphas {
                Some(a) => a.detach(),
                None => channel_weights(model, &acts, labels)?,
            };
            let (maps, _) = cam_from_weights(&acts, &alphas, h, w)?;
            let loss = match term {
                ExplanationTerm::Triplet { good, bad } => {
                    let products = x.broadcast_mul(&maps.unsqueeze(1)?)?;
                    triplet_explanation_loss(&products, good, bad, config)?.loss
                }
                ExplanationTerm::MaskPenalty { inverse_masks } => mask_penalty_loss(&maps, inverse_masks)?,
                ExplanationTerm::None => unreachable!("handled above"),
            };
            (Some(loss), Some(maps), Some(alphas))
        }
    };
    let logits = model.head_logits(&acts, train)?;
    let loss = combined_loss(Scores::Logits(&logits), labels, expl.as_ref(), config, params)?;
    Ok(BatchOutput {
        loss,
        logits,
        maps,
        alphas,
    })
}

struct Objective<'a> {
    model: &'a Model,
    config: &'a TrainConfig,
    explanation: Explanation,
    params: Vec<Var>,
}

impl Objective<'_> {
    fn batch(&self, samples: &[&Sample], train: bool) -> Result<BatchOutput> {
        let model = self.model;
        let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
        let x = images_to_tensor(&images, model.dtype(), model.device())?;
        let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
        let (_, _, h, w) = x.dims4()?;
        let inverse;
        let term = match &self.explanation {
            Explanation::None => ExplanationTerm::None,
            Explanation::Triplet { good, bad } => ExplanationTerm::Triplet { good, bad },
            Explanation::MaskPenalty => {
                inverse = inverse_masks(samples, h, w, model)?;
                ExplanationTerm::MaskPenalty { inverse_masks: &inverse }
            }
        };
        batch_objective(model, &x, &labels, term, None, &self.config.loss, &self.params, train)
    }
}

// Regions outside the relevance mask; maskless samples are not penalized.
fn inverse_masks(samples: &[&Sample], h: usize, w: usize, model: &Model) -> Result<Tensor> {
    let mut data = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        match &s.mask {
            Some(m) => data.extend(m.iter().map(|&v| if v == 0 { 1.0f32 } else { 0.0 })),
            None => data.extend(std::iter::repeat_n(0.0f32, h * w)),
        }
    }
    Ok(Tensor::from_vec(data, (samples.len(), h, w), model.device())?.to_dtype(model.dtype())?)
}

fn maps_ar(maps: &Tensor, samples: &[&Sample], out: &mut Vec<f64>) -> Result<()> {
    let maps = maps.to_dtype(DType::F32)?.to_vec3::<f32>()?;
    for (rows, s) in maps.into_iter().zip(samples) {
        let Some(mask) = s.mask.as_ref().filter(|m| m.iter().any(|&v| v != 0)) else {
            continue;
        };
        let (h, w) = mask.dim();
        let flat: Vec<f32> = rows.into_iter().flatten().collect();
        let map = ndarray::Array2::from_shape_vec((h, w), flat).map_err(|e| Error::Shape(e.to_string()))?;
        out.push(activation_recall(&Cam::from_map(map, s.id.clone(), s.label), mask)?);
    }
    Ok(())
}

fn identity_holds(b: &LossBreakdown, cfg: &LossConfig) -> bool {
    let expected = b.cross_entropy + cfg.expl_weight * b.explanation + b.regularization;
    (b.total - expected).abs() <= 1e-5 * b.total.abs().max(1.0)
}

fn non_finite(epoch: usize, step: usize, b: &LossBreakdown) -> Error {
    Error::NonFinite(format!(
        "epoch {epoch} step {step}: total {} (ce {}, expl {}, reg {}); lower the learning rate",
        b.total, b.cross_entropy, b.explanation, b.regularization
    ))
}

struct Evaluated {
    loss: LossBreakdown,
    accuracy: f64,
    mean_ar: Option<f64>,
}

fn validation_pass(objective: &Objective<'_>, val: &DatasetBundle) -> Result<Evaluated> {
    let refs: Vec<&Sample> = val.samples().iter().collect();
    let mut agg = LossBreakdown::default();
    let mut correct = 0usize;
    let mut ars = Vec::new();
    for chunk in refs.chunks(objective.config.batch_size) {
        let out = objective.batch(chunk, false)?;
        agg.accumulate(&out.loss.breakdown, chunk.len() as f64);
        let preds = out.logits.argmax(candle_core::D::Minus1)?.to_vec1::<u32>()?;
        correct += preds.iter().zip(chunk).filter(|(&p, s)| p as usize == s.label).count();
        if let Some(maps) = &out.maps {
            maps_ar(maps, chunk, &mut ars)?;
        }
    }
    let n = refs.len() as f64;
    Ok(Evaluated {
        loss: agg.scaled(1.0 / n),
        accuracy: correct as f64 / n,
        mean_ar: (!ars.is_empty()).then(|| ars.iter().sum::<f64>() / ars.len() as f64),
    })
}

struct LoopOutcome {
    best_epoch: usize,
    best_val_loss: f64,
    stop_reason: StopReason,
    history: Vec<EpochRecord>,
    steps: Vec<StepRecord>,
}

fn run_loop(
    objective: &Objective<'_>,
    train: &DatasetBundle,
    val: &DatasetBundle,
    observer: &mut dyn TrainObserver,
) -> Result<LoopOutcome> {
    let cfg = objective.config;
    let model = objective.model;
    model.reseed_dropout(cfg.seed);
    let weight_decay = match cfg.loss.regularization {
        RegularizationMode::Decoupled => cfg.loss.weight_decay,
        RegularizationMode::L1 => 0.0,
    };
    let mut lr = cfg.learning_rate;
    let mut opt = AdamW::new(
        objective.params.clone(),
        ParamsAdamW {
            lr,
            weight_decay,
            ..ParamsAdamW::default()
        },
    )?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut decay = PlateauDecay::new(cfg.lr_decay_factor, cfg.lr_decay_patience);
    let mut best = model.snapshot()?;
    let mut history = Vec::new();
    let mut steps = Vec::new();
    let mut stop_reason = StopReason::Completed;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        if observer.should_stop() {
            stop_reason = StopReason::Cancelled;
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut agg = LossBreakdown::default();
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train.samples()[i]).collect();
            let out = objective.batch(&batch, true)?;
            let b = out.loss.breakdown;
            if !b.is_finite() {
                return Err(non_finite(epoch, step + 1, &b));
            }
            debug_assert!(identity_holds(&b, &cfg.loss), "loss decomposition broken: {b:?}");
            opt.backward_step(&out.loss.total)?;
            agg.accumulate(&b, batch.len() as f64);
            let record = StepRecord {
                epoch,
                step: step + 1,
                lce: b.cross_entropy,
                lexpl: b.explanation,
                reg: b.regularization,
                total: b.total,
            };
            observer.on_step(&record);
            steps.push(record);
        }

        let v = validation_pass(objective, val)?;
        if !v.loss.is_finite() {
            return Err(non_finite(epoch, 0, &v.loss));
        }
        let record = EpochRecord {
            epoch,
            learning_rate: lr,
            train: agg.scaled(1.0 / train.len() as f64),
            val: v.loss,
            val_accuracy: v.accuracy,
            val_mean_ar: v.mean_ar,
        };
        tracing::info!(
            epoch,
            train_loss = record.train.total,
            val_loss = record.val.total,
            val_accuracy = record.val_accuracy,
            "epoch finished"
        );
        observer.on_epoch(&record);
        history.push(record);

        let improved = stopper.observe(epoch, v.loss.total);
        if improved {
            best = model.snapshot()?;
        }
        if stopper.should_stop() {
            stop_reason = StopReason::EarlyStopped;
            break;
        }
        let next = decay.step(lr, improved);
        if next != lr {
            lr = next;
            opt.set_learning_rate(lr);
        }
    }
    if stopper.best_epoch() > 0 {
        model.restore(&best)?;
    }
    Ok(LoopOutcome {
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best(),
        stop_reason,
        history,
        steps,
    })
}

fn finish(model: &Model, config: &TrainConfig, phase: Phase, out: LoopOutcome) -> Result<Checkpoint> {
    Ok(Checkpoint {
        phase,
        model: model.config().clone(),
        train: config.clone(),
        best_epoch: out.best_epoch,
        best_val_loss: out.best_val_loss,
        stop_reason: out.stop_reason,
        history: out.history,
        fingerprint: model.fingerprint()?,
        parent: None,
        exemplars: None,
        version: version_string(),
        steps: out.steps,
    })
}

/// Cross-entropy training of the unrefined model.
pub fn train_base(
    model: &Model,
    train: &DatasetBundle,
    val: &DatasetBundle,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<Checkpoint> {
    config.validate()?;
    check_compatible(model, train)?;
    check_compatible(model, val)?;
    let objective = Objective {
        model,
        config,
        explanation: Explanation::None,
        params: model.trainable_vars(),
    };
    let out = run_loop(&objective, train, val, observer)?;
    finish(model, config, Phase::Unrefined, out)
}

fn check_refinable(model: &Model, base: &Checkpoint, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    if config.alpha_gradient == AlphaGradient::SecondOrder {
        return Err(Error::Unsupported(
            "second-order gradients through the channel weights are not available in this backend".into(),
        ));
    }
    if base.phase != Phase::Unrefined {
        return Err(Error::invalid("checkpoint", "refinement starts from an unrefined checkpoint"));
    }
    let mut ours = model.config().clone();
    let mut theirs = base.model.clone();
    // The pretrained trunk only matters at construction time.
    ours.pretrained = None;
    theirs.pretrained = None;
    if ours != theirs {
        return Err(Error::invalid("checkpoint", "model configuration differs from the checkpoint"));
    }
    Ok(())
}

/// Refines an unrefined model with the triplet explanation loss against a fixed pair.
pub fn refine_exbl(
    model: &Model,
    base: &Checkpoint,
    pair: &ExemplarPair,
    train: &DatasetBundle,
    val: &DatasetBundle,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<Checkpoint> {
    check_refinable(model, base, config)?;
    check_compatible(model, train)?;
    check_compatible(model, val)?;
    let cfg = model.config();
    let expected = (cfg.input_size, cfg.input_size, cfg.in_channels);
    if pair.good.dim() != expected || pair.bad.dim() != expected {
        return Err(Error::Shape(format!(
            "exemplars are {:?} / {:?}, model input is {expected:?}",
            pair.good.dim(),
            pair.bad.dim()
        )));
    }
    if pair.meta.model_checkpoint != base.fingerprint {
        return Err(Error::invalid(
            "exemplars",
            format!(
                "pair was built from model {}, checkpoint is {}",
                pair.meta.model_checkpoint, base.fingerprint
            ),
        ));
    }
    let (good, bad) = pair.tensors(model.dtype(), model.device())?;
    let objective = Objective {
        model,
        config,
        explanation: Explanation::Triplet { good, bad },
        params: model.trainable_vars(),
    };
    let out = run_loop(&objective, train, val, observer)?;
    let mut ckpt = finish(model, config, Phase::Exbl, out)?;
    ckpt.parent = Some(base.fingerprint.clone());
    ckpt.exemplars = Some(pair.meta.clone());
    Ok(ckpt)
}

/// Refines with the mask-penalty baseline, which needs per-image masks.
pub fn refine_mask_penalty(
    model: &Model,
    base: &Checkpoint,
    train: &DatasetBundle,
    val: &DatasetBundle,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<Checkpoint> {
    check_refinable(model, base, config)?;
    check_compatible(model, train)?;
    check_compatible(model, val)?;
    let objective = Objective {
        model,
        config,
        explanation: Explanation::MaskPenalty,
        params: model.trainable_vars(),
    };
    let out = run_loop(&objective, train, val, observer)?;
    let mut ckpt = finish(model, config, Phase::MaskPenalty, out)?;
    ckpt.parent = Some(base.fingerprint.clone());
    Ok(ckpt)
}

/// Classification metrics plus mean AR (when the bundle has masks).
pub fn evaluate(model: &Model, bundle: &DatasetBundle) -> Result<EvalReport> {
    check_compatible(model, bundle)?;
    let refs: Vec<&Sample> = bundle.samples().iter().collect();
    let mut predictions = Vec::with_capacity(refs.len());
    for chunk in refs.chunks(32) {
        let images: Vec<_> = chunk.iter().map(|s| &s.image).collect();
        let x = images_to_tensor(&images, model.dtype(), model.device())?;
        predictions.extend(model.predict_labels(&x, chunk.len())?);
    }
    let m = classification_metrics(&predictions, &bundle.labels(), bundle.num_classes())?;
    let has_masks = bundle.samples().iter().any(|s| s.mask_area().is_some_and(|a| a > 0));
    let (mean_ar, skipped) = if has_masks {
        let s = mean_activation_recall(model, bundle)?;
        (Some(s.mean), s.skipped_no_mask)
    } else {
        (None, bundle.len())
    };
    Ok(EvalReport {
        split: bundle.split().to_string(),
        checkpoint: model.fingerprint()?,
        n: bundle.len(),
        accuracy: m.accuracy,
        macro_precision: m.macro_precision,
        macro_recall: m.macro_recall,
        per_class_accuracy: m.per_class_accuracy,
        mean_ar,
        skipped_no_mask: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stop_after_rise() {
        let mut es = EarlyStopping::new(1);
        assert!(es.observe(1, 0.5));
        assert!(!es.should_stop());
        assert!(!es.observe(2, 0.6));
        assert!(es.should_stop());
        assert_eq!(es.best_epoch(), 1);
    }

    #[test]
    fn early_stop_resets_on_improvement() {
        let mut es = EarlyStopping::new(2);
        for (e, v) in [(1, 1.0), (2, 1.1), (3, 0.9), (4, 0.95)] {
            es.observe(e, v);
            assert!(!es.should_stop());
        }
        es.observe(5, 0.95);
        assert!(es.should_stop());
        assert_eq!(es.best_epoch(), 3);
    }

    #[test]
    fn plateau_decay_halves_after_patience() {
        let mut d = PlateauDecay::new(0.5, 2);
        let lr = d.step(1e-3, true);
        let lr = d.step(lr, false);
        assert_eq!(lr, 1e-3);
        let lr = d.step(lr, false);
        assert_eq!(lr, 5e-4);
        let lr = d.step(lr, false);
        assert_eq!(lr, 5e-4);
    }

    #[test]
    fn config_validation_names_fields() {
        let cases = [
            (TrainConfig { epochs: 0, ..TrainConfig::default() }, "epochs"),
            (TrainConfig { patience: 61, ..TrainConfig::default() }, "patience"),
            (TrainConfig { learning_rate: 0.0, ..TrainConfig::default() }, "learning_rate"),
            (TrainConfig { batch_size: 0, ..TrainConfig::default() }, "batch_size"),
        ];
        for (cfg, field) in cases {
            match cfg.validate() {
                Err(Error::Invalid { field: f, .. }) => assert_eq!(f, field),
                other => panic!("{field}: {other:?}"),
            }
        }
        assert_eq!(TrainConfig::refine().epochs, 100);
    }
}
