//! Flat `key = value` run configuration.
//!
//! One TOML table whose keys mirror the fields of [`ModelConfig`],
//! [`TrainConfig`] and [`LossConfig`]. Keys left out fall back to the
//! defaults of the chosen backbone and phase.

use std::path::{Path, PathBuf};

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::AlphaGradient;
use crate::loss::{DistanceMode, LossConfig, RegularizationMode};
use crate::model::{Backbone, ModelConfig};
use crate::train::{EarlyStopMetric, OptimizerKind, Phase, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExplanationLoss {
    #[default]
    Triplet,
    MaskPenalty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backbone: Backbone,
    pub frozen_layers: Option<usize>,
    pub head_width: Option<usize>,
    pub dropout: Option<f64>,
    pub target_layer: Option<String>,
    pub conv_channels: Option<Vec<usize>>,
    pub conv_strides: Option<Vec<usize>>,
    pub width_multiplier: f64,
    pub freeze_bn_stats: bool,
    pub pretrained: Option<PathBuf>,
    pub precision: Precision,

    /// Defaults to 60 for base training and 100 for refinement.
    pub epochs: Option<usize>,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub early_stop_metric: EarlyStopMetric,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr_decay_factor: f64,
    pub lr_decay_patience: usize,
    pub alpha_gradient: AlphaGradient,

    pub margin: f64,
    pub expl_weight: f64,
    pub weight_decay: f64,
    pub distance_mode: DistanceMode,
    pub regularization: RegularizationMode,
    pub explanation_loss: ExplanationLoss,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let l = LossConfig::default();
        RunConfig {
            backbone: Backbone::SmallCnn,
            frozen_layers: None,
            head_width: None,
            dropout: None,
            target_layer: None,
            conv_channels: None,
            conv_strides: None,
            width_multiplier: 1.0,
            freeze_bn_stats: true,
            pretrained: None,
            precision: Precision::F32,
            epochs: None,
            learning_rate: t.learning_rate,
            optimizer: t.optimizer,
            early_stop_metric: t.early_stop_metric,
            patience: t.patience,
            batch_size: t.batch_size,
            seed: t.seed,
            lr_decay_factor: t.lr_decay_factor,
            lr_decay_patience: t.lr_decay_patience,
            alpha_gradient: t.alpha_gradient,
            margin: l.margin,
            expl_weight: l.expl_weight,
            weight_decay: l.weight_decay,
            distance_mode: l.distance_mode,
            regularization: l.regularization,
            explanation_loss: ExplanationLoss::Triplet,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Model configuration for data of `input_size`² × `in_channels` with `num_classes` classes.
    pub fn model_config(&self, num_classes: usize, input_size: usize, in_channels: usize) -> Result<ModelConfig> {
        let mut m = match self.backbone {
            Backbone::SmallCnn => ModelConfig::small_cnn(num_classes),
            Backbone::Transfer => ModelConfig::transfer(num_classes),
        };
        m.input_size = input_size;
        m.in_channels = in_channels;
        if let Some(v) = self.frozen_layers {
            m.frozen_layers = v;
        }
        if let Some(v) = self.head_width {
            m.head_width = v;
        }
        if let Some(v) = self.dropout {
            m.dropout = v;
        }
        if let Some(v) = &self.conv_channels {
            m.conv_channels = v.clone();
        }
        m.target_layer = self.target_layer.clone();
        m.conv_strides = self.conv_strides.clone();
        m.width_multiplier = self.width_multiplier;
        m.freeze_bn_stats = self.freeze_bn_stats;
        m.pretrained = self.pretrained.clone();
        m.seed = self.seed;
        m.validate()?;
        Ok(m)
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            margin: self.margin,
            expl_weight: self.expl_weight,
            weight_decay: self.weight_decay,
            distance_mode: self.distance_mode,
            regularization: self.regularization,
        }
    }

    pub fn train_config(&self, phase: Phase) -> Result<TrainConfig> {
        let epochs = self.epochs.unwrap_or(match phase {
            Phase::Unrefined => TrainConfig::base().epochs,
            Phase::Exbl | Phase::MaskPenalty => TrainConfig::refine().epochs,
        });
        let t = TrainConfig {
            epochs,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            early_stop_metric: self.early_stop_metric,
            patience: self.patience,
            batch_size: self.batch_size,
            seed: self.seed,
            lr_decay_factor: self.lr_decay_factor,
            lr_decay_patience: self.lr_decay_patience,
            alpha_gradient: self.alpha_gradient,
            loss: self.loss_config(),
        };
        t.validate()?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.train_config(Phase::Unrefined).unwrap().epochs, 60);
        assert_eq!(c.train_config(Phase::Exbl).unwrap().epochs, 100);
        assert_eq!(c.train_config(Phase::Exbl).unwrap().loss, LossConfig::default());
    }

    #[test]
    fn flat_keys_parse() {
        let c = RunConfig::from_toml_str(
            "backbone = \"transfer\"\nfrozen_layers = 40\nepochs = 3\npatience = 2\nexpl_weight = 2.5\ndistance_mode = \"raw_euclidean\"\nprecision = \"f64\"\n",
        )
        .unwrap();
        let m = c.model_config(4, 96, 3).unwrap();
        assert_eq!((m.backbone, m.frozen_layers, m.head_width), (Backbone::Transfer, 40, 256));
        let t = c.train_config(Phase::Exbl).unwrap();
        assert_eq!(t.epochs, 3);
        assert_eq!(t.loss.expl_weight, 2.5);
        assert_eq!(t.loss.distance_mode, DistanceMode::RawEuclidean);
        assert_eq!(c.precision.dtype(), DType::F64);
    }

    #[test]
    fn unknown_key_and_bad_value_are_rejected() {
        assert!(matches!(RunConfig::from_toml_str("epoch = 3"), Err(Error::Config(_))));
        let c = RunConfig::from_toml_str("margin = -1.0").unwrap();
        assert!(matches!(c.train_config(Phase::Exbl), Err(Error::Invalid { .. })));
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig {
            epochs: Some(7),
            conv_channels: Some(vec![8, 8]),
            ..RunConfig::default()
        };
        let back = RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
