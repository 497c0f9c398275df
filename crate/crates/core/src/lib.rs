//! Exemplary explanation-based learning.
//!
//! Train an image classifier, pick one good and one bad GradCAM explanation
//! by Activation Recall, then refine the classifier with a triplet loss that
//! pulls every explanation product towards the good exemplar and away from
//! the bad one.

pub mod config;
pub mod data;
pub mod error;
pub mod exemplar;
pub mod explain;
pub mod imageio;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod report;
pub mod resample;
pub mod run;
pub mod train;

pub use config::{ExplanationLoss, Precision, RunConfig};
pub use data::{DatasetBundle, DatasetSplits, DecoySpec, Manifest, Sample, Split};
pub use error::{Error, Result};
pub use exemplar::{ExemplarMeta, ExemplarPair, SelectionMode};
pub use explain::{AlphaGradient, Cam, CamClass};
pub use loss::{DistanceMode, LossBreakdown, LossConfig, RegularizationMode};
pub use metrics::{ClassificationMetrics, EvalReport};
pub use model::{build_model, Backbone, Model, ModelConfig};
pub use report::ComparisonReport;
pub use candle_core::{DType, Device};
pub use run::RunDir;
pub use train::{Checkpoint, EpochRecord, Phase, StepRecord, TrainConfig, TrainObserver};
