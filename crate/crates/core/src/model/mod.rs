//! Classifier construction: a small from-scratch CNN or a MobileNetV2 transfer
//! backbone, both ending in `dense(width, ReLU) → dropout → dense(K)`.
//!
//! Layers are enumerated in a canonical order. The first `frozen_layers` of
//! them are excluded from gradient updates; the GradCAM target is one of the
//! spatial stages of the trunk.

mod layers;
mod mobilenet;
mod params;
mod small_cnn;

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use candle_core::{DType, Device, Tensor, Var, D};
use candle_nn::VarMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use layers::{Head, Stage};
use params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    SmallCnn,
    Transfer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: Backbone,
    /// Leading layers (in canonical order, input layer included) that are never updated.
    pub frozen_layers: usize,
    pub head_width: usize,
    pub dropout: f64,
    pub num_classes: usize,
    /// GradCAM layer; `None` selects the last spatial stage.
    pub target_layer: Option<String>,
    pub input_size: usize,
    pub in_channels: usize,
    /// Small CNN block widths.
    pub conv_channels: Vec<usize>,
    /// Small CNN strides; `None` downsamples by 2 in every block but the last.
    pub conv_strides: Option<Vec<usize>>,
    /// MobileNetV2 width multiplier.
    pub width_multiplier: f64,
    /// Keep batch-norm statistics of frozen layers fixed during training.
    pub freeze_bn_stats: bool,
    /// Safetensors file with pretrained trunk weights (transfer backbone only).
    pub pretrained: Option<PathBuf>,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale model for 64×64 inputs: four 3×3 conv blocks, 8×8 final map.
    pub fn small_cnn(num_classes: usize) -> Self {
        ModelConfig {
            backbone: Backbone::SmallCnn,
            frozen_layers: 2,
            head_width: 64,
            dropout: 0.5,
            num_classes,
            target_layer: None,
            input_size: 64,
            in_channels: 3,
            conv_channels: vec![16, 32, 32, 32],
            conv_strides: None,
            width_multiplier: 1.0,
            freeze_bn_stats: true,
            pretrained: None,
            seed: 0,
        }
    }

    /// MobileNetV2 at 224×224 with the first 50 layers frozen and a
    /// 256-unit ReLU head with 50% dropout.
    pub fn transfer(num_classes: usize) -> Self {
        ModelConfig {
            backbone: Backbone::Transfer,
            frozen_layers: 50,
            head_width: 256,
            input_size: 224,
            ..ModelConfig::small_cnn(num_classes)
        }
    }

    pub fn layers(&self) -> Vec<LayerInfo> {
        let mut layers = match self.backbone {
            Backbone::SmallCnn => small_cnn::layers(self),
            Backbone::Transfer => mobilenet::layers(self),
        };
        for layer in layers.iter_mut().take(self.frozen_layers) {
            layer.frozen = true;
        }
        layers
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("num_classes", "need at least two classes"));
        }
        if self.head_width == 0 {
            return Err(Error::invalid("head_width", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout", "must lie in [0, 1)"));
        }
        if self.input_size < 4 || self.in_channels == 0 {
            return Err(Error::invalid("input_size", "input must be at least 4×4 with one channel"));
        }
        match self.backbone {
            Backbone::SmallCnn => small_cnn::validate(self)?,
            Backbone::Transfer => {
                if self.width_multiplier <= 0.0 {
                    return Err(Error::invalid("width_multiplier", "must be positive"));
                }
                if self.input_size < 32 {
                    return Err(Error::invalid("input_size", "MobileNetV2 needs at least 32×32 input"));
                }
            }
        }
        let layers = self.layers();
        if self.frozen_layers >= layers.len() {
            return Err(Error::invalid(
                "frozen_layers",
                format!("{} frozen but the model has only {} layers", self.frozen_layers, layers.len()),
            ));
        }
        let target = self.resolve_target(&layers)?;
        let target_pos = layers.iter().position(|l| l.name == target).expect("resolved target");
        let trainable_conv = layers[..=target_pos]
            .iter()
            .any(|l| !l.frozen && l.kind == LayerKind::Conv);
        if !trainable_conv {
            return Err(Error::invalid(
                "frozen_layers",
                format!("no trainable convolution remains at or before target layer '{target}'"),
            ));
        }
        Ok(())
    }

    fn resolve_target(&self, layers: &[LayerInfo]) -> Result<String> {
        let spatial: Vec<&str> = layers.iter().filter(|l| l.spatial).map(|l| l.name.as_str()).collect();
        match &self.target_layer {
            None => Ok(spatial.last().expect("every backbone has spatial stages").to_string()),
            Some(name) if spatial.contains(&name.as_str()) => Ok(name.clone()),
            Some(name) => Err(Error::invalid(
                "target_layer",
                format!("unknown layer '{name}'; valid layers: {}", spatial.join(", ")),
            )),
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::small_cnn(4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Input,
    Conv,
    BatchNorm,
    Activation,
    Pad,
    Add,
    Pool,
    Flatten,
    Dense,
    Dropout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub name: String,
    pub kind: LayerKind,
    /// Output is a spatial feature map usable as a GradCAM target.
    pub spatial: bool,
    pub frozen: bool,
}

impl LayerInfo {
    fn new(name: &str, kind: LayerKind) -> Self {
        LayerInfo {
            name: name.to_string(),
            kind,
            spatial: false,
            frozen: false,
        }
    }

    fn spatial(mut self) -> Self {
        self.spatial = true;
        self
    }
}

pub(crate) struct Net {
    stages: Vec<(String, Box<dyn Stage>)>,
    head: Head,
}

/// A classifier `f(X | θ) = ŷ ∈ ℝ^{N×K}` with access to its GradCAM target activations.
pub struct Model {
    config: ModelConfig,
    dtype: DType,
    device: Device,
    varmap: VarMap,
    layers: Vec<LayerInfo>,
    target: usize,
    net: Net,
    trainable: Vec<(String, Var)>,
    frozen: Vec<(String, Var)>,
    dropout_rng: Mutex<ChaCha8Rng>,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("backbone", &self.config.backbone)
            .field("target_layer", &self.target_layer())
            .field("trainable_params", &self.num_trainable_params())
            .finish()
    }
}

pub fn build_model(config: &ModelConfig) -> Result<Model> {
    Model::new(config, DType::F32, &Device::Cpu)
}

impl Model {
    pub fn new(config: &ModelConfig, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let layers = config.layers();
        let target_name = config.resolve_target(&layers)?;
        let frozen_names: HashSet<String> = layers.iter().filter(|l| l.frozen).map(|l| l.name.clone()).collect();
        let varmap = VarMap::new();
        let mut store = ParamStore::new(&varmap, config.seed, dtype, device, frozen_names);
        let net = match config.backbone {
            Backbone::SmallCnn => small_cnn::build(config, &mut store)?,
            Backbone::Transfer => mobilenet::build(config, &mut store)?,
        };
        let target = net
            .stages
            .iter()
            .position(|(n, _)| *n == target_name)
            .expect("stage names mirror spatial layers");
        let ParamStore { trainable, frozen, .. } = store;
        let mut model = Model {
            config: config.clone(),
            dtype,
            device: device.clone(),
            varmap,
            layers,
            target,
            net,
            trainable,
            frozen,
            dropout_rng: Mutex::new(ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed)),
        };
        if let Some(path) = &config.pretrained {
            model.load_matching(path)?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn layers(&self) -> &[LayerInfo] {
        &self.layers
    }

    pub fn target_layer(&self) -> &str {
        &self.net.stages[self.target].0
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn trainable_vars(&self) -> Vec<Var> {
        self.trainable.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn trainable_named(&self) -> &[(String, Var)] {
        &self.trainable
    }

    /// Parameters and statistics of frozen layers.
    pub fn frozen_named(&self) -> &[(String, Var)] {
        &self.frozen
    }

    pub fn var(&self, name: &str) -> Option<Var> {
        self.varmap.data().lock().expect("varmap lock").get(name).cloned()
    }

    pub fn num_params(&self) -> usize {
        self.varmap.all_vars().iter().map(|v| v.elem_count()).sum()
    }

    pub fn num_trainable_params(&self) -> usize {
        self.trainable.iter().map(|(_, v)| v.elem_count()).sum()
    }

    pub fn reseed_dropout(&self, seed: u64) {
        *self.dropout_rng.lock().expect("dropout rng lock") = ChaCha8Rng::seed_from_u64(seed);
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let dims = x.dims();
        let c = &self.config;
        if dims.len() != 4 || dims[1] != c.in_channels || dims[2] != c.input_size || dims[3] != c.input_size {
            return Err(Error::Shape(format!(
                "model expects N×{}×{}×{} input, got {:?}",
                c.in_channels, c.input_size, c.input_size, dims
            )));
        }
        Ok(())
    }

    /// Activations of the GradCAM target layer, `N×K×h×w`.
    pub fn features(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.to_dtype(self.dtype)?;
        for (_, stage) in &self.net.stages[..=self.target] {
            h = stage.forward(&h, train)?;
        }
        Ok(h)
    }

    /// Class scores (pre-softmax) computed from target-layer activations.
    pub fn head_logits(&self, activations: &Tensor, train: bool) -> Result<Tensor> {
        let mut h = activations.clone();
        for (_, stage) in &self.net.stages[self.target + 1..] {
            h = stage.forward(&h, train)?;
        }
        if train {
            let mut rng = self.dropout_rng.lock().expect("dropout rng lock");
            self.net.head.forward(&h, Some(&mut rng))
        } else {
            self.net.head.forward(&h, None)
        }
    }

    pub fn logits(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let a = self.features(x, train)?;
        self.head_logits(&a, train)
    }

    /// Class probabilities in evaluation mode; rows sum to one.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let logits = self.logits(x, false)?;
        Ok(candle_nn::ops::softmax(&logits, D::Minus1)?)
    }

    /// Arg-max class for every image, evaluated in chunks of `batch`.
    pub fn predict_labels(&self, images: &Tensor, batch: usize) -> Result<Vec<usize>> {
        let n = images.dim(0)?;
        let mut out = Vec::with_capacity(n);
        let batch = batch.max(1);
        for start in (0..n).step_by(batch) {
            let len = batch.min(n - start);
            let logits = self.logits(&images.narrow(0, start, len)?, false)?;
            let idx = logits.argmax(D::Minus1)?.to_vec1::<u32>()?;
            out.extend(idx.into_iter().map(|i| i as usize));
        }
        Ok(out)
    }

    /// Content hash of every parameter and buffer, stable across save/load.
    pub fn fingerprint(&self) -> Result<String> {
        let data = self.varmap.data().lock().expect("varmap lock");
        let mut names: Vec<&String> = data.keys().collect();
        names.sort();
        let mut hasher = Sha256::new();
        for name in names {
            hasher.update(name.as_bytes());
            let values = data[name].as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            for v in values {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
    }

    /// Deep copy of every variable, for best-epoch restoration.
    pub fn snapshot(&self) -> Result<Vec<(Var, Tensor)>> {
        let data = self.varmap.data().lock().expect("varmap lock");
        data.values().map(|v| Ok((v.clone(), v.as_tensor().copy()?))).collect()
    }

    pub fn restore(&self, snapshot: &[(Var, Tensor)]) -> Result<()> {
        for (var, value) in snapshot {
            var.set(value)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.varmap.save(path)?;
        Ok(())
    }

    /// Loads every variable from a checkpoint; all names must be present.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        if !path.is_file() {
            return Err(Error::NotFound(format!("checkpoint {}", path.display())));
        }
        self.varmap.load(path)?;
        Ok(())
    }

    /// Loads the variables present in `path` (pretrained trunks omit the head).
    fn load_matching(&mut self, path: &Path) -> Result<()> {
        let tensors = candle_core::safetensors::load(path, &self.device)?;
        let data = self.varmap.data().lock().expect("varmap lock");
        for (name, value) in tensors {
            if let Some(var) = data.get(&name) {
                if var.dims() != value.dims() {
                    return Err(Error::Shape(format!(
                        "pretrained '{name}' is {:?}, model expects {:?}",
                        value.dims(),
                        var.dims()
                    )));
                }
                var.set(&value.to_dtype(self.dtype)?)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ModelConfig {
        ModelConfig {
            input_size: 16,
            conv_channels: vec![4, 4],
            head_width: 8,
            ..ModelConfig::small_cnn(3)
        }
    }

    #[test]
    fn unknown_target_lists_valid_layers() {
        let cfg = ModelConfig {
            target_layer: Some("conv9".into()),
            ..toy()
        };
        let err = build_model(&cfg).unwrap_err().to_string();
        assert!(err.contains("conv1") && err.contains("conv2"), "{err}");
    }

    #[test]
    fn freezing_everything_is_rejected() {
        let cfg = ModelConfig {
            frozen_layers: 7,
            ..toy()
        };
        assert!(matches!(build_model(&cfg), Err(Error::Invalid { ref field, .. }) if field == "frozen_layers"));
        // All convolutions frozen but the head is still trainable.
        let cfg = ModelConfig {
            frozen_layers: 3,
            ..toy()
        };
        assert!(build_model(&cfg).is_err());
    }

    #[test]
    fn frozen_prefix_is_not_trainable() {
        let model = build_model(&toy()).unwrap();
        let trainable: Vec<&str> = model.trainable_named().iter().map(|(n, _)| n.as_str()).collect();
        let frozen: Vec<&str> = model.frozen_named().iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(frozen, vec!["conv1.weight", "conv1.bias"]);
        assert!(trainable.contains(&"conv2.weight") && trainable.contains(&"fc2.bias"));
    }

    #[test]
    fn probabilities_sum_to_one() {
        let model = build_model(&toy()).unwrap();
        let x = Tensor::rand(0f32, 1., (5, 3, 16, 16), &Device::Cpu).unwrap();
        let p = model.predict(&x).unwrap();
        assert_eq!(p.dims(), &[5, 3]);
        for row in p.to_vec2::<f32>().unwrap() {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn wrong_resolution_is_a_shape_error() {
        let model = build_model(&toy()).unwrap();
        let x = Tensor::zeros((1, 3, 15, 16), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(model.predict(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_model(&toy()).unwrap();
        let b = build_model(&toy()).unwrap();
        assert_eq!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
        let c = build_model(&ModelConfig { seed: 9, ..toy() }).unwrap();
        assert_ne!(a.fingerprint().unwrap(), c.fingerprint().unwrap());
    }

    #[test]
    fn snapshot_restores_values() {
        let model = build_model(&toy()).unwrap();
        let before = model.fingerprint().unwrap();
        let snap = model.snapshot().unwrap();
        let v = model.var("fc2.bias").unwrap();
        v.set(&Tensor::ones(v.shape(), DType::F32, &Device::Cpu).unwrap()).unwrap();
        assert_ne!(model.fingerprint().unwrap(), before);
        model.restore(&snap).unwrap();
        assert_eq!(model.fingerprint().unwrap(), before);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.safetensors");
        let a = build_model(&toy()).unwrap();
        a.save(&path).unwrap();
        let mut b = build_model(&ModelConfig { seed: 3, ..toy() }).unwrap();
        b.load(&path).unwrap();
        assert_eq!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
    }
}
