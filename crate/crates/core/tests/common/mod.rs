#![allow(dead_code)]

use candle_core::{DType, Device, Tensor};
use exbl_core::data::{DatasetBundle, Sample, Split};
use exbl_core::model::{Model, ModelConfig};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 4×4×1 input, one 3×3 stride-2 conv channel (2×2 map), 4-unit head, 2 classes.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        frozen_layers: 1,
        head_width: 4,
        dropout: 0.0,
        input_size: 4,
        in_channels: 1,
        conv_channels: vec![1],
        conv_strides: Some(vec![2]),
        ..ModelConfig::small_cnn(2)
    }
}

/// 8×8×3 input, two conv blocks (4×4×4 map), 2-unit head, 3 classes; 399 parameters.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        frozen_layers: 1,
        head_width: 2,
        dropout: 0.0,
        input_size: 8,
        in_channels: 3,
        conv_channels: vec![4, 4],
        conv_strides: Some(vec![2, 1]),
        seed: 18,
        ..ModelConfig::small_cnn(3)
    }
}

pub fn model(cfg: &ModelConfig, dtype: DType) -> Model {
    Model::new(cfg, dtype, &Device::Cpu).unwrap()
}

pub fn set(model: &Model, name: &str, values: &[f64], shape: &[usize]) {
    let var = model.var(name).unwrap_or_else(|| panic!("no variable {name}"));
    let t = Tensor::from_vec(values.to_vec(), shape, &Device::Cpu)
        .unwrap()
        .to_dtype(var.dtype())
        .unwrap();
    var.set(&t).unwrap();
}

pub fn get(model: &Model, name: &str) -> Vec<f64> {
    model
        .var(name)
        .unwrap()
        .as_tensor()
        .flatten_all()
        .unwrap()
        .to_dtype(DType::F64)
        .unwrap()
        .to_vec1()
        .unwrap()
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Array3<f32> {
    Array3::from_shape_fn((h, w, c), |_| rng.random::<f32>())
}

pub fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Array2<u8> {
    loop {
        let m = Array2::from_shape_fn((h, w), |_| u8::from(rng.random_bool(0.4)));
        if m.iter().any(|&v| v == 1) {
            return m;
        }
    }
}

/// Random masked samples with ids `s000`, `s001`, ….
pub fn random_bundle(seed: u64, n: usize, side: usize, channels: usize, k: usize) -> DatasetBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| Sample {
            id: format!("s{i:03}"),
            image: random_image(&mut rng, side, side, channels),
            mask: Some(random_mask(&mut rng, side, side)),
            label: i % k,
        })
        .collect();
    let names = (0..k).map(|c| format!("c{c}")).collect();
    DatasetBundle::new(samples, names, Split::Train).unwrap()
}

/// Σ(cam·M)/ΣM by explicit double loop.
pub fn ar_oracle(cam: &Array2<f32>, mask: &Array2<u8>) -> f64 {
    let (h, w) = cam.dim();
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for y in 0..h {
        for x in 0..w {
            let m = f64::from(mask[[y, x]]);
            num += f64::from(cam[[y, x]]) * m;
            den += m;
        }
    }
    num / den
}
