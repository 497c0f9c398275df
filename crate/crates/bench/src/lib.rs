//! Fixtures shared by the benchmarks.

use exbl_core::data::{generate_decoy, DecoySpec};
use exbl_core::{Cam, DType, DatasetBundle, Device, Model, ModelConfig};
use ndarray::Array2;

/// A small decoy training split at the given resolution.
pub fn decoy_train(image_size: usize, per_class: usize) -> DatasetBundle {
    let spec = DecoySpec {
        image_size,
        confounder_patch_size: (image_size / 8).max(2),
        train_per_class: per_class,
        val_per_class: 1,
        test_per_class: 1,
        ..DecoySpec::default()
    };
    generate_decoy(&spec).expect("valid decoy spec").train
}

/// The default small CNN for four classes at `input_size`.
pub fn small_model(input_size: usize) -> Model {
    let config = ModelConfig {
        input_size,
        ..ModelConfig::small_cnn(4)
    };
    Model::new(&config, DType::F32, &Device::Cpu).expect("valid model config")
}

/// A smooth synthetic map and a centred square mask covering a quarter of it.
pub fn cam_and_mask(size: usize) -> (Cam, Array2<u8>) {
    let c = size as f32 / 2.0;
    let map = Array2::from_shape_fn((size, size), |(y, x)| {
        let d = ((y as f32 - c).powi(2) + (x as f32 - c).powi(2)).sqrt() / size as f32;
        (1.0 - d).clamp(0.0, 1.0)
    });
    let (lo, hi) = (size / 4, 3 * size / 4);
    let mask = Array2::from_shape_fn((size, size), |(y, x)| u8::from((lo..hi).contains(&y) && (lo..hi).contains(&x)));
    let cam = Cam {
        map,
        raw_max: 1.0,
        source: "bench".into(),
        class_idx: 0,
    };
    (cam, mask)
}
