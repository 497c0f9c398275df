mod common;

use candle_core::{DType, Device};
use common::*;
use exbl_core::data::{images_to_tensor, Sample};
use exbl_core::explain::{gradcam, gradcam_batch, AlphaGradient};
use exbl_core::Error;
use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CONV: [f64; 9] = [0.5, -0.3, 0.8, 0.2, 0.9, -0.4, -0.6, 0.3, 0.7];
const CONV_B: f64 = 0.05;
const FC1: [[f64; 4]; 4] = [
    [0.7, -0.2, 0.4, 0.1],
    [-0.5, 0.6, 0.3, -0.8],
    [0.2, 0.9, -0.7, 0.5],
    [0.6, 0.1, 0.8, -0.3],
];
const FC1_B: [f64; 4] = [0.1, -0.05, 0.02, -0.4];
const FC2: [[f64; 4]; 2] = [[0.9, -0.6, 0.4, 0.3], [-0.2, 0.8, -0.5, 0.7]];
const FC2_B: [f64; 2] = [0.01, -0.02];

fn hand_set(model: &exbl_core::Model) {
    set(model, "conv1.weight", &CONV, &[1, 1, 3, 3]);
    set(model, "conv1.bias", &[CONV_B], &[1]);
    set(model, "fc1.weight", FC1.as_flattened(), &[4, 4]);
    set(model, "fc1.bias", &FC1_B, &[4]);
    set(model, "fc2.weight", FC2.as_flattened(), &[2, 4]);
    set(model, "fc2.bias", &FC2_B, &[2]);
}

fn image() -> Array3<f32> {
    let v = [
        0.1, 0.8, 0.3, 0.5, 0.9, 0.2, 0.7, 0.4, 0.6, 0.35, 0.05, 0.75, 0.25, 0.95, 0.45, 0.15,
    ];
    Array3::from_shape_fn((4, 4, 1), |(y, x, _)| v[y * 4 + x])
}

// 3×3 cross-correlation, stride 2, zero padding 1, then ReLU.
fn features_oracle(img: &Array3<f32>) -> [f64; 4] {
    let mut out = [0.0; 4];
    for oy in 0..2 {
        for ox in 0..2 {
            let mut acc = CONV_B;
            for ky in 0..3 {
                for kx in 0..3 {
                    let iy = (2 * oy + ky) as isize - 1;
                    let ix = (2 * ox + kx) as isize - 1;
                    if (0..4).contains(&iy) && (0..4).contains(&ix) {
                        acc += CONV[ky * 3 + kx] * f64::from(img[[iy as usize, ix as usize, 0]]);
                    }
                }
            }
            out[oy * 2 + ox] = acc.max(0.0);
        }
    }
    out
}

fn score(a: &[f64; 4], class: usize) -> f64 {
    let mut y = FC2_B[class];
    for j in 0..4 {
        let hidden = (0..4).map(|i| FC1[j][i] * a[i]).sum::<f64>() + FC1_B[j];
        y += FC2[class][j] * hidden.max(0.0);
    }
    y
}

fn alpha_fd(a: &[f64; 4], class: usize) -> f64 {
    let h = 1e-5;
    let mut total = 0.0;
    for i in 0..4 {
        let (mut up, mut down) = (*a, *a);
        up[i] += h;
        down[i] -= h;
        total += (score(&up, class) - score(&down, class)) / (2.0 * h);
    }
    total / 4.0
}

fn upsample_oracle(coarse: &[f64; 4], dst: usize) -> Vec<f64> {
    let src = 2usize;
    let coord = |d: usize| {
        let s = ((d as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
        let i0 = s.floor() as usize;
        (i0, (i0 + 1).min(src - 1), s - i0 as f64)
    };
    let mut out = vec![0.0; dst * dst];
    for y in 0..dst {
        let (y0, y1, ty) = coord(y);
        for x in 0..dst {
            let (x0, x1, tx) = coord(x);
            let at = |yy: usize, xx: usize| coarse[yy * src + xx];
            out[y * dst + x] = (1.0 - ty) * ((1.0 - tx) * at(y0, x0) + tx * at(y0, x1))
                + ty * ((1.0 - tx) * at(y1, x0) + tx * at(y1, x1));
        }
    }
    out
}

#[test]
fn channel_weight_matches_finite_differences() {
    let model = model(&tiny_config(), DType::F64);
    hand_set(&model);
    let img = image();
    let x = images_to_tensor(&[&img], DType::F64, &Device::Cpu).unwrap();
    let a = features_oracle(&img);
    let lib_a: Vec<f64> = model.features(&x, false).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    for i in 0..4 {
        assert!((lib_a[i] - a[i]).abs() < 1e-12, "activation {i}: {} vs {}", lib_a[i], a[i]);
    }
    for class in 0..2 {
        let batch = gradcam_batch(&model, &x, &[class], false, AlphaGradient::Detached).unwrap();
        let alpha: f64 = batch.alphas.flatten_all().unwrap().to_vec1::<f64>().unwrap()[0];
        let expected = alpha_fd(&a, class);
        assert!((alpha - expected).abs() < 1e-4, "class {class}: alpha {alpha} vs {expected}");

        let coarse = a.map(|v| (expected * v).max(0.0));
        let up = upsample_oracle(&coarse, 4);
        let max = up.iter().copied().fold(0.0, f64::max);
        let map: Vec<f64> = batch.maps.flatten_all().unwrap().to_vec1().unwrap();
        for (i, (&got, &raw)) in map.iter().zip(&up).enumerate() {
            let want = if max > 0.0 { raw / max } else { 0.0 };
            assert!((got - want).abs() < 1e-4, "class {class} pixel {i}: {got} vs {want}");
        }
    }
}

#[test]
fn scaling_class_weights_leaves_cams_unchanged() {
    let model = model(&toy_config(), DType::F32);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let imgs: Vec<Array3<f32>> = (0..4).map(|_| random_image(&mut rng, 8, 8, 3)).collect();
    let refs: Vec<&Array3<f32>> = imgs.iter().collect();
    let x = images_to_tensor(&refs, DType::F32, &Device::Cpu).unwrap();
    let classes = [0, 1, 2, 1];
    let before = gradcam_batch(&model, &x, &classes, false, AlphaGradient::Detached).unwrap();
    let w = get(&model, "fc2.weight");
    let scaled: Vec<f64> = w.iter().map(|v| v * 3.0).collect();
    set(&model, "fc2.weight", &scaled, &[3, 2]);
    let after = gradcam_batch(&model, &x, &classes, false, AlphaGradient::Detached).unwrap();
    let b: Vec<f32> = before.maps.flatten_all().unwrap().to_vec1().unwrap();
    let a: Vec<f32> = after.maps.flatten_all().unwrap().to_vec1().unwrap();
    assert!(b.iter().any(|&v| v > 0.0), "degenerate toy cams");
    for (p, q) in b.iter().zip(&a) {
        assert!((p - q).abs() <= 1e-5, "{p} vs {q}");
    }
}

#[test]
fn zero_activations_give_zero_cam() {
    let model = model(&toy_config(), DType::F32);
    set(&model, "conv2.weight", &[0.0; 144], &[4, 4, 3, 3]);
    set(&model, "conv2.bias", &[0.0; 4], &[4]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sample = Sample {
        id: "z".into(),
        image: random_image(&mut rng, 8, 8, 3),
        mask: None,
        label: 0,
    };
    for class in 0..3 {
        let cam = gradcam(&model, &sample, class).unwrap();
        assert_eq!(cam.raw_max, 0.0);
        assert!(cam.map.iter().all(|&v| v == 0.0));
        assert_eq!(cam.dims(), (8, 8));
    }
}

#[test]
fn cams_are_normalized_and_deterministic() {
    for seed in 0..6u64 {
        let mut cfg = toy_config();
        cfg.seed = seed;
        let model = model(&cfg, DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let sample = Sample {
            id: "r".into(),
            image: random_image(&mut rng, 8, 8, 3),
            mask: None,
            label: 0,
        };
        for class in 0..3 {
            let cam = gradcam(&model, &sample, class).unwrap();
            let max = cam.map.iter().copied().fold(0.0f32, f32::max);
            assert!(cam.map.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(max == 0.0 || (max - 1.0).abs() < 1e-6, "max {max}");
            assert_eq!(cam, gradcam(&model, &sample, class).unwrap());
        }
    }
}

#[test]
fn kept_graph_reaches_trainable_parameters() {
    let model = model(&toy_config(), DType::F32);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let img = random_image(&mut rng, 8, 8, 3);
    let x = images_to_tensor(&[&img], DType::F32, &Device::Cpu).unwrap();
    let conv1 = model.var("conv1.weight").unwrap();

    let kept = gradcam_batch(&model, &x, &[1], true, AlphaGradient::Detached).unwrap();
    let grads = kept.maps.sum_all().unwrap().backward().unwrap();
    assert!(grads.get(conv1.as_tensor()).is_some());

    let cut = gradcam_batch(&model, &x, &[1], false, AlphaGradient::Detached).unwrap();
    let grads = cut.maps.sum_all().unwrap().backward().unwrap();
    assert!(grads.get(conv1.as_tensor()).is_none());
}

#[test]
fn invalid_requests() {
    let model = model(&toy_config(), DType::F32);
    let img = Array3::zeros((8, 8, 3));
    let x = images_to_tensor(&[&img], DType::F32, &Device::Cpu).unwrap();
    assert!(matches!(
        gradcam_batch(&model, &x, &[3], false, AlphaGradient::Detached),
        Err(Error::Invalid { .. })
    ));
    assert!(matches!(
        gradcam_batch(&model, &x, &[0], true, AlphaGradient::SecondOrder),
        Err(Error::Unsupported(_))
    ));
    let wrong = Sample {
        id: "w".into(),
        image: Array3::zeros((6, 6, 3)),
        mask: Some(Array2::ones((6, 6))),
        label: 0,
    };
    assert!(matches!(gradcam(&model, &wrong, 0), Err(Error::Shape(_))));
}
