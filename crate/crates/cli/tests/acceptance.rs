//! Acceptance run: prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use candle_core::{DType, Device, Tensor, Var};
use exbl_core::data::{generate_decoy, images_to_tensor, DatasetBundle, DecoySpec, Sample, Split};
use exbl_core::exemplar::select_exemplars;
use exbl_core::explain::{cams_for_samples, gradcam, Cam, CamClass};
use exbl_core::loss::{cross_entropy, triplet_explanation_loss, DistanceMode, LossConfig, Scores};
use exbl_core::metrics::{activation_recall, classification_metrics};
use exbl_core::train::{batch_objective, evaluate, refine_exbl, train_base, ExplanationTerm, NoopObserver};
use exbl_core::{ComparisonReport, Model, ModelConfig, TrainConfig};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn toy_config() -> ModelConfig {
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

fn random_bundle(seed: u64, n: usize, side: usize, k: usize) -> DatasetBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| Sample {
            id: format!("s{i:03}"),
            image: Array3::from_shape_fn((side, side, 3), |_| rng.random::<f32>()),
            mask: Some(random_mask(&mut rng, side, side)),
            label: i % k,
        })
        .collect();
    DatasetBundle::new(samples, (0..k).map(|c| format!("c{c}")).collect(), Split::Train).unwrap()
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Array2<u8> {
    loop {
        let m = Array2::from_shape_fn((h, w), |_| u8::from(rng.random_bool(0.4)));
        if m.iter().any(|&v| v == 1) {
            return m;
        }
    }
}

fn ar_oracle(cam: &Array2<f32>, mask: &Array2<u8>) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for y in 0..cam.nrows() {
        for x in 0..cam.ncols() {
            num += f64::from(cam[[y, x]]) * f64::from(mask[[y, x]]);
            den += f64::from(mask[[y, x]]);
        }
    }
    num / den
}

fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar().unwrap()
}

// Criterion 1

fn directional_effect() -> Outcome {
    let mut passes = 0;
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let t = Instant::now();
        let spec = DecoySpec {
            rng_seed: seed,
            ..DecoySpec::default()
        };
        let data = generate_decoy(&spec).map_err(e)?;
        let clean = data.test_clean.as_ref().ok_or("no clean test split")?;
        let mcfg = ModelConfig {
            seed,
            ..ModelConfig::small_cnn(spec.classes)
        };
        let model = Model::new(&mcfg, DType::F32, &Device::Cpu).map_err(e)?;
        let base_cfg = TrainConfig {
            epochs: 30,
            learning_rate: 1e-3,
            seed,
            ..TrainConfig::base()
        };
        let base = train_base(&model, &data.train, &data.val, &base_cfg, &mut NoopObserver).map_err(e)?;
        let before = evaluate(&model, &data.test).map_err(e)?;
        let before_clean = evaluate(&model, clean).map_err(e)?;
        let pair = select_exemplars(&model, &data.train).map_err(e)?.pair;
        let refine_cfg = TrainConfig {
            epochs: 20,
            seed,
            ..TrainConfig::refine()
        };
        refine_exbl(&model, &base, &pair, &data.train, &data.val, &refine_cfg, &mut NoopObserver).map_err(e)?;
        let after = evaluate(&model, &data.test).map_err(e)?;
        let after_clean = evaluate(&model, clean).map_err(e)?;
        let d_ar = after.mean_ar.unwrap_or(f64::NAN) - before.mean_ar.unwrap_or(f64::NAN);
        let d_clean = after_clean.accuracy - before_clean.accuracy;
        let ok = before.accuracy >= 0.90 && d_ar >= 0.05 && d_clean >= -0.10;
        passes += usize::from(ok);
        let line = format!(
            "seed {seed}: base acc {:.3}, AR {:.3} -> {:.3} ({d_ar:+.3}), clean acc {:.3} -> {:.3} ({d_clean:+.3}), {:.0}s {}",
            before.accuracy,
            before.mean_ar.unwrap_or(f64::NAN),
            after.mean_ar.unwrap_or(f64::NAN),
            before_clean.accuracy,
            after_clean.accuracy,
            t.elapsed().as_secs_f64(),
            if ok { "ok" } else { "miss" }
        );
        eprintln!("  {line}");
        lines.push(line);
        if passes >= 2 || passes + (2 - seed as usize) < 2 {
            break;
        }
    }
    let summary = format!("{passes} seed(s) passed; {}", lines.join("; "));
    if passes >= 2 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

// Criterion 2

fn copy_weights(from: &Model, to: &Model) {
    for (name, v) in from.trainable_named().iter().chain(from.frozen_named()) {
        let target = to.var(name).unwrap();
        target.set(&v.as_tensor().to_dtype(target.dtype()).unwrap()).unwrap();
    }
}

fn nudge(var: &Var, idx: usize, delta: f64) {
    let t = var.as_tensor();
    let mut flat: Vec<f64> = t.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1().unwrap();
    flat[idx] += delta;
    let back = Tensor::from_vec(flat, t.shape(), t.device()).unwrap().to_dtype(t.dtype()).unwrap();
    var.set(&back).unwrap();
}

fn gradient_error(dtype: DType) -> Result<(usize, f64), String> {
    let cfg = toy_config();
    let model = Model::new(&cfg, dtype, &Device::Cpu).map_err(e)?;
    let reference = Model::new(&cfg, DType::F64, &Device::Cpu).map_err(e)?;
    copy_weights(&model, &reference);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let imgs: Vec<Array3<f32>> = (0..5).map(|_| Array3::from_shape_fn((8, 8, 3), |_| rng.random())).collect();
    let refs: Vec<&Array3<f32>> = imgs[..3].iter().collect();
    let loss_cfg = LossConfig {
        weight_decay: 1e-3,
        distance_mode: DistanceMode::Rms,
        ..LossConfig::default()
    };
    let labels = [0, 2, 1];
    let objective = |m: &Model, alphas: Option<&Tensor>| {
        let x = images_to_tensor(&refs, m.dtype(), &Device::Cpu).unwrap();
        let g = images_to_tensor(&[&imgs[3]], m.dtype(), &Device::Cpu).unwrap().get(0).unwrap();
        let b = images_to_tensor(&[&imgs[4]], m.dtype(), &Device::Cpu).unwrap().get(0).unwrap();
        let params = m.trainable_vars();
        batch_objective(m, &x, &labels, ExplanationTerm::Triplet { good: &g, bad: &b }, alphas, &loss_cfg, &params, false)
            .unwrap()
    };
    let out = objective(&model, None);
    let grads = out.loss.total.backward().map_err(e)?;
    let alphas = out.alphas.ok_or("no channel weights")?.to_dtype(DType::F64).map_err(e)?;
    let mut picks = Vec::new();
    for (name, v) in model.trainable_named() {
        for i in 0..v.elem_count() {
            picks.push((name.clone(), i));
        }
    }
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let (name, idx) = picks[rng.random_range(0..picks.len())].clone();
        let var = model.var(&name).unwrap();
        let g = grads.get(var.as_tensor()).ok_or("missing gradient")?;
        let analytic: Vec<f64> = g.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1().unwrap();
        let rv = reference.var(&name).unwrap();
        nudge(&rv, idx, h);
        let up = objective(&reference, Some(&alphas)).loss.breakdown.total;
        nudge(&rv, idx, -2.0 * h);
        let down = objective(&reference, Some(&alphas)).loss.breakdown.total;
        nudge(&rv, idx, h);
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[idx];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12));
    }
    Ok((model.num_params(), worst))
}

fn gradient_correctness() -> Outcome {
    let (params, err64) = gradient_error(DType::F64)?;
    let (_, err32) = gradient_error(DType::F32)?;
    ensure(params <= 500, || format!("toy model has {params} parameters"))?;
    let msg = format!("{params} params, max rel. error f64 {err64:.2e} (<= 1e-4), f32 {err32:.2e} (<= 1e-2)");
    if err64 <= 1e-4 && err32 <= 1e-2 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// Criterion 3

fn exhaustive_scan(model: &Model, bundle: &DatasetBundle) -> ((String, f64), (String, f64)) {
    let mut scored: Vec<(String, f64)> = bundle
        .samples()
        .iter()
        .map(|s| {
            let cam = gradcam(model, s, s.label).unwrap();
            (s.id.clone(), ar_oracle(&cam.map, s.mask.as_ref().unwrap()))
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let good = scored[0].clone();
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let bad = scored.into_iter().find(|s| s.0 != good.0).unwrap();
    (good, bad)
}

fn check_selection(model: &Model, bundle: &DatasetBundle) -> Result<(), String> {
    let meta = select_exemplars(model, bundle).map_err(e)?.pair.meta;
    let (good, bad) = exhaustive_scan(model, bundle);
    ensure(meta.good_id == good.0 && meta.bad_id == bad.0, || {
        format!("selected ({}, {}), scan ({}, {})", meta.good_id, meta.bad_id, good.0, bad.0)
    })?;
    let (ga, ba) = (meta.good_ar.unwrap_or(f64::NAN), meta.bad_ar.unwrap_or(f64::NAN));
    ensure((ga - good.1).abs() <= 1e-6 && (ba - bad.1).abs() <= 1e-6, || "AR of the pair differs".into())
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (h, w) = (rng.random_range(1..40), rng.random_range(1..40));
        let map = Array2::from_shape_fn((h, w), |_| rng.random::<f32>());
        let mask = random_mask(&mut rng, h, w);
        let got = activation_recall(&Cam::from_map(map.clone(), "p", 0), &mask).map_err(e)?;
        worst = worst.max((got - ar_oracle(&map, &mask)).abs());
    }
    ensure(worst <= 1e-6, || format!("AR differs from oracle by {worst:e}"))?;

    for seed in 0..2 {
        let model = Model::new(&ModelConfig { seed: 40 + seed, ..toy_config() }, DType::F32, &Device::Cpu).map_err(e)?;
        check_selection(&model, &random_bundle(seed, 50, 8, 3))?;
    }
    let model = Model::new(&toy_config(), DType::F32, &Device::Cpu).map_err(e)?;
    let zeros = Tensor::zeros(model.var("conv2.weight").unwrap().shape(), DType::F32, &Device::Cpu).map_err(e)?;
    model.var("conv2.weight").unwrap().set(&zeros).map_err(e)?;
    model.var("conv2.bias").unwrap().set(&Tensor::zeros(4, DType::F32, &Device::Cpu).map_err(e)?).map_err(e)?;
    let ties = select_exemplars(&model, &random_bundle(7, 50, 8, 3)).map_err(e)?.pair.meta;
    ensure(ties.good_id == "s000" && ties.bad_id == "s001", || {
        format!("all-ties pair is ({}, {})", ties.good_id, ties.bad_id)
    })?;

    let t = |v: [f32; 4]| Tensor::from_vec(v.to_vec(), (2, 2, 1), &Device::Cpu).unwrap();
    let products = Tensor::stack(&[t([0.2, 0.0, 0.0, 0.1]), t([0.6, 0.4, 0.5, 0.7])], 0).map_err(e)?;
    let cfg = LossConfig {
        distance_mode: DistanceMode::RawEuclidean,
        ..LossConfig::default()
    };
    let out = triplet_explanation_loss(&products, &t([0.0; 4]), &t([1.0; 4]), &cfg).map_err(e)?;
    // Hinges: max(√0.05 − √3.45 + 1, 0) = 0 and √1.26 − √0.86 + 1.
    let want = (0.05f64.sqrt() - 3.45f64.sqrt() + 1.0).max(0.0) + (1.26f64.sqrt() - 0.86f64.sqrt() + 1.0);
    let got = scalar(&out.loss);
    ensure((got - want).abs() <= 1e-6, || format!("triplet {got} vs {want}"))?;

    let matrix = [[3, 1, 0, 0], [0, 4, 0, 0], [0, 0, 4, 0], [1, 0, 0, 3]];
    let (mut preds, mut truths) = (Vec::new(), Vec::new());
    for (tr, row) in matrix.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            preds.extend(std::iter::repeat_n(p, n));
            truths.extend(std::iter::repeat_n(tr, n));
        }
    }
    let m = classification_metrics(&preds, &truths, 4).map_err(e)?;
    ensure(m.accuracy == 0.875 && m.per_class_accuracy == [0.75, 1.0, 1.0, 0.75], || {
        format!("metrics {} {:?}", m.accuracy, m.per_class_accuracy)
    })?;
    Ok(format!("AR max error {worst:.1e} over 100 pairs; selection, all-ties, triplet and confusion oracles agree"))
}

// Criterion 4

fn loss_identities() -> Outcome {
    let model = Model::new(&toy_config(), DType::F32, &Device::Cpu).map_err(e)?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let imgs: Vec<Array3<f32>> = (0..4).map(|_| Array3::from_shape_fn((8, 8, 3), |_| rng.random())).collect();
    let refs: Vec<&Array3<f32>> = imgs.iter().collect();
    let x = images_to_tensor(&refs, DType::F32, &Device::Cpu).map_err(e)?;
    let (g, b) = (x.get(0).map_err(e)?, x.get(1).map_err(e)?);
    let cfg = LossConfig {
        expl_weight: 0.0,
        weight_decay: 0.0,
        ..LossConfig::default()
    };
    let params = model.trainable_vars();
    let out = batch_objective(&model, &x, &[0, 1, 2, 0], ExplanationTerm::Triplet { good: &g, bad: &b }, None, &cfg, &params, false)
        .map_err(e)?;
    let bd = out.loss.breakdown;
    ensure((bd.total - bd.cross_entropy).abs() <= 1e-6, || format!("total {} vs CE {}", bd.total, bd.cross_entropy))?;

    let n = 6;
    let a: Vec<f64> = (0..12).map(|_| rng.random()).collect();
    let c: Vec<f64> = (0..12).map(|_| rng.random()).collect();
    let diff: Vec<f64> = a.iter().zip(&c).map(|(p, q)| q - p).collect();
    let dd: f64 = diff.iter().map(|v| v * v).sum();
    let mut products = Vec::new();
    for _ in 0..n {
        let v: Vec<f64> = (0..12).map(|_| rng.random_range(-0.5..0.5)).collect();
        let along = v.iter().zip(&diff).map(|(p, q)| p * q).sum::<f64>() / dd;
        products.extend((0..12).map(|i| (a[i] + c[i]) / 2.0 + v[i] - along * diff[i]));
    }
    let t = |v: Vec<f64>, s: &[usize]| Tensor::from_vec(v, s, &Device::Cpu).unwrap();
    let out = triplet_explanation_loss(&t(products, &[n, 3, 2, 2]), &t(a, &[3, 2, 2]), &t(c, &[3, 2, 2]), &LossConfig::default())
        .map_err(e)?;
    let expl = scalar(&out.loss);
    ensure((expl - n as f64).abs() <= 1e-6, || format!("equidistant batch gives {expl}, expected {n}"))?;

    let uniform = Tensor::zeros((4, 4), DType::F32, &Device::Cpu).map_err(e)?;
    let ce = scalar(&cross_entropy(Scores::Logits(&uniform), &[0, 1, 2, 3]).map_err(e)?);
    ensure((ce - 4f64.ln()).abs() <= 1e-5, || format!("uniform CE {ce}"))?;
    Ok(format!("total-CE {:.1e}, equidistant L_expl {expl:.6}, uniform CE {ce:.6}", (bd.total - bd.cross_entropy).abs()))
}

// Criterion 5

fn cam_contracts() -> Outcome {
    let spec = DecoySpec {
        image_size: 32,
        confounder_patch_size: 4,
        train_per_class: 5,
        val_per_class: 1,
        test_per_class: 1,
        rng_seed: 3,
        ..DecoySpec::default()
    };
    let data = generate_decoy(&spec).map_err(e)?;
    let small = Model::new(
        &ModelConfig {
            input_size: 32,
            ..ModelConfig::small_cnn(4)
        },
        DType::F32,
        &Device::Cpu,
    )
    .map_err(e)?;
    let refs: Vec<&Sample> = data.train.samples().iter().collect();
    let mut count = 0;
    for class in [CamClass::GroundTruth, CamClass::Predicted] {
        for cam in cams_for_samples(&small, &refs, class, 8).map_err(e)? {
            ensure(cam.map.iter().all(|v| (0.0..=1.0).contains(v)), || format!("cam of {} leaves [0,1]", cam.source))?;
            count += 1;
        }
    }

    let toy = Model::new(&toy_config(), DType::F32, &Device::Cpu).map_err(e)?;
    let bundle = random_bundle(2, 6, 8, 3);
    let trefs: Vec<&Sample> = bundle.samples().iter().collect();
    let before = cams_for_samples(&toy, &trefs, CamClass::GroundTruth, 6).map_err(e)?;
    let fc = toy.var("fc2.weight").unwrap();
    fc.set(&(fc.as_tensor() * 3.0).map_err(e)?).map_err(e)?;
    let after = cams_for_samples(&toy, &trefs, CamClass::GroundTruth, 6).map_err(e)?;
    let mut worst: f32 = 0.0;
    for (p, q) in before.iter().zip(&after) {
        for (x, y) in p.map.iter().zip(&q.map) {
            worst = worst.max((x - y).abs());
        }
    }
    ensure(worst <= 1e-5, || format!("scaling by 3 moves cams by {worst:e}"))?;

    let w = toy.var("conv2.weight").unwrap();
    w.set(&w.as_tensor().zeros_like().map_err(e)?).map_err(e)?;
    let bias = toy.var("conv2.bias").unwrap();
    bias.set(&bias.as_tensor().zeros_like().map_err(e)?).map_err(e)?;
    for cam in cams_for_samples(&toy, &trefs, CamClass::GroundTruth, 6).map_err(e)? {
        ensure(cam.map.iter().all(|&v| v == 0.0), || "zero activations give a nonzero cam".into())?;
    }
    Ok(format!("{count} cams in [0,1]; weight scaling changes cams by {worst:.1e}; zero activations give zero cams"))
}

// Criteria 6 and 7 drive the binary.

fn exbl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exbl"))
        .args(args)
        .arg("--quiet")
        .current_dir(cwd)
        .output()
        .expect("exbl binary runs")
}

fn checked(args: &[&str], cwd: &Path) -> Result<Output, String> {
    let out = exbl(args, cwd);
    ensure(out.status.success(), || {
        format!("`exbl {}` exited with {:?}: {}", args.join(" "), out.status.code(), String::from_utf8_lossy(&out.stderr).trim())
    })?;
    Ok(out)
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

const SMOKE_SPEC: &str = "image_size = 32\nconfounder_patch_size = 4\ntrain_per_class = 12\nval_per_class = 4\ntest_per_class = 4\nrng_seed = 5\n";
const SMOKE_CONFIG: &str = "conv_channels = [8, 8, 8]\nhead_width = 16\nepochs = 3\npatience = 3\nlearning_rate = 0.001\nbatch_size = 8\n";

fn pipeline_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(e)?;
    let p = dir.path();
    std::fs::write(p.join("spec.toml"), SMOKE_SPEC).map_err(e)?;
    std::fs::write(p.join("cfg.toml"), SMOKE_CONFIG).map_err(e)?;
    checked(&["gen-data", "--spec", "spec.toml", "--out", "d1"], p)?;
    checked(&["gen-data", "--spec", "spec.toml", "--out", "d2"], p)?;
    let (a, b) = (tree_bytes(&p.join("d1")), tree_bytes(&p.join("d2")));
    ensure(a == b, || "two generations differ".into())?;

    checked(&["train", "--data", "d1", "--config", "cfg.toml", "--out", "base"], p)?;
    let e1 = checked(&["evaluate", "--run", "base", "--split", "test"], p)?.stdout;
    let e2 = checked(&["evaluate", "--run", "base", "--split", "test"], p)?.stdout;
    ensure(e1 == e2 && !e1.is_empty(), || "evaluate outputs differ".into())?;

    let data = generate_decoy(&DecoySpec {
        image_size: 32,
        confounder_patch_size: 4,
        train_per_class: 8,
        val_per_class: 2,
        test_per_class: 2,
        rng_seed: 5,
        ..DecoySpec::default()
    })
    .map_err(e)?;
    let model = Model::new(
        &ModelConfig {
            input_size: 32,
            conv_channels: vec![8, 8, 8],
            head_width: 16,
            ..ModelConfig::small_cnn(4)
        },
        DType::F32,
        &Device::Cpu,
    )
    .map_err(e)?;
    let frozen = |m: &Model| -> Vec<Vec<u32>> {
        m.frozen_named()
            .iter()
            .map(|(_, v)| v.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().map(|x| x.to_bits()).collect())
            .collect()
    };
    let cfg = TrainConfig {
        epochs: 2,
        patience: 2,
        learning_rate: 1e-3,
        batch_size: 8,
        ..TrainConfig::base()
    };
    let before = frozen(&model);
    let base = train_base(&model, &data.train, &data.val, &cfg, &mut NoopObserver).map_err(e)?;
    let pair = select_exemplars(&model, &data.train).map_err(e)?.pair;
    refine_exbl(&model, &base, &pair, &data.train, &data.val, &cfg, &mut NoopObserver).map_err(e)?;
    ensure(!before.is_empty() && frozen(&model) == before, || "frozen parameters moved".into())?;
    Ok(format!(
        "{} dataset files byte-identical; evaluate output identical; {} frozen tensors bit-identical",
        a.len(),
        before.len()
    ))
}

fn cli_smoke() -> Outcome {
    let t = Instant::now();
    let dir = tempfile::tempdir().map_err(e)?;
    let p = dir.path();
    std::fs::write(p.join("spec.toml"), SMOKE_SPEC).map_err(e)?;
    std::fs::write(p.join("cfg.toml"), SMOKE_CONFIG).map_err(e)?;
    checked(&["gen-data", "--spec", "spec.toml", "--out", "data"], p)?;
    checked(&["train", "--data", "data", "--config", "cfg.toml", "--out", "runs/base"], p)?;
    checked(&["select-exemplars", "--run", "runs/base", "--data", "data"], p)?;
    checked(
        &["refine", "--run", "runs/base", "--exemplars", "runs/base/exemplars", "--config", "cfg.toml", "--out", "runs/exbl"],
        p,
    )?;
    let out = checked(&["compare", "--a", "runs/base", "--b", "runs/exbl", "--data", "data"], p)?;
    let report: ComparisonReport = serde_json::from_slice(&out.stdout).map_err(|err| format!("compare stdout: {err}"))?;
    let d = &report.deltas;
    ensure(d.mean_ar.is_some(), || "delta mean_ar is null".into())?;
    ensure([d.accuracy, d.macro_precision, d.macro_recall].iter().all(|v| v.is_finite()), || "non-finite deltas".into())?;
    ensure(d.per_class_accuracy.len() == 4, || "per-class deltas missing".into())?;
    Ok(format!(
        "pipeline exit 0 in {:.0}s; delta accuracy {:+.3}, delta AR {:+.3}",
        t.elapsed().as_secs_f64(),
        d.accuracy,
        d.mean_ar.unwrap()
    ))
}

fn main() {
    let checks: [(usize, &str, fn() -> Outcome); 7] = [
        (2, "gradient correctness", gradient_correctness),
        (3, "oracle equivalence", oracle_equivalence),
        (4, "loss identities", loss_identities),
        (5, "cam contracts", cam_contracts),
        (6, "pipeline determinism", pipeline_determinism),
        (7, "CLI end-to-end smoke", cli_smoke),
        (1, "directional eXBL effect", directional_effect),
    ];
    let mut results = Vec::new();
    for (n, name, check) in checks {
        eprintln!("running criterion {n}: {name}");
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        results.push((n, name, outcome));
    }
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
