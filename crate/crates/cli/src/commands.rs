use std::path::{Path, PathBuf};

use exbl_core::data::{generate_decoy, load_radiography, load_split, DecoySpec, RadiographyOptions, MANIFEST_FILE};
use exbl_core::exemplar::{select_exemplars as auto_select, set_exemplars_manual, PAIR_META};
use exbl_core::explain::{cam_png, gradcam, overlay_png};
use exbl_core::imageio::write_bytes;
use exbl_core::metrics::activation_recall;
use exbl_core::model::Model;
use exbl_core::report::{compare_checkpoints, format_tables, render_panels};
use exbl_core::run::{read_json, write_json};
use exbl_core::train::{evaluate as eval_split, refine_exbl, refine_mask_penalty, train_base, StopReason};
use exbl_core::{
    Checkpoint, DatasetBundle, Device, EpochRecord, EvalReport, ExemplarMeta, ExemplarPair, ExplanationLoss, Phase, RunConfig,
    RunDir, Sample, TrainObserver,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};
use crate::{Compare, Evaluate, ExplainClass, Explain, GenData, Prepare, Refine, SelectExemplars, Serve, Train};

/// Records which dataset a run was trained on.
const DATA_FILE: &str = "data.json";

#[derive(Serialize, Deserialize)]
struct DataSource {
    data: PathBuf,
}

fn to_value<T: Serialize>(v: &T) -> CliResult<Value> {
    Ok(serde_json::to_value(v)?)
}

/// A bare name resolves below `EXBL_RUNS_DIR` when set and not present in the working directory.
fn run_path(p: &Path) -> PathBuf {
    match std::env::var_os("EXBL_RUNS_DIR") {
        Some(root) if p.components().count() == 1 && !p.exists() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}

fn existing_run(p: &Path) -> CliResult<RunDir> {
    let run = RunDir::new(run_path(p));
    if !run.exists() {
        return Err(CliError::validation("not_found", format!("{} is not a run directory", run.path().display())));
    }
    Ok(run)
}

fn data_dir(explicit: Option<&Path>, run: &RunDir) -> CliResult<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    let recorded: DataSource = read_json(&run.path().join(DATA_FILE)).map_err(|_| {
        CliError::validation("missing_data", format!("{} does not record its dataset; pass --data", run.path().display()))
    })?;
    Ok(recorded.data)
}

fn record_data(run: &RunDir, data: &Path) -> CliResult<()> {
    let data = std::fs::canonicalize(data).unwrap_or_else(|_| data.to_path_buf());
    write_json(&run.path().join(DATA_FILE), &DataSource { data })?;
    Ok(())
}

/// Clears a dataset directory for regeneration, or refuses without `force`.
fn prepare_dataset_dir(out: &Path, force: bool) -> CliResult<()> {
    if out.join(MANIFEST_FILE).exists() {
        if !force {
            return Err(CliError::validation(
                "invalid",
                format!("{} already holds a dataset; pass --force to overwrite", out.display()),
            ));
        }
        for name in ["train", "val", "test", "test_clean"] {
            let d = out.join(name);
            if d.is_dir() {
                std::fs::remove_dir_all(&d).map_err(|e| exbl_core::Error::io(&d, e))?;
            }
        }
    }
    Ok(())
}

fn read_decoy_spec(path: &Path) -> CliResult<DecoySpec> {
    let text = std::fs::read_to_string(path).map_err(|e| exbl_core::Error::io(path, e))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let spec = if is_json {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e: toml::de::Error| e.message().to_string())
    };
    spec.map_err(|m| CliError::validation("config", format!("{}: {m}", path.display())))
}

pub fn gen_data(a: GenData) -> CliResult<Value> {
    let mut spec = match &a.spec {
        Some(p) => read_decoy_spec(p)?,
        None => DecoySpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.rng_seed = seed;
    }
    spec.validate()?;
    prepare_dataset_dir(&a.out, a.force)?;
    let splits = generate_decoy(&spec)?;
    let manifest = splits.manifest("decoy", spec.rng_seed, to_value(&spec)?);
    splits.save(&a.out, &manifest)?;
    tracing::info!(out = %a.out.display(), train = splits.train.len(), "decoy dataset written");
    to_value(&manifest)
}

pub fn prepare(a: Prepare) -> CliResult<Value> {
    let opts = RadiographyOptions {
        per_class_train: a.per_class_train,
        val_total: a.val,
        test_total: a.test,
        target_size: a.size,
        seed: a.seed,
        require_masks: !a.allow_unmasked,
        ..RadiographyOptions::default()
    };
    prepare_dataset_dir(&a.out, a.force)?;
    let splits = load_radiography(&a.root, &opts)?;
    let manifest = splits.manifest("radiography", a.seed, to_value(&opts)?);
    splits.save(&a.out, &manifest)?;
    to_value(&manifest)
}

/// Logs one line per epoch on stderr.
struct EpochLog;

impl TrainObserver for EpochLog {
    fn on_epoch(&mut self, r: &EpochRecord) {
        tracing::info!(
            epoch = r.epoch,
            lr = r.learning_rate,
            train_loss = format!("{:.4}", r.train.total),
            val_loss = format!("{:.4}", r.val.total),
            val_acc = format!("{:.3}", r.val_accuracy),
            val_ar = r.val_mean_ar.map(|v| format!("{v:.3}")),
            "epoch done"
        );
    }
}

#[derive(Serialize)]
struct RunSummary<'a> {
    run: String,
    path: PathBuf,
    phase: Phase,
    fingerprint: &'a str,
    parent: Option<&'a str>,
    best_epoch: usize,
    best_val_loss: f64,
    epochs_run: usize,
    stop_reason: StopReason,
    exemplars: Option<&'a ExemplarMeta>,
    val_report: &'a EvalReport,
}

fn summary(run: &RunDir, ckpt: &Checkpoint, report: &EvalReport) -> CliResult<Value> {
    to_value(&RunSummary {
        run: run.id(),
        path: run.path().to_path_buf(),
        phase: ckpt.phase,
        fingerprint: &ckpt.fingerprint,
        parent: ckpt.parent.as_deref(),
        best_epoch: ckpt.best_epoch,
        best_val_loss: ckpt.best_val_loss,
        epochs_run: ckpt.history.len(),
        stop_reason: ckpt.stop_reason,
        exemplars: ckpt.exemplars.as_ref(),
        val_report: report,
    })
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

pub fn train(a: Train) -> CliResult<Value> {
    let config = load_config(a.config.as_deref())?;
    let train = load_split(&a.data, "train")?;
    let val = load_split(&a.data, "val")?;
    let (h, w, c) = train.resolution();
    if h != w {
        return Err(CliError::validation("shape", format!("images are {h}×{w}; square images are required")));
    }
    let model_cfg = config.model_config(train.num_classes(), h, c)?;
    let train_cfg = config.train_config(Phase::Unrefined)?;
    let run = RunDir::create(run_path(&a.out), a.force)?;
    let model = Model::new(&model_cfg, config.precision.dtype(), &Device::Cpu)?;
    tracing::info!(
        params = model.num_params(),
        trainable = model.num_trainable_params(),
        target = model.target_layer(),
        "training unrefined model"
    );
    let ckpt = train_base(&model, &train, &val, &train_cfg, &mut EpochLog)?;
    run.save(&model, &ckpt, &config)?;
    let report = eval_split(&model, &val)?;
    run.save_report(&report)?;
    record_data(&run, &a.data)?;
    summary(&run, &ckpt, &report)
}

#[derive(Serialize)]
struct SelectionOutput {
    dir: PathBuf,
    #[serde(flatten)]
    meta: ExemplarMeta,
}

pub fn select_exemplars(a: SelectExemplars) -> CliResult<Value> {
    let run = existing_run(&a.run)?;
    let data = data_dir(a.data.as_deref(), &run)?;
    let (model, _) = run.load_model()?;
    let bundle = load_split(&data, &a.split)?;
    let out = a.out.clone().unwrap_or_else(|| run.exemplar_dir());
    let (pair, table) = match (&a.good, &a.bad) {
        (Some(good), Some(bad)) => (set_exemplars_manual(good, bad, &model, &bundle)?, None),
        _ => {
            let sel = auto_select(&model, &bundle)?;
            (sel.pair.clone(), Some(sel))
        }
    };
    if out.join(PAIR_META).is_file() && !a.force {
        let existing: ExemplarMeta = read_json(&out.join(PAIR_META))?;
        if existing != pair.meta {
            return Err(CliError::validation(
                "invalid",
                format!("{} holds a different pair; pass --force to replace it", out.display()),
            ));
        }
    }
    match table {
        Some(sel) => sel.save(&out)?,
        None => pair.save(&out)?,
    }
    to_value(&SelectionOutput { dir: out, meta: pair.meta })
}

pub fn refine(a: Refine) -> CliResult<Value> {
    let base_run = existing_run(&a.run)?;
    let data = data_dir(a.data.as_deref(), &base_run)?;
    let config = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => base_run.config()?,
    };
    let out_path = run_path(&a.out);
    let same = match (std::fs::canonicalize(&out_path), std::fs::canonicalize(base_run.path())) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    };
    if same {
        return Err(CliError::validation("invalid", "--out must differ from the base run"));
    }
    let (model, base) = base_run.load_model()?;
    let pair_dir = a.exemplars.clone().unwrap_or_else(|| base_run.exemplar_dir());
    let train_cfg = config.train_config(Phase::Exbl)?;
    let train = load_split(&data, "train")?;
    let val = load_split(&data, "val")?;
    let pair = match config.explanation_loss {
        ExplanationLoss::Triplet => Some(ExemplarPair::load(&pair_dir).map_err(|e| match e {
            exbl_core::Error::Io { .. } => CliError::validation(
                "not_found",
                format!("no exemplar pair in {}; run select-exemplars first", pair_dir.display()),
            ),
            other => other.into(),
        })?),
        ExplanationLoss::MaskPenalty => None,
    };
    let out = RunDir::create(&out_path, a.force)?;
    let ckpt = match &pair {
        Some(pair) => refine_exbl(&model, &base, pair, &train, &val, &train_cfg, &mut EpochLog)?,
        None => refine_mask_penalty(&model, &base, &train, &val, &train_cfg, &mut EpochLog)?,
    };
    out.save(&model, &ckpt, &config)?;
    if let Some(pair) = &pair {
        pair.save(&out.exemplar_dir())?;
    }
    let report = eval_split(&model, &val)?;
    out.save_report(&report)?;
    record_data(&out, &data)?;
    summary(&out, &ckpt, &report)
}

pub fn evaluate(a: Evaluate) -> CliResult<Value> {
    let run = existing_run(&a.run)?;
    let data = data_dir(a.data.as_deref(), &run)?;
    let (model, _) = run.load_model()?;
    let bundle = load_split(&data, &a.split)?;
    let report = eval_split(&model, &bundle)?;
    write_json(&run.path().join(format!("eval_{}.json", a.split)), &report)?;
    to_value(&report)
}

/// `n` masked samples spread evenly over the bundle.
fn panel_samples(bundle: &DatasetBundle, n: usize) -> Vec<&Sample> {
    let masked: Vec<&Sample> = bundle.samples().iter().filter(|s| s.mask.is_some()).collect();
    let n = n.min(masked.len());
    (0..n).map(|i| masked[i * masked.len() / n]).collect()
}

pub fn compare(a: Compare) -> CliResult<Value> {
    let run_a = existing_run(&a.a)?;
    let run_b = existing_run(&a.b)?;
    let data = data_dir(a.data.as_deref(), &run_b)?;
    let (model_a, _) = run_a.load_model()?;
    let (model_b, _) = run_b.load_model()?;
    let bundle = load_split(&data, &a.split)?;
    let report = compare_checkpoints(&model_a, &model_b, &bundle)?;
    let out = a.out.clone().unwrap_or_else(|| run_b.path().join(format!("compare_{}", a.split)));
    write_json(&out.join("comparison.json"), &report)?;
    write_bytes(&out.join("tables.md"), format_tables(&report, bundle.class_names()).as_bytes())?;
    let panels = render_panels(&[&model_a, &model_b], &panel_samples(&bundle, a.panels), &out.join("panels"))?;
    tracing::info!(out = %out.display(), panels = panels.len(), "comparison written");
    to_value(&report)
}

fn find_sample(data: &Path, id: &str, split: Option<&str>) -> CliResult<(String, Sample)> {
    let names: Vec<&str> = split.map_or_else(|| vec!["train", "val", "test"], |s| vec![s]);
    for name in names {
        let bundle = match load_split(data, name) {
            Ok(b) => b,
            Err(exbl_core::Error::NotFound(_)) => continue,
            Err(e) => return Err(e.into()),
        };
        if let Some(s) = bundle.get(id) {
            return Ok((name.to_string(), s.clone()));
        }
    }
    Err(CliError::validation("not_found", format!("sample '{id}' not found in {}", data.display())))
}

#[derive(Serialize)]
struct ExplainOutput {
    sample: String,
    split: String,
    label: usize,
    class_idx: usize,
    ar: Option<f64>,
    cam: PathBuf,
    overlay: PathBuf,
}

pub fn explain(a: Explain) -> CliResult<Value> {
    let run = existing_run(&a.run)?;
    let data = data_dir(a.data.as_deref(), &run)?;
    let (model, _) = run.load_model()?;
    let (split, sample) = find_sample(&data, &a.sample, a.split.as_deref())?;
    let class_idx = match a.class {
        ExplainClass::Truth => sample.label,
        ExplainClass::Predicted => {
            let x = exbl_core::data::images_to_tensor(&[&sample.image], model.dtype(), model.device())?;
            model.predict_labels(&x, 1)?[0]
        }
    };
    let cam = gradcam(&model, &sample, class_idx)?;
    let ar = match &sample.mask {
        Some(m) if m.iter().any(|&v| v != 0) => Some(activation_recall(&cam, m)?),
        _ => None,
    };
    let out = a.out.clone().unwrap_or_else(|| run.path().join("explain"));
    let cam_path = out.join(format!("{}_cam.png", sample.id));
    let overlay_path = out.join(format!("{}_overlay.png", sample.id));
    write_bytes(&cam_path, &cam_png(&cam)?)?;
    write_bytes(&overlay_path, &overlay_png(&sample.image, &cam)?)?;
    to_value(&ExplainOutput {
        sample: sample.id,
        split,
        label: sample.label,
        class_idx,
        ar,
        cam: cam_path,
        overlay: overlay_path,
    })
}

pub fn serve(a: Serve) -> CliResult<Value> {
    if !a.data.join(MANIFEST_FILE).is_file() {
        return Err(CliError::validation("not_found", format!("{} is not a dataset directory", a.data.display())));
    }
    let opts = exbl_service::ServeOptions {
        runs_dir: a.runs,
        data_dir: a.data,
        addr: std::net::SocketAddr::new(a.host, a.port),
        static_dir: a.static_dir,
        cors_origin: a.cors_origin,
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::runtime("io", e.to_string()))?;
    rt.block_on(exbl_service::serve(opts))
        .map_err(|e| CliError::runtime("io", e.to_string()))?;
    Ok(Value::Null)
}
