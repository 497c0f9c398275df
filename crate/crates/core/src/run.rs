//! On-disk layout of a training run.
//!
//! ```text
//! <run>/checkpoint.safetensors   parameters of the kept epoch
//! <run>/checkpoint.json          Checkpoint metadata
//! <run>/config.toml              RunConfig echo
//! <run>/history.jsonl            one EpochRecord per line
//! <run>/steps.jsonl              one StepRecord per line
//! <run>/report.json              EvalReport on the validation split
//! <run>/exemplars/               ExemplarPair selected from this run
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::Device;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::exemplar::ExemplarPair;
use crate::metrics::EvalReport;
use crate::model::Model;
use crate::train::Checkpoint;

pub const WEIGHTS_FILE: &str = "checkpoint.safetensors";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const STEPS_FILE: &str = "steps.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const EXEMPLAR_DIR: &str = "exemplars";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    path: PathBuf,
}

fn jsonl<T: Serialize>(records: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write(path, &bytes)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.is_file() {
        return Err(Error::NotFound(path.display().to_string()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

impl RunDir {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        RunDir { path: path.into() }
    }

    /// Prepares `path` for a new run. An existing run is only replaced with `force`.
    pub fn create(path: impl Into<PathBuf>, force: bool) -> Result<Self> {
        let run = RunDir::new(path);
        if run.exists() {
            if !force {
                return Err(Error::invalid(
                    "out",
                    format!("{} already holds a run; pass --force to overwrite", run.path.display()),
                ));
            }
            for name in [WEIGHTS_FILE, CHECKPOINT_FILE, HISTORY_FILE, STEPS_FILE, REPORT_FILE] {
                let p = run.path.join(name);
                if p.exists() {
                    std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
                }
            }
            let ex = run.exemplar_dir();
            if ex.exists() {
                std::fs::remove_dir_all(&ex).map_err(|e| Error::io(&ex, e))?;
            }
        }
        std::fs::create_dir_all(&run.path).map_err(|e| Error::io(&run.path, e))?;
        Ok(run)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Directory name, used as the run id.
    pub fn id(&self) -> String {
        self.path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.path.display().to_string())
    }

    pub fn exists(&self) -> bool {
        self.path.join(CHECKPOINT_FILE).is_file()
    }

    pub fn exemplar_dir(&self) -> PathBuf {
        self.path.join(EXEMPLAR_DIR)
    }

    pub fn save(&self, model: &Model, checkpoint: &Checkpoint, config: &RunConfig) -> Result<()> {
        std::fs::create_dir_all(&self.path).map_err(|e| Error::io(&self.path, e))?;
        model.save(&self.path.join(WEIGHTS_FILE))?;
        write_json(&self.path.join(CHECKPOINT_FILE), checkpoint)?;
        write(&self.path.join(CONFIG_FILE), config.to_toml_string()?.as_bytes())?;
        write(&self.path.join(HISTORY_FILE), &jsonl(&checkpoint.history)?)?;
        write(&self.path.join(STEPS_FILE), &jsonl(&checkpoint.steps)?)
    }

    pub fn save_report(&self, report: &EvalReport) -> Result<()> {
        write_json(&self.path.join(REPORT_FILE), report)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        if !self.exists() {
            return Err(Error::NotFound(format!("run {}", self.path.display())));
        }
        read_json(&self.path.join(CHECKPOINT_FILE))
    }

    pub fn config(&self) -> Result<RunConfig> {
        RunConfig::load(&self.path.join(CONFIG_FILE))
    }

    pub fn report(&self) -> Result<EvalReport> {
        read_json(&self.path.join(REPORT_FILE))
    }

    /// Rebuilds the model and loads the kept parameters.
    pub fn load_model(&self) -> Result<(Model, Checkpoint)> {
        let checkpoint = self.checkpoint()?;
        let config = self.config()?;
        let mut model_cfg = checkpoint.model.clone();
        model_cfg.pretrained = None;
        let mut model = Model::new(&model_cfg, config.precision.dtype(), &Device::Cpu)?;
        model.load(&self.path.join(WEIGHTS_FILE))?;
        Ok((model, checkpoint))
    }

    pub fn exemplars(&self) -> Result<ExemplarPair> {
        let dir = self.exemplar_dir();
        if !dir.join(crate::exemplar::PAIR_META).is_file() {
            return Err(Error::NotFound(format!("exemplar pair in {}", dir.display())));
        }
        ExemplarPair::load(&dir)
    }
}

/// Runs found directly below `root`, sorted by id.
pub fn list_runs(root: &Path) -> Result<Vec<RunDir>> {
    if !root.is_dir() {
        return Ok(Vec::new());
    }
    let mut runs = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let run = RunDir::new(entry.path());
        if run.exists() {
            runs.push(run);
        }
    }
    runs.sort_by_key(|r| r.id());
    Ok(runs)
}
