use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use exbl_core::data::load_split;
use exbl_core::explain::{cams_for_samples, CamClass};
use exbl_core::metrics::activation_recall;
use exbl_core::{DatasetBundle, Model, RunDir, Sample};
use serde::Serialize;

use crate::error::{ApiError, ApiResult};
use crate::jobs::Job;

/// One explanation in the review gallery.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub id: String,
    pub label: usize,
    pub class_name: String,
    pub ar: Option<f64>,
}

struct CachedModel {
    fingerprint: String,
    model: Arc<Model>,
}

/// Shared state behind every handler.
pub struct AppState {
    pub runs_dir: PathBuf,
    pub data_dir: PathBuf,
    splits: Mutex<HashMap<String, Arc<DatasetBundle>>>,
    models: Mutex<HashMap<String, CachedModel>>,
    candidates: Mutex<HashMap<String, (String, Arc<Vec<Candidate>>)>>,
    pub(crate) jobs: Mutex<HashMap<String, Arc<Job>>>,
    busy: AtomicBool,
    next_job: AtomicU64,
}

pub(crate) fn guard<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

/// Held while a training job runs; releases the service-wide lock on drop.
pub struct JobLock(Arc<AppState>);

impl Drop for JobLock {
    fn drop(&mut self) {
        self.0.busy.store(false, Ordering::SeqCst);
    }
}

impl AppState {
    pub fn new(runs_dir: impl Into<PathBuf>, data_dir: impl Into<PathBuf>) -> Arc<Self> {
        Arc::new(AppState {
            runs_dir: runs_dir.into(),
            data_dir: data_dir.into(),
            splits: Mutex::default(),
            models: Mutex::default(),
            candidates: Mutex::default(),
            jobs: Mutex::default(),
            busy: AtomicBool::new(false),
            next_job: AtomicU64::new(1),
        })
    }

    pub fn is_busy(&self) -> bool {
        self.busy.load(Ordering::SeqCst)
    }

    pub fn try_lock(self: &Arc<Self>) -> ApiResult<JobLock> {
        self.busy
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .map(|_| JobLock(self.clone()))
            .map_err(|_| ApiError::conflict("a training job is already active"))
    }

    pub(crate) fn next_job_id(&self) -> String {
        format!("job-{}", self.next_job.fetch_add(1, Ordering::SeqCst))
    }

    /// Resolves a run id to a directory below the runs root.
    pub fn run(&self, id: &str) -> ApiResult<RunDir> {
        let valid = !id.is_empty() && id != "." && id != ".." && !id.contains(['/', '\\']);
        let run = RunDir::new(self.runs_dir.join(id));
        if !valid || !run.exists() {
            return Err(ApiError::not_found(format!("unknown run '{id}'")));
        }
        Ok(run)
    }

    pub fn split(&self, name: &str) -> ApiResult<Arc<DatasetBundle>> {
        if let Some(b) = guard(&self.splits).get(name) {
            return Ok(b.clone());
        }
        let bundle = Arc::new(load_split(&self.data_dir, name)?);
        guard(&self.splits).insert(name.to_string(), bundle.clone());
        Ok(bundle)
    }

    /// Looks a sample up in train, val and test, in that order.
    pub fn sample(&self, id: &str, split: Option<&str>) -> ApiResult<(Arc<DatasetBundle>, usize)> {
        let names: Vec<&str> = split.map_or_else(|| vec!["train", "val", "test"], |s| vec![s]);
        for name in names {
            let bundle = match self.split(name) {
                Ok(b) => b,
                Err(e) if e.status == axum::http::StatusCode::NOT_FOUND => continue,
                Err(e) => return Err(e),
            };
            if let Some(i) = bundle.samples().iter().position(|s| s.id == id) {
                return Ok((bundle, i));
            }
        }
        Err(ApiError::not_found(format!("unknown sample '{id}'")))
    }

    pub fn model(&self, run: &RunDir) -> ApiResult<Arc<Model>> {
        let fingerprint = run.checkpoint()?.fingerprint;
        let id = run.id();
        if let Some(c) = guard(&self.models).get(&id).filter(|c| c.fingerprint == fingerprint) {
            return Ok(c.model.clone());
        }
        let (model, _) = run.load_model()?;
        let model = Arc::new(model);
        guard(&self.models).insert(
            id,
            CachedModel {
                fingerprint,
                model: model.clone(),
            },
        );
        Ok(model)
    }

    /// Every train sample with the ground-truth-class AR of the run's model.
    pub fn candidates(&self, run: &RunDir) -> ApiResult<Arc<Vec<Candidate>>> {
        let fingerprint = run.checkpoint()?.fingerprint;
        let id = run.id();
        if let Some((fp, c)) = guard(&self.candidates).get(&id) {
            if *fp == fingerprint {
                return Ok(c.clone());
            }
        }
        let model = self.model(run)?;
        let train = self.split("train")?;
        let refs: Vec<&Sample> = train.samples().iter().collect();
        let cams = cams_for_samples(&model, &refs, CamClass::GroundTruth, 32)?;
        let mut out = Vec::with_capacity(refs.len());
        for (s, cam) in refs.iter().zip(&cams) {
            let ar = match &s.mask {
                Some(m) if m.iter().any(|&v| v != 0) => Some(activation_recall(cam, m)?),
                _ => None,
            };
            out.push(Candidate {
                id: s.id.clone(),
                label: s.label,
                class_name: train.class_names()[s.label].clone(),
                ar,
            });
        }
        let out = Arc::new(out);
        guard(&self.candidates).insert(id, (fingerprint, out.clone()));
        Ok(out)
    }

    pub(crate) fn job(&self, id: &str) -> ApiResult<Arc<Job>> {
        guard(&self.jobs)
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown job '{id}'")))
    }

    pub fn runs_root(&self) -> &Path {
        &self.runs_dir
    }
}


