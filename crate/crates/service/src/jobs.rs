use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use exbl_core::report::compare_checkpoints;
use exbl_core::train::{evaluate, refine_exbl, refine_mask_penalty, StopReason};
use exbl_core::{
    ComparisonReport, EpochRecord, ExemplarPair, ExplanationLoss, LossBreakdown, Phase, RunConfig, RunDir, TrainObserver,
};
use serde::Serialize;

use crate::state::{guard, AppState, JobLock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Idle,
    Training,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobResult {
    pub checkpoint: String,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    pub comparison: ComparisonReport,
}

/// Snapshot returned by the job endpoint.
#[derive(Debug, Clone, Serialize)]
pub struct JobStatus {
    pub id: String,
    pub run: String,
    pub out_run: String,
    pub state: JobState,
    pub epoch: usize,
    pub total_epochs: usize,
    pub train: Option<LossBreakdown>,
    pub val: Option<LossBreakdown>,
    pub val_accuracy: Option<f64>,
    pub val_mean_ar: Option<f64>,
    pub cancel_requested: bool,
    pub history: Vec<EpochRecord>,
    pub error: Option<String>,
    pub result: Option<JobResult>,
}

pub struct Job {
    status: Mutex<JobStatus>,
    cancel: AtomicBool,
}

impl Job {
    pub(crate) fn new(id: String, run: String, out_run: String, total_epochs: usize) -> Arc<Self> {
        Arc::new(Job {
            status: Mutex::new(JobStatus {
                id,
                run,
                out_run,
                state: JobState::Idle,
                epoch: 0,
                total_epochs,
                train: None,
                val: None,
                val_accuracy: None,
                val_mean_ar: None,
                cancel_requested: false,
                history: Vec::new(),
                error: None,
                result: None,
            }),
            cancel: AtomicBool::new(false),
        })
    }

    pub fn status(&self) -> JobStatus {
        guard(&self.status).clone()
    }

    pub fn cancel(&self) {
        self.cancel.store(true, Ordering::SeqCst);
        guard(&self.status).cancel_requested = true;
    }

    fn update(&self, f: impl FnOnce(&mut JobStatus)) {
        f(&mut guard(&self.status));
    }
}

struct Progress<'a>(&'a Job);

impl TrainObserver for Progress<'_> {
    fn on_epoch(&mut self, r: &EpochRecord) {
        self.0.update(|s| {
            s.epoch = r.epoch;
            s.train = Some(r.train.clone());
            s.val = Some(r.val.clone());
            s.val_accuracy = Some(r.val_accuracy);
            s.val_mean_ar = r.val_mean_ar;
            s.history.push(r.clone());
        });
    }

    fn should_stop(&self) -> bool {
        self.0.cancel.load(Ordering::SeqCst)
    }
}

pub(crate) struct Request {
    pub base: RunDir,
    pub out: RunDir,
    pub pair: ExemplarPair,
    pub config: RunConfig,
}

fn refine(state: &AppState, job: &Job, req: &Request) -> exbl_core::Result<JobResult> {
    let (model, base) = req.base.load_model()?;
    let train = state.split("train").map_err(|e| exbl_core::Error::NotFound(e.message))?;
    let val = state.split("val").map_err(|e| exbl_core::Error::NotFound(e.message))?;
    let test = state.split("test").map_err(|e| exbl_core::Error::NotFound(e.message))?;
    let cfg = req.config.train_config(Phase::Exbl)?;
    let mut progress = Progress(job);
    let ckpt = match req.config.explanation_loss {
        ExplanationLoss::Triplet => refine_exbl(&model, &base, &req.pair, &train, &val, &cfg, &mut progress)?,
        ExplanationLoss::MaskPenalty => refine_mask_penalty(&model, &base, &train, &val, &cfg, &mut progress)?,
    };
    let out = RunDir::create(req.out.path(), true)?;
    out.save(&model, &ckpt, &req.config)?;
    req.pair.save(&out.exemplar_dir())?;
    out.save_report(&evaluate(&model, &val)?)?;
    let (unrefined, _) = req.base.load_model()?;
    Ok(JobResult {
        checkpoint: ckpt.fingerprint.clone(),
        best_epoch: ckpt.best_epoch,
        stop_reason: ckpt.stop_reason,
        comparison: compare_checkpoints(&unrefined, &model, &test)?,
    })
}

/// Runs a refinement job to completion on the calling thread.
pub(crate) fn run(state: Arc<AppState>, job: Arc<Job>, req: Request, lock: JobLock) {
    job.update(|s| s.state = JobState::Training);
    let outcome = refine(&state, &job, &req);
    drop(lock);
    job.update(|s| match outcome {
        Ok(r) => {
            s.state = JobState::Done;
            s.result = Some(r);
        }
        Err(e) => {
            tracing::error!(job = %s.id, error = %e, "refinement failed");
            s.state = JobState::Failed;
            s.error = Some(e.to_string());
        }
    });
}
