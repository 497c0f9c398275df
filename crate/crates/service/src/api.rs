use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use exbl_core::exemplar::set_exemplars_manual;
use exbl_core::explain::{cam_png, gradcam, overlay_png};
use exbl_core::imageio::{encode_mask, encode_rgb};
use exbl_core::report::compare_checkpoints;
use exbl_core::run::list_runs;
use exbl_core::{Checkpoint, ComparisonReport, EvalReport, ExemplarMeta, RunConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{ApiError, ApiResult};
use crate::jobs::{self, Job, JobStatus};
use crate::state::{guard, AppState, Candidate};

type Shared = Arc<AppState>;

pub fn routes() -> Router<Shared> {
    Router::new()
        .route("/api/runs", get(runs))
        .route("/api/candidates", get(candidates))
        .route("/api/exemplars", post(exemplars))
        .route("/api/refine", post(refine))
        .route("/api/jobs/{id}", get(job))
        .route("/api/jobs/{id}/cancel", post(cancel))
        .route("/api/images/{sample_id}/{kind}", get(image))
        .route("/api/compare", get(compare))
}

/// Runs CPU-bound work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub id: String,
    pub phase: exbl_core::Phase,
    pub fingerprint: String,
    pub parent: Option<String>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub exemplars: Option<ExemplarMeta>,
    pub report: Option<EvalReport>,
}

async fn runs(State(state): State<Shared>) -> ApiResult<Json<Vec<RunSummary>>> {
    blocking(move || {
        let mut out = Vec::new();
        for run in list_runs(state.runs_root())? {
            let ckpt: Checkpoint = run.checkpoint()?;
            out.push(RunSummary {
                id: run.id(),
                phase: ckpt.phase,
                fingerprint: ckpt.fingerprint,
                parent: ckpt.parent,
                best_epoch: ckpt.best_epoch,
                epochs_run: ckpt.history.len(),
                exemplars: run.exemplars().ok().map(|p| p.meta),
                report: run.report().ok(),
            });
        }
        Ok(Json(out))
    })
    .await
}

#[derive(Debug, Clone, Copy, Default, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    #[default]
    ArDesc,
    ArAsc,
    Random,
}

#[derive(Debug, Deserialize)]
pub struct CandidateQuery {
    run: String,
    #[serde(default = "default_limit")]
    limit: usize,
    #[serde(default)]
    offset: usize,
    #[serde(default)]
    order: Order,
    #[serde(default)]
    seed: u64,
}

fn default_limit() -> usize {
    50
}

#[derive(Debug, Serialize)]
pub struct ImageLinks {
    pub input: String,
    pub mask: String,
    pub cam: String,
    pub overlay: String,
}

#[derive(Debug, Serialize)]
pub struct CandidateEntry {
    #[serde(flatten)]
    pub candidate: Candidate,
    pub images: ImageLinks,
}

#[derive(Debug, Serialize)]
pub struct CandidatePage {
    pub run: String,
    pub order: Order,
    pub offset: usize,
    pub limit: usize,
    pub total: usize,
    pub candidates: Vec<CandidateEntry>,
}

/// Orders candidates; samples without AR always come last, ties go to the lower id.
pub fn order_candidates(list: &[Candidate], order: Order, seed: u64) -> Vec<Candidate> {
    let mut out = list.to_vec();
    match order {
        Order::Random => {
            out.sort_by(|a, b| a.id.cmp(&b.id));
            out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        Order::ArDesc | Order::ArAsc => out.sort_by(|a, b| {
            let by_ar = match (a.ar, b.ar) {
                (Some(x), Some(y)) if order == Order::ArDesc => y.total_cmp(&x),
                (Some(x), Some(y)) => x.total_cmp(&y),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => std::cmp::Ordering::Equal,
            };
            by_ar.then_with(|| a.id.cmp(&b.id))
        }),
    }
    out
}

async fn candidates(State(state): State<Shared>, Query(q): Query<CandidateQuery>) -> ApiResult<Json<CandidatePage>> {
    blocking(move || {
        let run = state.run(&q.run)?;
        let all = state.candidates(&run)?;
        let ordered = order_candidates(&all, q.order, q.seed);
        let link = |id: &str, kind: &str| format!("/api/images/{id}/{kind}?run={}&split=train", q.run);
        let candidates = ordered
            .into_iter()
            .skip(q.offset)
            .take(q.limit)
            .map(|c| CandidateEntry {
                images: ImageLinks {
                    input: link(&c.id, "input"),
                    mask: link(&c.id, "mask"),
                    cam: link(&c.id, "cam"),
                    overlay: link(&c.id, "overlay"),
                },
                candidate: c,
            })
            .collect();
        Ok(Json(CandidatePage {
            run: q.run,
            order: q.order,
            offset: q.offset,
            limit: q.limit,
            total: all.len(),
            candidates,
        }))
    })
    .await
}

#[derive(Debug, Deserialize)]
pub struct ExemplarRequest {
    run: String,
    good_id: String,
    bad_id: String,
}

async fn exemplars(State(state): State<Shared>, Json(req): Json<ExemplarRequest>) -> ApiResult<Json<ExemplarMeta>> {
    let lock = state.try_lock()?;
    blocking(move || {
        let run = state.run(&req.run)?;
        if req.good_id == req.bad_id {
            return Err(ApiError::unprocessable(format!(
                "good and bad exemplar are both '{}'",
                req.good_id
            )));
        }
        let train = state.split("train")?;
        for id in [&req.good_id, &req.bad_id] {
            if train.get(id).is_none() {
                return Err(ApiError::unprocessable(format!("'{id}' is not a candidate of run '{}'", req.run)));
            }
        }
        let model = state.model(&run)?;
        let pair = set_exemplars_manual(&req.good_id, &req.bad_id, &model, &train).map_err(ApiError::as_unprocessable)?;
        pair.save(&run.exemplar_dir())?;
        drop(lock);
        Ok(Json(pair.meta))
    })
    .await
}

#[derive(Debug, Deserialize)]
pub struct RefineRequest {
    run: String,
    /// Output run id; defaults to `<run>-exbl`.
    out: Option<String>,
    /// Flat run-configuration keys replacing those of the base run.
    #[serde(default)]
    overrides: Map<String, Value>,
}

/// Applies flat overrides to a run configuration; `null` restores a key's default.
pub fn apply_overrides(base: &RunConfig, overrides: &Map<String, Value>) -> exbl_core::Result<RunConfig> {
    let bad = |e: String| exbl_core::Error::Config(e);
    let mut table = match toml::Value::try_from(base).map_err(|e| bad(e.to_string()))? {
        toml::Value::Table(t) => t,
        _ => return Err(bad("run configuration is not a table".into())),
    };
    for (k, v) in overrides {
        if v.is_null() {
            table.remove(k);
        } else {
            table.insert(k.clone(), toml::Value::try_from(v).map_err(|e| bad(format!("{k}: {e}")))?);
        }
    }
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| bad(e.message().to_string()))
}

#[derive(Debug, Serialize)]
pub struct JobCreated {
    pub job_id: String,
    pub out_run: String,
}

async fn refine(State(state): State<Shared>, Json(req): Json<RefineRequest>) -> ApiResult<(StatusCode, Json<JobCreated>)> {
    let lock = state.try_lock()?;
    let prepared = {
        let state = state.clone();
        blocking(move || {
            let base = state.run(&req.run)?;
            let pair = base
                .exemplars()
                .map_err(|_| ApiError::unprocessable(format!("run '{}' has no exemplar pair", req.run)))?;
            let config = apply_overrides(&base.config()?, &req.overrides).map_err(ApiError::as_unprocessable)?;
            let total_epochs = config.train_config(exbl_core::Phase::Exbl).map_err(ApiError::as_unprocessable)?.epochs;
            let out_id = req.out.clone().unwrap_or_else(|| format!("{}-exbl", req.run));
            if out_id.is_empty() || out_id.contains(['/', '\\']) || out_id == "." || out_id == ".." || out_id == req.run {
                return Err(ApiError::unprocessable(format!("invalid output run id '{out_id}'")));
            }
            let out = exbl_core::RunDir::new(state.runs_dir.join(&out_id));
            Ok((jobs::Request { base, out, pair, config }, req.run, out_id, total_epochs))
        })
        .await?
    };
    let (request, run, out_id, total_epochs) = prepared;
    let id = state.next_job_id();
    let job = Job::new(id.clone(), run, out_id.clone(), total_epochs);
    guard(&state.jobs).insert(id.clone(), job.clone());
    tracing::info!(job = %id, out = %out_id, "refinement started");
    let worker_state = state.clone();
    tokio::task::spawn_blocking(move || jobs::run(worker_state, job, request, lock));
    Ok((StatusCode::ACCEPTED, Json(JobCreated { job_id: id, out_run: out_id })))
}

async fn job(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<JobStatus>> {
    Ok(Json(state.job(&id)?.status()))
}

async fn cancel(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<JobStatus>> {
    let job = state.job(&id)?;
    job.cancel();
    Ok(Json(job.status()))
}

#[derive(Debug, Deserialize)]
pub struct ImageQuery {
    run: Option<String>,
    split: Option<String>,
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn image(
    State(state): State<Shared>,
    Path((sample_id, kind)): Path<(String, String)>,
    Query(q): Query<ImageQuery>,
) -> ApiResult<Response> {
    if !matches!(kind.as_str(), "input" | "mask" | "cam" | "overlay") {
        return Err(ApiError::not_found(format!("unknown image kind '{kind}'")));
    }
    blocking(move || {
        let (bundle, i) = state.sample(&sample_id, q.split.as_deref())?;
        let sample = &bundle.samples()[i];
        let bytes = match kind.as_str() {
            "input" => encode_rgb(&sample.image)?,
            "mask" => {
                let mask = sample
                    .mask
                    .as_ref()
                    .ok_or_else(|| ApiError::not_found(format!("sample '{sample_id}' has no mask")))?;
                encode_mask(mask)?
            }
            _ => {
                let run_id = q
                    .run
                    .as_deref()
                    .ok_or_else(|| ApiError::unprocessable("cam and overlay images need a run"))?;
                let model = state.model(&state.run(run_id)?)?;
                let cam = gradcam(&model, sample, sample.label)?;
                if kind == "cam" {
                    cam_png(&cam)?
                } else {
                    overlay_png(&sample.image, &cam)?
                }
            }
        };
        Ok(png(bytes))
    })
    .await
}

#[derive(Debug, Deserialize)]
pub struct CompareQuery {
    a: Option<String>,
    b: Option<String>,
    #[serde(default = "default_split")]
    split: String,
}

fn default_split() -> String {
    "test".into()
}

async fn compare(State(state): State<Shared>, Query(q): Query<CompareQuery>) -> ApiResult<Json<ComparisonReport>> {
    blocking(move || {
        let b_id = q.b.ok_or_else(|| ApiError::unprocessable("missing query parameter 'b'"))?;
        let b = state.run(&b_id)?;
        let a_id = match q.a {
            Some(a) => a,
            None => {
                let parent = b.checkpoint()?.parent;
                let runs = list_runs(state.runs_root())?;
                runs.into_iter()
                    .find(|r| r.checkpoint().ok().map(|c| Some(c.fingerprint)) == Some(parent.clone()))
                    .map(|r| r.id())
                    .ok_or_else(|| ApiError::unprocessable(format!("run '{b_id}' has no parent run; pass 'a'")))?
            }
        };
        let a = state.run(&a_id)?;
        let bundle = state.split(&q.split)?;
        let (ma, mb) = (state.model(&a)?, state.model(&b)?);
        let report = compare_checkpoints(&ma, &mb, &bundle)?;
        Ok(Json(report))
    })
    .await
}
