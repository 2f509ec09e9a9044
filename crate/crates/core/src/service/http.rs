//! HTTP routes. JSON responses embed the job's manifest; image responses
//! carry it in the `x-objectadd-manifest` header.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;

use super::store::{JobRecord, JobStore};
use crate::domain::{BinaryMask, EditSpec, GuidanceConfig, PixelBox, Resolution};
use crate::error::{Error, ErrorBody};
use crate::io::decode_png;
use crate::jobs::{BackendRef, JobRequest, Manifest};
use crate::pipeline::JobStatus;

pub const MANIFEST_HEADER: &str = "x-objectadd-manifest";

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<JobStore>,
    pub backend: BackendRef,
    workers: Arc<Semaphore>,
}

impl AppState {
    pub fn new(store: Arc<JobStore>, backend: BackendRef, workers: usize) -> Self {
        Self {
            store,
            backend,
            workers: Arc::new(Semaphore::new(workers.max(1))),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/generate", post(post_generate))
        .route("/api/edits", post(post_edit))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/jobs/{id}/masks", get(get_masks))
        .route("/api/jobs/{id}/attention/{t}/{layer}", get(get_attention))
        .route("/api/images/{id}", get(get_image))
        .with_state(state)
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: impl Into<String>, field: Option<&str>) -> Self {
        Self {
            status,
            body: ErrorBody {
                kind: kind.to_owned(),
                message: message.into(),
                stage: None,
                step: None,
                field: field.map(str::to_owned),
            },
        }
    }

    fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} not found"), None)
    }

    fn invalid(message: impl Into<String>, field: &str) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", message, Some(field))
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e.exit_code() {
            2 | 4 => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self {
            status,
            body: e.body(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.body, "manifest": null }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| {
        let field = e
            .to_string()
            .split('`')
            .nth(1)
            .map(str::to_owned)
            .unwrap_or_else(|| "body".into());
        ApiError::invalid(format!("invalid request body: {e}"), &field)
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateBody {
    prompt: String,
    seed: u64,
    total_steps: Option<usize>,
    backend: Option<BackendRef>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EditBody {
    base_job_id: Option<String>,
    prompt: Option<String>,
    seed: Option<u64>,
    #[serde(rename = "box")]
    pixel_box: PixelBox,
    object_prompt: String,
    object_token_offset: Option<usize>,
    #[serde(default)]
    config: GuidanceConfig,
    backend: Option<BackendRef>,
    /// Runs a real-image edit whose object image is the `edited.png` (or
    /// `base.png`) of this finished job.
    object_image_job: Option<String>,
}

fn job_response(status: StatusCode, record: JobRecord) -> Response {
    (status, Json(job_json(&record))).into_response()
}

fn job_json(record: &JobRecord) -> serde_json::Value {
    let mut v = serde_json::to_value(record).expect("record serializes");
    if v.get("manifest").is_none() {
        v["manifest"] = serde_json::Value::Null;
    }
    v
}

fn submit(state: &AppState, request: JobRequest, backend: BackendRef) -> ApiResult<Response> {
    backend.build()?;
    let record = state.store.create(request, backend)?;
    let store = state.store.clone();
    let workers = state.workers.clone();
    let id = record.job_id.clone();
    tokio::spawn(async move {
        let Ok(_permit) = workers.acquire_owned().await else { return };
        let result = tokio::task::spawn_blocking(move || store.run(&id)).await;
        match result {
            Ok(Err(e)) => tracing::error!("job failed to record its outcome: {e}"),
            Err(e) => tracing::error!("job worker panicked: {e}"),
            Ok(Ok(_)) => {}
        }
    });
    Ok(job_response(StatusCode::ACCEPTED, record))
}

async fn post_generate(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let b: GenerateBody = parse_body(&body)?;
    if b.prompt.trim().is_empty() {
        return Err(ApiError::invalid("prompt must not be empty", "prompt"));
    }
    let total_steps = b.total_steps.unwrap_or(50);
    if total_steps == 0 {
        return Err(ApiError::invalid("total_steps must be positive", "total_steps"));
    }
    let request = JobRequest::Generate {
        prompt: b.prompt,
        seed: b.seed,
        total_steps,
    };
    submit(&state, request, b.backend.unwrap_or_else(|| state.backend.clone()))
}

fn base_prompt_and_seed(state: &AppState, b: &EditBody) -> ApiResult<(String, u64)> {
    if let Some(id) = &b.base_job_id {
        let record = state.store.get(id).ok_or_else(|| ApiError::not_found("base job"))?;
        return Ok(match record.request {
            JobRequest::Generate { prompt, seed, .. } => (prompt, seed),
            JobRequest::Edit { spec } => (spec.base_prompt, spec.seed),
        });
    }
    match (&b.prompt, b.seed) {
        (Some(p), Some(s)) if !p.trim().is_empty() => Ok((p.clone(), s)),
        (Some(_), Some(_)) => Err(ApiError::invalid("prompt must not be empty", "prompt")),
        (None, _) => Err(ApiError::invalid("base_job_id or prompt and seed required", "prompt")),
        (_, None) => Err(ApiError::invalid("base_job_id or prompt and seed required", "seed")),
    }
}

async fn post_edit(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let b: EditBody = parse_body(&body)?;
    let (prompt, seed) = base_prompt_and_seed(&state, &b)?;
    let backend = b.backend.clone().unwrap_or_else(|| state.backend.clone());
    let model = backend.build()?;
    let desc = model.descriptor();
    if let Some(field) = b.pixel_box.invalid_field(desc.image_shape) {
        return Err(ApiError::invalid(
            format!(
                "box does not fit the {}x{} image",
                desc.image_shape.0, desc.image_shape.1
            ),
            &format!("box.{field}"),
        ));
    }
    if b.object_prompt.trim().is_empty() {
        return Err(ApiError::invalid("object prompt must not be empty", "object_prompt"));
    }
    if let Err(e) = b.config.validate() {
        return Err(ApiError::invalid(e.to_string(), "config"));
    }
    let mut spec = EditSpec::new(&prompt, &b.object_prompt, b.pixel_box, seed);
    spec.object_token_offset = b.object_token_offset;
    spec.config = b.config;
    if let Some(src) = &b.object_image_job {
        let bytes = state
            .store
            .read_artifact(src, "edited.png")?
            .or(state.store.read_artifact(src, "base.png")?)
            .ok_or_else(|| ApiError::not_found("object image job"))?;
        spec.real_object_image = Some(decode_png(&bytes)?);
    }
    submit(&state, JobRequest::Edit { spec }, backend)
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let record = state.store.get(&id).ok_or_else(|| ApiError::not_found("job"))?;
    Ok(job_response(StatusCode::OK, record))
}

fn finished(state: &AppState, id: &str) -> ApiResult<(JobRecord, Manifest)> {
    let record = state.store.get(id).ok_or_else(|| ApiError::not_found("job"))?;
    match (&record.state, &record.manifest) {
        (JobStatus::Done, Some(m)) => {
            let m = m.clone();
            Ok((record, m))
        }
        (JobStatus::Failed, _) => Err(ApiError {
            status: StatusCode::CONFLICT,
            body: record.error.clone().unwrap_or(ErrorBody {
                kind: "failed".into(),
                message: "job failed".into(),
                stage: None,
                step: None,
                field: None,
            }),
        }),
        _ => Err(ApiError::new(
            StatusCode::CONFLICT,
            "not_ready",
            format!("job is {:?}", record.state),
            None,
        )),
    }
}

/// Manifest as header-safe JSON: non-ASCII characters are `\u` escaped.
fn manifest_header(m: &Manifest) -> HeaderValue {
    let raw = serde_json::to_string(m).expect("manifest serializes");
    let mut out = String::with_capacity(raw.len());
    for c in raw.chars() {
        if c.is_ascii() && !c.is_ascii_control() {
            out.push(c);
        } else {
            let mut buf = [0u16; 2];
            for unit in c.encode_utf16(&mut buf) {
                out.push_str(&format!("\\u{unit:04x}"));
            }
        }
    }
    HeaderValue::from_str(&out).expect("ascii header")
}

fn png_response(bytes: Vec<u8>, manifest: &Manifest) -> Response {
    let mut headers = HeaderMap::new();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    headers.insert(MANIFEST_HEADER, manifest_header(manifest));
    (StatusCode::OK, headers, bytes).into_response()
}

async fn get_image(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let (record, manifest) = finished(&state, &id)?;
    let name = match q.get("name") {
        Some(n) => n.clone(),
        None if record.kind == "generate" => "base.png".into(),
        None => "edited.png".into(),
    };
    let bytes = state
        .store
        .read_artifact(&id, &name)?
        .ok_or_else(|| ApiError::not_found("image"))?;
    Ok(png_response(bytes, &manifest))
}

async fn get_attention(
    State(state): State<AppState>,
    Path((id, t, layer)): Path<(String, usize, usize)>,
) -> ApiResult<Response> {
    let (_, manifest) = finished(&state, &id)?;
    let artifacts = state
        .store
        .artifacts(&id)
        .ok_or_else(|| ApiError::not_found("attention maps (not kept across restarts)"))?;
    let png = artifacts
        .attention_png(t, layer)
        .ok_or_else(|| ApiError::not_found("attention map for this step and layer"))??;
    Ok(png_response(png, &manifest))
}

#[derive(Serialize)]
struct MaskJson {
    resolution: Resolution,
    height: usize,
    width: usize,
    count: usize,
    rows: Vec<String>,
    image: String,
}

fn mask_json(m: &BinaryMask, image: String) -> MaskJson {
    let (height, width) = m.shape();
    MaskJson {
        resolution: m.resolution(),
        height,
        width,
        count: m.count(),
        rows: m
            .data()
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| if *v == 1 { '1' } else { '0' }).collect())
            .collect(),
        image,
    }
}

async fn get_masks(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let (record, manifest) = finished(&state, &id)?;
    if record.kind == "generate" {
        return Err(ApiError::not_found("masks (generate jobs have none)"));
    }
    let link = |n: &str| format!("/api/images/{id}?name={n}.png");
    let traces = match state.store.artifacts(&id).and_then(|a| a.traces.clone()) {
        Some(t) => t,
        None => {
            let bytes = state
                .store
                .read_artifact(&id, "traces.json")?
                .ok_or_else(|| ApiError::not_found("traces"))?;
            serde_json::from_slice(&bytes).map_err(Error::from)?
        }
    };
    Ok(Json(json!({
        "job_id": id,
        "inpaint_step": traces.inpaint_step,
        "refocused": mask_json(&traces.refocus.mask, link("refocused_mask")),
        "expanded": mask_json(&traces.expansion.final_mask, link("expanded_mask")),
        "expanded_full": link("expanded_mask_full"),
        "edit_mask": link("edit_mask"),
        "manifest": manifest,
    }))
    .into_response())
}
