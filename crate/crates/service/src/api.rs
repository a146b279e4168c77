//! REST API.
//!
//! `POST /api/comixify` accepts multipart (file field `video`), JSON or
//! urlencoded bodies. Besides the input (`video`, `url` or `sample`) the
//! recognised fields are `frames_mode`, `aesthetic`, `style`, `k`, `n` and
//! `sync`; `sync` may also be given as a query parameter.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Form, Json, Router};
use comixify_core::ingest::{samples, FetchConfig, Fetcher, DEFAULT_MAX_BYTES};
use comixify_core::pipeline::{
    option_catalog, parse_aesthetic, parse_frames_mode, parse_style, run_pipeline_with_progress, InputSpec,
    ModelRegistry, PipelineOptions, Stage,
};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::io::AsyncWriteExt;
use tower_http::services::ServeDir;

use crate::classify;
use crate::jobs::{FileStore, JobError, JobRecord, JobState, JobStore, MemoryStore};

pub const DEFAULT_PORT: u16 = 8000;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);
const MULTIPART_SLACK: u64 = 1 << 20;
const FIELDS: [&str; 8] = ["video", "url", "sample", "frames_mode", "aesthetic", "style", "k", "n"];

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub models_dir: Option<PathBuf>,
    pub workdir: PathBuf,
    pub port: u16,
    pub upload_cap: u64,
    pub timeout: Duration,
    /// Refuse to start unless every model manifest is present.
    pub strict_models: bool,
    /// Keep job records on disk under the workdir.
    pub persistent: bool,
}

impl ServiceConfig {
    /// Reads `COMIXIFY_MODELS_DIR`, `COMIXIFY_WORKDIR` and `COMIXIFY_PORT`.
    pub fn from_env() -> Result<Self, String> {
        let port = match std::env::var("COMIXIFY_PORT") {
            Ok(p) => p.parse().map_err(|_| format!("COMIXIFY_PORT `{p}` is not a port number"))?,
            Err(_) => DEFAULT_PORT,
        };
        Ok(ServiceConfig {
            models_dir: std::env::var_os("COMIXIFY_MODELS_DIR").map(PathBuf::from),
            workdir: std::env::var_os("COMIXIFY_WORKDIR").map_or_else(|| PathBuf::from("comixify-work"), PathBuf::from),
            port,
            upload_cap: DEFAULT_MAX_BYTES,
            timeout: DEFAULT_TIMEOUT,
            strict_models: false,
            persistent: true,
        })
    }
}

struct Inner {
    models: ModelRegistry,
    store: Box<dyn JobStore>,
    fetcher: Fetcher,
    workdir: PathBuf,
    upload_cap: u64,
    timeout: Duration,
}

/// Shared, read-only service state; models are loaded once.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(
        models: ModelRegistry,
        store: Box<dyn JobStore>,
        fetcher: Fetcher,
        workdir: PathBuf,
        upload_cap: u64,
        timeout: Duration,
    ) -> Self {
        AppState(Arc::new(Inner { models, store, fetcher, workdir, upload_cap, timeout }))
    }

    pub fn from_config(cfg: &ServiceConfig) -> Result<Self, String> {
        let models = ModelRegistry::load(cfg.models_dir.as_deref(), cfg.strict_models).map_err(|e| e.to_string())?;
        let store: Box<dyn JobStore> = if cfg.persistent {
            Box::new(FileStore::open(&cfg.workdir.join("jobs_db")).map_err(|e| e.to_string())?)
        } else {
            Box::new(MemoryStore::new())
        };
        let fetcher = Fetcher::new(FetchConfig { max_bytes: cfg.upload_cap, ..Default::default() });
        Ok(Self::new(models, store, fetcher, cfg.workdir.clone(), cfg.upload_cap, cfg.timeout))
    }

    pub fn store(&self) -> &dyn JobStore {
        self.0.store.as_ref()
    }

    pub fn results_dir(&self) -> PathBuf {
        self.0.workdir.join("results")
    }
}

pub fn router(state: AppState) -> Router {
    let limit = usize::try_from(state.0.upload_cap.saturating_add(MULTIPART_SLACK)).unwrap_or(usize::MAX);
    Router::new()
        .route("/api/comixify", post(comixify))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/samples", get(list_samples))
        .route("/api/options", get(options))
        .nest_service("/results", ServeDir::new(state.results_dir()))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Binds `0.0.0.0:port` and serves until Ctrl-C.
pub async fn serve(cfg: ServiceConfig) -> Result<(), String> {
    let state = AppState::from_config(&cfg)?;
    let app = router(state);
    let addr = SocketAddr::from(([0, 0, 0, 0], cfg.port));
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| format!("bind {addr}: {e}"))?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| e.to_string())
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
    pub stage: Option<Stage>,
    pub job: Option<JobRecord>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into(), stage: None, job: None }
    }

    fn bad(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn internal(message: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.message, "stage": self.stage, "job": self.job });
        (self.status, Json(body)).into_response()
    }
}

#[derive(Debug, Default, Deserialize)]
struct SyncQuery {
    sync: Option<bool>,
}

async fn options() -> Json<Value> {
    Json(serde_json::to_value(option_catalog()).expect("catalog serialises"))
}

async fn list_samples() -> Json<Value> {
    Json(serde_json::to_value(samples::list()).expect("samples serialise"))
}

async fn get_job(State(st): State<AppState>, axum::extract::Path(id): axum::extract::Path<String>) -> Result<Json<JobRecord>, ApiError> {
    match st.store().get(&id) {
        Ok(Some(rec)) => Ok(Json(rec)),
        Ok(None) => Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown job `{id}`"))),
        Err(e) => Err(ApiError::internal(e)),
    }
}

fn value_to_string(v: Value) -> String {
    match v {
        Value::String(s) => s,
        other => other.to_string(),
    }
}

struct Parsed {
    input: InputSpec,
    label: String,
    options: PipelineOptions,
    sync: bool,
}

fn parse_request(mut fields: BTreeMap<String, String>, upload: Option<(PathBuf, String)>, sync_query: Option<bool>) -> Result<Parsed, ApiError> {
    let sync = match fields.remove("sync") {
        Some(s) => s.parse::<bool>().map_err(|_| ApiError::bad(format!("sync must be true or false, got `{s}`")))?,
        None => sync_query.unwrap_or(false),
    };
    if let Some(k) = fields.keys().find(|k| !FIELDS.contains(&k.as_str())) {
        return Err(ApiError::bad(format!("unknown field `{k}`; allowed: sync, {}", FIELDS.join(", "))));
    }
    let url = fields.remove("url").filter(|s| !s.is_empty());
    let sample = fields.remove("sample").filter(|s| !s.is_empty());
    let given = upload.is_some() as usize + url.is_some() as usize + sample.is_some() as usize;
    if given != 1 {
        return Err(ApiError::bad(format!("exactly one of video, url, sample is required; got {given}")));
    }
    let (input, label) = match (upload, url, sample) {
        (Some((path, name)), _, _) => (InputSpec::Path(path), format!("upload:{name}")),
        (_, Some(u), _) => (InputSpec::Url(u.clone()), u),
        (_, _, Some(s)) => {
            let known: Vec<_> = samples::list().iter().map(|i| i.name).collect();
            if !known.contains(&s.as_str()) {
                return Err(ApiError::bad(format!("unknown sample `{s}`; available: {}", known.join(", "))));
            }
            (InputSpec::Sample(s.clone()), format!("sample:{s}"))
        }
        _ => unreachable!("exactly one input"),
    };
    let mut options = PipelineOptions::default();
    let bad = |e: comixify_core::Error| ApiError::bad(e.to_string());
    if let Some(v) = fields.remove("frames_mode") {
        options.frames_mode = parse_frames_mode(&v).map_err(bad)?;
    }
    if let Some(v) = fields.remove("aesthetic") {
        options.aesthetic = parse_aesthetic(&v).map_err(bad)?;
    }
    if let Some(v) = fields.remove("style") {
        options.style = parse_style(&v).map_err(bad)?;
    }
    if let Some(v) = fields.remove("k") {
        options.k = v.parse().map_err(|_| ApiError::bad(format!("k must be a positive integer, got `{v}`")))?;
    }
    if let Some(v) = fields.remove("n").filter(|s| !s.is_empty() && s != "null") {
        options.n = Some(v.parse().map_err(|_| ApiError::bad(format!("n must be a positive integer, got `{v}`")))?);
    }
    options.validate().map_err(bad)?;
    Ok(Parsed { input, label, options, sync })
}

fn safe_name(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if s.is_empty() || s.starts_with('.') {
        format!("video{s}")
    } else {
        s
    }
}

async fn read_multipart(
    mut mp: Multipart,
    dir: &Path,
    cap: u64,
) -> Result<(BTreeMap<String, String>, Option<(PathBuf, String)>), ApiError> {
    let mp_err = |e: axum::extract::multipart::MultipartError| ApiError::new(e.status(), e.body_text());
    let mut fields = BTreeMap::new();
    let mut upload = None;
    while let Some(mut field) = mp.next_field().await.map_err(mp_err)? {
        let name = field.name().unwrap_or_default().to_string();
        if name != "video" {
            let text = field.text().await.map_err(mp_err)?;
            fields.insert(name, text);
            continue;
        }
        if upload.is_some() {
            return Err(ApiError::bad("more than one `video` field"));
        }
        let original = field.file_name().unwrap_or("video").to_string();
        tokio::fs::create_dir_all(dir).await.map_err(ApiError::internal)?;
        let path = dir.join(format!("upload_{}", safe_name(&original)));
        let mut file = tokio::fs::File::create(&path).await.map_err(ApiError::internal)?;
        let mut written = 0u64;
        while let Some(chunk) = field.chunk().await.map_err(mp_err)? {
            written += chunk.len() as u64;
            if written > cap {
                return Err(ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, format!("upload exceeds the {cap}-byte cap")));
            }
            file.write_all(&chunk).await.map_err(ApiError::internal)?;
        }
        file.flush().await.map_err(ApiError::internal)?;
        upload = Some((path, original));
    }
    Ok((fields, upload))
}

async fn comixify(State(st): State<AppState>, Query(q): Query<SyncQuery>, req: Request) -> Result<Response, ApiError> {
    let job_id = uuid::Uuid::new_v4().simple().to_string();
    let job_dir = st.0.workdir.join("work").join(&job_id);
    let ctype = req.headers().get(header::CONTENT_TYPE).and_then(|v| v.to_str().ok()).unwrap_or("").to_string();
    let (fields, upload) = if ctype.starts_with("multipart/form-data") {
        let mp = Multipart::from_request(req, &()).await.map_err(|e| ApiError::bad(e.body_text()))?;
        let r = read_multipart(mp, &job_dir, st.0.upload_cap).await;
        if r.is_err() {
            let _ = tokio::fs::remove_dir_all(&job_dir).await;
        }
        r?
    } else if ctype.starts_with("application/json") {
        let Json(map) = Json::<serde_json::Map<String, Value>>::from_request(req, &())
            .await
            .map_err(|e| ApiError::bad(e.body_text()))?;
        (map.into_iter().map(|(k, v)| (k, value_to_string(v))).collect(), None)
    } else if ctype.starts_with("application/x-www-form-urlencoded") {
        let Form(map) = Form::<BTreeMap<String, String>>::from_request(req, &())
            .await
            .map_err(|e| ApiError::bad(e.body_text()))?;
        (map, None)
    } else {
        return Err(ApiError::new(
            StatusCode::UNSUPPORTED_MEDIA_TYPE,
            "use multipart/form-data, application/json or application/x-www-form-urlencoded",
        ));
    };
    let parsed = match parse_request(fields, upload, q.sync) {
        Ok(p) => p,
        Err(e) => {
            let _ = tokio::fs::remove_dir_all(&job_dir).await;
            return Err(e);
        }
    };
    let rec = JobRecord::queued(job_id.clone(), parsed.label, parsed.options.clone());
    st.store().insert(rec.clone()).map_err(ApiError::internal)?;
    let handle = tokio::spawn(run_job(st.clone(), job_id, parsed.input, parsed.options, job_dir));
    if !parsed.sync {
        return Ok((StatusCode::ACCEPTED, Json(rec)).into_response());
    }
    let done = handle.await.map_err(ApiError::internal)?;
    match &done.error {
        None => Ok((StatusCode::OK, Json(done)).into_response()),
        Some(err) => Err(ApiError {
            status: StatusCode::from_u16(err.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
            message: err.message.clone(),
            stage: err.stage,
            job: Some(done.clone()),
        }),
    }
}

/// Runs one job to a terminal state and returns its final record.
pub async fn run_job(st: AppState, id: String, input: InputSpec, opts: PipelineOptions, job_dir: PathBuf) -> JobRecord {
    let store_fail = |e: crate::jobs::StoreError| {
        tracing::error!(job = %id, "job store: {e}");
    };
    if let Err(e) = st.store().update(&id, &mut |r| r.state = JobState::Running) {
        store_fail(e);
    }
    let t0 = Instant::now();
    let worker = {
        let st = st.clone();
        let id = id.clone();
        let opts = opts.clone();
        let job_dir = job_dir.clone();
        tokio::task::spawn_blocking(move || {
            let out_dir = st.results_dir().join(&id);
            let progress = |stage: Stage| {
                let _ = st.store().update(&id, &mut |r| {
                    if r.state == JobState::Running {
                        r.stage = Some(stage);
                    }
                });
            };
            run_pipeline_with_progress(&input, &opts, &st.0.models, &job_dir, &out_dir, &st.0.fetcher, &progress)
        })
    };
    let outcome = tokio::time::timeout(st.0.timeout, worker).await;
    let duration_s = t0.elapsed().as_secs_f64();
    // a timed-out worker may still be using its directory
    let timed_out = outcome.is_err();
    let finished = match outcome {
        Ok(Ok(Ok(out))) => {
            let pages: Vec<String> = out
                .pages
                .iter()
                .filter_map(|p| p.file_name())
                .map(|f| format!("/results/{id}/{}", f.to_string_lossy()))
                .collect();
            st.store().update(&id, &mut |r| {
                r.state = JobState::Done;
                r.n = Some(out.n);
                r.timings = out.timings.clone();
                r.pages = pages.clone();
                r.keyframe_times_s = out.keyframe_times_s.clone();
                r.duration_s = Some(duration_s);
            })
        }
        Ok(Ok(Err(e))) => {
            let status = classify(&e).http_status();
            st.store().update(&id, &mut |r| {
                r.state = JobState::Failed;
                r.stage = Some(e.stage);
                r.duration_s = Some(duration_s);
                r.error = Some(JobError { stage: Some(e.stage), message: e.to_string(), status });
            })
        }
        Ok(Err(join)) => st.store().update(&id, &mut |r| {
            r.state = JobState::Failed;
            r.duration_s = Some(duration_s);
            r.error = Some(JobError { stage: r.stage, message: format!("pipeline crashed: {join}"), status: 500 });
        }),
        Err(_) => st.store().update(&id, &mut |r| {
            r.state = JobState::Failed;
            r.duration_s = Some(duration_s);
            let at = r.stage.map_or_else(|| "start".to_string(), |s| format!("{s} stage"));
            r.error = Some(JobError {
                stage: r.stage,
                message: format!("timed out after {:.0} s in the {at}", st.0.timeout.as_secs_f64()),
                status: 500,
            });
        }),
    };
    if !timed_out {
        let _ = tokio::fs::remove_dir_all(&job_dir).await;
    }
    match finished {
        Ok(rec) => rec,
        Err(e) => {
            store_fail(e);
            st.store().get(&id).ok().flatten().unwrap_or_else(|| JobRecord::queued(id.clone(), String::new(), opts))
        }
    }
}
