//! HTTP service for a chatscope project: the annotation API consumed by the
//! review UI, remote stage execution, and a deterministic stand-in for the
//! classifier endpoint.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tracing::{info, warn};

use chatscope_core::convo::Conversation;
use chatscope_core::llmfilter::{stub_completion, ChatRequest, ChatResponse};
use chatscope_core::pipeline::{Project, RunManifest, StageName, StageRequest};
use chatscope_core::review::{ErrorBody, NextSample, ReviewData, ReviewStore, SaturationReport, UserTimeline};
use chatscope_core::sampler::AnnotationRecord;
use chatscope_core::Error;

pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, what)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Input(_) | Error::Config(_) => StatusCode::BAD_REQUEST,
            Error::Conflict(_) => StatusCode::CONFLICT,
            Error::MissingStage { .. } => StatusCode::PRECONDITION_FAILED,
            Error::Transport(_) | Error::ExternalTool { .. } => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

struct Review {
    store: ReviewStore,
    data: ReviewData,
}

pub struct AppState {
    root: PathBuf,
    config_path: Option<PathBuf>,
    jobs: usize,
    review: Mutex<Option<Review>>,
    stage_lock: tokio::sync::Mutex<()>,
}

fn load_review(root: &Path) -> chatscope_core::Result<Option<Review>> {
    let dir = root.join(StageName::Sample.dir());
    if !dir.join(chatscope_core::review::POOLS_FILE).exists() {
        return Ok(None);
    }
    let store = ReviewStore::open(&dir)?;
    let data = ReviewData::load(
        &root.join("verdicts/labeled.jsonl"),
        &root.join("modevents/profiles.jsonl"),
    )?;
    Ok(Some(Review { store, data }))
}

impl AppState {
    /// Loads review state when the project has been sampled; stage
    /// endpoints work either way.
    pub fn open(root: &Path, config_path: Option<&Path>, jobs: usize) -> chatscope_core::Result<Self> {
        let review = load_review(root)?;
        if review.is_none() {
            warn!(root = %root.display(), "no sampling pools yet; review endpoints unavailable");
        }
        Ok(AppState {
            root: root.to_path_buf(),
            config_path: config_path.map(Path::to_path_buf),
            jobs,
            review: Mutex::new(review),
            stage_lock: tokio::sync::Mutex::new(()),
        })
    }

    fn review(&self) -> Result<MutexGuard<'_, Option<Review>>, ApiError> {
        let guard = self.review.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            return Err(ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "review data not available; run `chatscope sample` first",
            ));
        }
        Ok(guard)
    }
}

#[derive(Debug, Deserialize)]
struct TrackQuery {
    track: String,
}

async fn next_sample(State(st): State<Arc<AppState>>, Query(q): Query<TrackQuery>) -> ApiResult<NextSample> {
    let mut guard = st.review()?;
    let review = guard.as_mut().expect("checked by review()");
    if !review.store.track_names().any(|t| t == q.track) {
        return Err(ApiError::not_found(format!("unknown track {}", q.track)));
    }
    Ok(Json(review.store.next_sample(&q.track)?))
}

async fn tracks(State(st): State<Arc<AppState>>) -> ApiResult<Vec<String>> {
    let guard = st.review()?;
    let review = guard.as_ref().expect("checked by review()");
    Ok(Json(review.store.track_names().map(str::to_string).collect()))
}

async fn conversation(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Conversation> {
    let guard = st.review()?;
    let review = guard.as_ref().expect("checked by review()");
    review
        .data
        .conversation(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("no conversation {id}")))
}

async fn annotate(
    State(st): State<Arc<AppState>>,
    Json(rec): Json<AnnotationRecord>,
) -> Result<(StatusCode, Json<AnnotationRecord>), ApiError> {
    let mut guard = st.review()?;
    let review = guard.as_mut().expect("checked by review()");
    let stored = review.store.submit(rec)?;
    Ok((StatusCode::CREATED, Json(stored)))
}

async fn saturation(State(st): State<Arc<AppState>>) -> ApiResult<SaturationReport> {
    let guard = st.review()?;
    Ok(Json(guard.as_ref().expect("checked by review()").store.saturation()))
}

async fn timeline(State(st): State<Arc<AppState>>, UrlPath(pseudonym): UrlPath<String>) -> ApiResult<UserTimeline> {
    let guard = st.review()?;
    let review = guard.as_ref().expect("checked by review()");
    review
        .data
        .timeline(&pseudonym)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("no user {pseudonym}")))
}

async fn run_stage(
    State(st): State<Arc<AppState>>,
    UrlPath(stage): UrlPath<String>,
    body: Option<Json<StageRequest>>,
) -> ApiResult<RunManifest> {
    let stage: StageName = stage
        .parse()
        .map_err(|_| ApiError::not_found(format!("unknown stage {stage}")))?;
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let _running = st.stage_lock.lock().await;
    let task_state = st.clone();
    let manifest = tokio::task::spawn_blocking(move || {
        let mut project = Project::open(&task_state.root, task_state.config_path.as_deref(), task_state.jobs)?;
        if let Some(seed) = req.seed {
            project.config_mut().sampling.seed = seed;
        }
        project.run(stage, req.options)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    info!(%stage, "remote stage run complete");
    if matches!(stage, StageName::Sample | StageName::Classify | StageName::Modevents) {
        match load_review(&st.root) {
            Ok(r) => *st.review.lock().unwrap_or_else(|p| p.into_inner()) = r,
            Err(e) => warn!(error = %e, "review state not reloaded"),
        }
    }
    Ok(Json(manifest))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/tracks", get(tracks))
        .route("/api/next-sample", get(next_sample))
        .route("/api/conversations/{id}", get(conversation))
        .route("/api/annotations", post(annotate))
        .route("/api/saturation", get(saturation))
        .route("/api/users/{pseudonym}/timeline", get(timeline))
        .route("/api/stages/{stage}", post(run_stage))
        .with_state(state)
}

async fn stub_chat(Json(req): Json<ChatRequest>) -> Json<ChatResponse> {
    Json(ChatResponse::single(stub_completion(&req)))
}

/// An OpenAI-style chat-completion endpoint answering from keyword cues.
pub fn stub_llm_router() -> Router {
    Router::new().route("/v1/chat/completions", post(stub_chat))
}

pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app).await
}
