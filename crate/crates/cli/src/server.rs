//! HTTP front end over [`Recommender`].
//!
//! Handlers take a snapshot of the current model at the start of a request,
//! so a reload never affects a request already in flight.

use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use retrofit_core::artifact::{ArtifactError, ModelArtifact};
use retrofit_core::service::{RecommendRequest, Recommender, RequestError};
use serde::Serialize;

pub const ADDR_ENV: &str = "RETROFIT_ADDR";
pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, Default)]
pub struct AppState {
    current: Arc<RwLock<Option<Arc<Recommender>>>>,
    source: Option<PathBuf>,
}

impl AppState {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_model(artifact: ModelArtifact) -> Self {
        let s = Self::default();
        s.swap(artifact);
        s
    }

    /// State backed by an artifact file that [`reload`](Self::reload)
    /// re-reads.
    pub fn from_path(path: PathBuf) -> Result<Self, ArtifactError> {
        let artifact = ModelArtifact::load(&path)?;
        let mut s = Self::with_model(artifact);
        s.source = Some(path);
        Ok(s)
    }

    pub fn snapshot(&self) -> Option<Arc<Recommender>> {
        self.current.read().expect("model lock").clone()
    }

    /// Replaces the served model. The recommender is built before the lock
    /// is taken.
    pub fn swap(&self, artifact: ModelArtifact) {
        let next = Arc::new(Recommender::new(artifact));
        *self.current.write().expect("model lock") = Some(next);
    }

    /// Loads the backing file again; on failure the old model keeps serving.
    pub fn reload(&self) -> Result<(), ArtifactError> {
        let Some(path) = &self.source else { return Ok(()) };
        let artifact = ModelArtifact::load(path)?;
        self.swap(artifact);
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    detail: Option<RequestError>,
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    Unprocessable(RequestError),
    NoModel,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::BadRequest(msg) => (
                StatusCode::BAD_REQUEST,
                ErrorBody {
                    error: msg,
                    field: None,
                    detail: None,
                },
            ),
            ApiError::Unprocessable(e) => (
                StatusCode::UNPROCESSABLE_ENTITY,
                ErrorBody {
                    error: e.to_string(),
                    field: Some(e.field().to_string()),
                    detail: Some(e),
                },
            ),
            ApiError::NoModel => (
                StatusCode::SERVICE_UNAVAILABLE,
                ErrorBody {
                    error: "no model loaded".into(),
                    field: None,
                    detail: None,
                },
            ),
        };
        (status, Json(body)).into_response()
    }
}

fn model(state: &AppState) -> Result<Arc<Recommender>, ApiError> {
    state.snapshot().ok_or(ApiError::NoModel)
}

fn body(req: Result<Json<RecommendRequest>, JsonRejection>) -> Result<RecommendRequest, ApiError> {
    req.map(|Json(r)| r).map_err(|e| ApiError::BadRequest(e.body_text()))
}

async fn recommend(
    State(state): State<AppState>,
    req: Result<Json<RecommendRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let m = model(&state)?;
    let req = body(req)?;
    let resp = m.recommend(&req).map_err(ApiError::Unprocessable)?;
    Ok(Json(resp).into_response())
}

async fn explain(
    State(state): State<AppState>,
    req: Result<Json<RecommendRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let m = model(&state)?;
    let req = body(req)?;
    // exact enumeration takes a while; keep it off the async workers
    let resp = tokio::task::spawn_blocking(move || m.explain(&req))
        .await
        .map_err(|e| ApiError::BadRequest(format!("explanation task failed: {e}")))?
        .map_err(ApiError::Unprocessable)?;
    Ok(Json(resp).into_response())
}

async fn model_info(State(state): State<AppState>) -> Result<Response, ApiError> {
    Ok(Json(model(&state)?.info()).into_response())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/recommend", post(recommend))
        .route("/explain", post(explain))
        .route("/model/info", get(model_info))
        .with_state(state)
}

/// Serves until Ctrl-C. On unix, SIGHUP reloads the model file.
pub async fn serve(state: AppState, addr: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    #[cfg(unix)]
    {
        let state = state.clone();
        let mut hup = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::hangup())?;
        tokio::spawn(async move {
            while hup.recv().await.is_some() {
                match state.reload() {
                    Ok(()) => log::info!("model reloaded"),
                    Err(e) => log::error!("reload failed, keeping the current model: {e}"),
                }
            }
        });
    }
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
