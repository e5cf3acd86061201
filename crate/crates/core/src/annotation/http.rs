//! JSON-over-HTTP front end for [`AnnotationStore`].
//!
//! | method | path | body / response |
//! |---|---|---|
//! | GET | `/health` | `{status, version}` |
//! | GET | `/instructions` | `{criteria, scale, text}` |
//! | POST | `/studies` | `StudyConfig` → `{study_id}` |
//! | POST | `/studies/{id}/sessions` | → `{session_id}` |
//! | GET | `/studies/{id}/sessions/{sid}/next` | `NextItem` |
//! | POST | `/ratings` | `RatingRecord` → `{status}` |
//! | GET | `/studies/{id}/report` | `StudyReport` |
//!
//! Errors are `{code, message}` with a matching status. The report endpoint is
//! meant for the study owner; nothing else exposes model ids.

use std::future::Future;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::net::TcpListener;

use super::{AnnotationError, AnnotationStore, Criterion, RatingRecord, StudyConfig, RUBRIC};
use crate::dialog::Dialog;
use crate::metrics::PredictionSet;

/// The store plus the corpus and system outputs studies are sampled from.
pub struct AnnotationService {
    pub store: AnnotationStore,
    pub corpus: Vec<Dialog>,
    pub predictions: Vec<PredictionSet>,
}

impl AnnotationService {
    pub fn new(store: AnnotationStore, corpus: Vec<Dialog>, predictions: Vec<PredictionSet>) -> Self {
        AnnotationService {
            store,
            corpus,
            predictions,
        }
    }
}

struct ApiError(StatusCode, &'static str, String);

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        let status = match e {
            AnnotationError::UnknownStudy(_)
            | AnnotationError::UnknownSession(_)
            | AnnotationError::UnknownItem(_) => StatusCode::NOT_FOUND,
            AnnotationError::InvalidScore(_)
            | AnnotationError::InvalidRecord(_)
            | AnnotationError::InsufficientCorpus(_) => StatusCode::UNPROCESSABLE_ENTITY,
            AnnotationError::InvalidConfig(_) => StatusCode::BAD_REQUEST,
            AnnotationError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.code(), e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError(StatusCode::BAD_REQUEST, "BAD_REQUEST", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({"code": self.1, "message": self.2}))).into_response()
    }
}

type Shared = Arc<AnnotationService>;
type ApiResult = Result<Json<Value>, ApiError>;

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("response types serialize")
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok", "version": env!("CARGO_PKG_VERSION")}))
}

async fn instructions() -> Json<Value> {
    Json(json!({
        "criteria": Criterion::ALL,
        "scale": {"min": 1, "max": 5},
        "text": RUBRIC,
    }))
}

async fn create_study(
    State(svc): State<Shared>,
    body: Result<Json<StudyConfig>, JsonRejection>,
) -> ApiResult {
    let Json(config) = body?;
    let svc2 = svc.clone();
    let id = tokio::task::spawn_blocking(move || {
        svc2.store.create_study(&config, &svc2.corpus, &svc2.predictions)
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", e.to_string()))??;
    Ok(Json(json!({"study_id": id})))
}

async fn create_session(State(svc): State<Shared>, Path(study_id): Path<String>) -> ApiResult {
    let id = svc.store.create_session(&study_id)?;
    Ok(Json(json!({"session_id": id})))
}

async fn next_item(
    State(svc): State<Shared>,
    Path((study_id, session_id)): Path<(String, String)>,
) -> ApiResult {
    Ok(Json(to_json(&svc.store.next_item(&study_id, &session_id)?)))
}

async fn submit_rating(
    State(svc): State<Shared>,
    body: Result<Json<RatingRecord>, JsonRejection>,
) -> ApiResult {
    let Json(record) = body?;
    svc.store.submit_rating(record)?;
    Ok(Json(json!({"status": "recorded"})))
}

async fn report(State(svc): State<Shared>, Path(study_id): Path<String>) -> ApiResult {
    Ok(Json(to_json(&svc.store.study_report(&study_id)?)))
}

pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/instructions", get(instructions))
        .route("/studies", post(create_study))
        .route("/studies/{study_id}/sessions", post(create_session))
        .route("/studies/{study_id}/sessions/{session_id}/next", get(next_item))
        .route("/ratings", post(submit_rating))
        .route("/studies/{study_id}/report", get(report))
        .with_state(service)
}

/// Serves until `shutdown` resolves, then syncs the log.
pub async fn serve<F>(listener: TcpListener, service: Shared, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(service.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    service
        .store
        .flush()
        .map_err(|e| std::io::Error::other(e.to_string()))
}
