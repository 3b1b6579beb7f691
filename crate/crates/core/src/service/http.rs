use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use tower_http::services::ServeDir;

use super::{CreateRequest, LabelRequest, ServiceError, SessionStore};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

fn rejected(r: JsonRejection) -> ServiceError {
    let mut e = ServiceError::new(r.status().as_u16(), "bad-request", "request body is not valid JSON for this endpoint");
    e.detail = serde_json::json!({ "error": r.body_text() });
    e
}

type Store = State<Arc<SessionStore>>;
type ApiResult<T> = Result<T, ServiceError>;

/// Runs blocking session work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(ServiceError::new(500, "internal", e.to_string())))
}

async fn create(State(store): Store, body: Result<Json<CreateRequest>, JsonRejection>) -> ApiResult<Response> {
    let Json(req) = body.map_err(rejected)?;
    let state = blocking(move || store.create(&req)).await?;
    Ok((StatusCode::CREATED, Json(state)).into_response())
}

async fn state(State(store): Store, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(blocking(move || store.state(&id)).await?).into_response())
}

async fn suggestion(State(store): Store, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(blocking(move || store.suggestion(&id)).await?).into_response())
}

async fn submit(
    State(store): Store,
    Path(id): Path<String>,
    body: Result<Json<LabelRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body.map_err(rejected)?;
    Ok(Json(blocking(move || store.submit(&id, req.index, req.value)).await?).into_response())
}

async fn undo(State(store): Store, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(blocking(move || store.undo(&id)).await?).into_response())
}

async fn curve(State(store): Store, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(blocking(move || store.curve(&id)).await?).into_response())
}

async fn not_found() -> ServiceError {
    ServiceError::new(404, "not-found", "no such endpoint")
}

/// The `/v1` API. With `assets`, other paths serve static files from it.
pub fn router(store: Arc<SessionStore>, assets: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/v1/sessions", post(create))
        .route("/v1/sessions/{id}", get(state))
        .route("/v1/sessions/{id}/suggestion", get(suggestion))
        .route("/v1/sessions/{id}/labels", post(submit))
        .route("/v1/sessions/{id}/labels/last", delete(undo))
        .route("/v1/sessions/{id}/curve", get(curve))
        .with_state(store);
    match assets {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    }
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr, store: Arc<SessionStore>, assets: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(store, assets))
        .with_graceful_shutdown(async {
            tokio::signal::ctrl_c().await.ok();
        })
        .await
}
