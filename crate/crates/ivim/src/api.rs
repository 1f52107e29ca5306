//! HTTP surface of the integration manager.
//!
//! Requests are processed under a single global integration lock, so a
//! request never observes a half-applied predecessor.

use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;

use crate::manager::{ApiError, IntegrationRequest, Manager};

#[derive(Clone)]
pub struct AppState {
    pub manager: Arc<Mutex<Manager>>,
}

pub fn router(manager: Arc<Mutex<Manager>>, sim_admin: bool) -> Router {
    let state = AppState { manager };
    let mut router = Router::new()
        .route("/api/v1/configure", post(configure))
        .route("/api/v1/optimize", post(optimize))
        .route("/api/v1/state", get(get_state));
    if sim_admin {
        router = router.route("/api/v1/admin/fail/{ccp_id}", post(fail_ccp));
    }
    router.with_state(state)
}

fn status(code: u16) -> StatusCode {
    StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
}

fn error_response(err: ApiError) -> Response {
    (status(err.status), Json(json!({ "error": err.message }))).into_response()
}

async fn configure(
    State(state): State<AppState>,
    Json(request): Json<IntegrationRequest>,
) -> Response {
    let mut manager = state.manager.lock().expect("integration lock");
    match manager.handle_configure(&request) {
        Ok(outcome) => (status(outcome.status), Json(outcome.response)).into_response(),
        Err(err) => error_response(err),
    }
}

async fn optimize(
    State(state): State<AppState>,
    Json(request): Json<IntegrationRequest>,
) -> Response {
    let mut manager = state.manager.lock().expect("integration lock");
    match manager.handle_optimize(&request) {
        Ok(outcome) => (status(outcome.status), Json(outcome.response)).into_response(),
        Err(err) => error_response(err),
    }
}

async fn get_state(State(state): State<AppState>) -> Response {
    let manager = state.manager.lock().expect("integration lock");
    let body = manager.snapshot();
    (
        StatusCode::OK,
        [("content-type", "application/json")],
        body,
    )
        .into_response()
}

async fn fail_ccp(State(state): State<AppState>, Path(ccp_id): Path<String>) -> Response {
    let mut manager = state.manager.lock().expect("integration lock");
    match manager.inject_failure(&ccp_id) {
        Ok(()) => {
            manager.tick();
            (StatusCode::OK, Json(json!({ "failed": ccp_id }))).into_response()
        }
        Err(err) => error_response(err),
    }
}
