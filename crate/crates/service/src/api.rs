use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, Method, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use driftguard_core::gmm::ClassId;
use driftguard_core::lifelong::QualityBox;
use futures::stream::{self, Stream, StreamExt};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::broadcast;
use tower_http::cors::{Any, CorsLayer};

use crate::state::{ApiEvent, Rejection, ServiceState};

pub fn build_router(state: Arc<ServiceState>) -> Router {
    let cors = CorsLayer::new().allow_origin(Any).allow_methods([Method::GET, Method::POST]).allow_headers(Any);
    Router::new()
        .route("/api/run/state", get(run_state))
        .route("/api/feedback/pending", get(pending))
        .route("/api/feedback/{id}/box", post(submit_boxes))
        .route("/api/feedback/{id}/ranking", post(submit_ranking))
        .route("/api/events", get(events))
        .layer(cors)
        .with_state(state)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

impl IntoResponse for Rejection {
    fn into_response(self) -> Response {
        match self {
            Rejection::Stale(msg) => error(StatusCode::CONFLICT, msg),
            Rejection::Invalid(msg) => error(StatusCode::UNPROCESSABLE_ENTITY, msg),
            Rejection::Closed => error(StatusCode::SERVICE_UNAVAILABLE, "the run is no longer accepting feedback"),
        }
    }
}

fn body_error(rejection: JsonRejection) -> Response {
    error(StatusCode::UNPROCESSABLE_ENTITY, rejection.body_text())
}

async fn run_state(State(state): State<Arc<ServiceState>>) -> Response {
    match state.snapshot() {
        Some(s) => Json(s).into_response(),
        None => error(StatusCode::NOT_FOUND, "no run is active"),
    }
}

async fn pending(State(state): State<Arc<ServiceState>>) -> Response {
    match state.pending() {
        Some(r) => Json(r).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

/// Either `{"boxes": [...]}` or a bare array.
#[derive(Deserialize)]
#[serde(untagged)]
enum BoxBody {
    Wrapped { boxes: Vec<QualityBox> },
    Bare(Vec<QualityBox>),
}

/// Either `{"ranking": [...]}` or a bare array.
#[derive(Deserialize)]
#[serde(untagged)]
enum RankingBody {
    Wrapped { ranking: Vec<ClassId> },
    Bare(Vec<ClassId>),
}

async fn submit_boxes(
    State(state): State<Arc<ServiceState>>,
    Path(id): Path<u64>,
    body: Result<Json<BoxBody>, JsonRejection>,
) -> Response {
    let boxes = match body {
        Ok(Json(BoxBody::Wrapped { boxes } | BoxBody::Bare(boxes))) => boxes,
        Err(e) => return body_error(e),
    };
    match tokio::task::spawn_blocking(move || state.submit_boxes(id, boxes)).await {
        Ok(Ok(refined)) => Json(refined).into_response(),
        Ok(Err(rejection)) => rejection.into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn submit_ranking(
    State(state): State<Arc<ServiceState>>,
    Path(id): Path<u64>,
    body: Result<Json<RankingBody>, JsonRejection>,
) -> Response {
    let ranking = match body {
        Ok(Json(RankingBody::Wrapped { ranking } | RankingBody::Bare(ranking))) => ranking,
        Err(e) => return body_error(e),
    };
    match state.submit_ranking(id, ranking) {
        Ok(ack) => Json(ack).into_response(),
        Err(rejection) => rejection.into_response(),
    }
}

#[derive(Deserialize)]
struct EventsQuery {
    last_event_id: Option<u64>,
}

fn sse_event(e: &ApiEvent) -> Event {
    Event::default().event(e.kind.as_str()).id(e.seq.to_string()).json_data(e).expect("events serialize")
}

/// Replays buffered events newer than `Last-Event-ID` (header, or the
/// `last_event_id` query parameter for clients that cannot set headers),
/// then streams live ones. A client that falls too far behind is
/// disconnected and resumes through the replay path.
async fn events(
    State(state): State<Arc<ServiceState>>,
    headers: HeaderMap,
    Query(query): Query<EventsQuery>,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let last_seen = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse().ok())
        .or(query.last_event_id)
        .unwrap_or(0);
    let (replay, rx) = state.subscribe(last_seen);
    let newest = replay.last().map_or(last_seen, |e| e.seq);
    let live = stream::unfold((rx, newest), |(mut rx, newest)| async move {
        loop {
            match rx.recv().await {
                Ok(e) if e.seq <= newest => continue,
                Ok(e) => {
                    let seq = e.seq;
                    return Some((e, (rx, seq)));
                }
                Err(broadcast::error::RecvError::Lagged(_)) | Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    let stream = stream::iter(replay).chain(live).map(|e| Ok(sse_event(&e)));
    Sse::new(stream).keep_alive(KeepAlive::new().interval(Duration::from_secs(15)))
}
