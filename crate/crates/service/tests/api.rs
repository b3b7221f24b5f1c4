use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use driftguard_core::gmm::{ClassId, GaussianComponent, GmmModel, Vec2};
use driftguard_core::lifelong::{FeedbackRequest, RequestStatus};
use driftguard_core::mapek::PreferenceModel;
use driftguard_service::{build_router, EventKind, RunSnapshot, ServiceState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};
use tower::ServiceExt;

fn blob(centre: Vec2, n: usize, seed: u64) -> Vec<Vec2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Normal::new(centre[0], 1.0).unwrap();
    let y = Normal::new(centre[1], 0.05).unwrap();
    (0..n).map(|_| [x.sample(&mut rng), y.sample(&mut rng)]).collect()
}

/// One known class plus a single proposed component stretched over two
/// well separated blobs of new points.
fn bimodal_request(id: u64) -> FeedbackRequest {
    let mut out_of_class = blob([10.0, 15.5], 150, 1);
    out_of_class.extend(blob([35.0, 15.5], 150, 2));
    let proposal = GmmModel::new(vec![
        GaussianComponent::new([50.0, 13.4], [[1.0, 0.0], [0.0, 0.0025]], 0.5, 300, ClassId(0)),
        GaussianComponent::new([22.5, 15.5], [[157.0, 0.0], [0.0, 0.0025]], 0.5, 300, ClassId(1)),
    ]);
    FeedbackRequest {
        id,
        cycle: 160,
        status: RequestStatus::Pending,
        proposal,
        new_class_ids: vec![ClassId(1)],
        window: Vec::new(),
        out_of_class,
        next_class_id: 2,
        refit_seed: 99,
    }
}

fn snapshot() -> RunSnapshot {
    RunSnapshot {
        label: "test".into(),
        approach: "lsa_feedback".into(),
        cycle: 0,
        cycles: 10,
        finished: false,
        window: Vec::new(),
        classifier: GmmModel::new(vec![GaussianComponent::new(
            [50.0, 13.4],
            [[1.0, 0.0], [0.0, 0.0025]],
            1.0,
            300,
            ClassId(0),
        )]),
        preference: PreferenceModel::new(vec![ClassId(0)]).unwrap(),
        pending_request: None,
    }
}

async fn call(state: &Arc<ServiceState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = build_router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

fn ids(model: &Value) -> Vec<u32> {
    model["components"].as_array().unwrap().iter().map(|c| c["class_id"].as_u64().unwrap() as u32).collect()
}

#[tokio::test]
async fn run_state_is_404_until_a_run_starts() {
    let state = ServiceState::new();
    let (status, body) = call(&state, "GET", "/api/run/state", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].is_string());

    state.set_snapshot(snapshot());
    let (status, body) = call(&state, "GET", "/api/run/state", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["cycle"], 0);
    assert_eq!(body["preference"]["ranking"], json!([0]));
    let model: GmmModel = serde_json::from_value(body["classifier"].clone()).unwrap();
    model.validate().unwrap();
}

#[tokio::test]
async fn pending_follows_the_request_lifecycle() {
    let state = ServiceState::new();
    state.set_snapshot(snapshot());
    let rx = state.feedback_channel();
    let (status, body) = call(&state, "GET", "/api/feedback/pending", None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    assert_eq!(body, Value::Null);

    state.open_request(&bimodal_request(7));
    let (status, body) = call(&state, "GET", "/api/feedback/pending", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["id"], 7);
    assert_eq!(body["status"], "pending");
    let (_, snap) = call(&state, "GET", "/api/run/state", None).await;
    assert_eq!(snap["pending_request"], 7);

    let (status, _) = call(&state, "POST", "/api/feedback/7/ranking", Some(json!({"ranking": [1, 0]}))).await;
    assert_eq!(status, StatusCode::OK);
    let (id, feedback) = rx.try_recv().unwrap();
    assert_eq!(id, 7);
    assert_eq!(feedback.ranking, vec![ClassId(1), ClassId(0)]);
    assert!(feedback.boxes.is_empty());

    let (status, _) = call(&state, "GET", "/api/feedback/pending", None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
}

#[tokio::test]
async fn empty_boxes_echo_the_proposal() {
    let state = ServiceState::new();
    let request = bimodal_request(3);
    state.open_request(&request);
    for body in [json!({"boxes": []}), json!([])] {
        let (status, resp) = call(&state, "POST", "/api/feedback/3/box", Some(body)).await;
        assert_eq!(status, StatusCode::OK);
        let model: GmmModel = serde_json::from_value(resp["model"].clone()).unwrap();
        assert_eq!(model, request.proposal);
        assert_eq!(resp["new_class_ids"], json!([1]));
    }
}

#[tokio::test]
async fn a_splitting_box_adds_one_component() {
    let state = ServiceState::new();
    let rx = state.feedback_channel();
    state.open_request(&bimodal_request(4));
    let bx = json!({"x_min": 0.0, "x_max": 22.0, "y_min": 14.0, "y_max": 17.0});
    let (status, resp) = call(&state, "POST", "/api/feedback/4/box", Some(json!({"boxes": [bx]}))).await;
    assert_eq!(status, StatusCode::OK, "{resp}");
    let model = &resp["model"];
    assert_eq!(ids(model).len(), 3);
    assert_eq!(ids(model)[0], 0, "known classes stay first");
    assert_eq!(resp["new_class_ids"], json!([2, 3]));
    let means: Vec<f64> =
        model["components"].as_array().unwrap()[1..].iter().map(|c| c["mean"][0].as_f64().unwrap()).collect();
    assert!(means.iter().any(|m| (m - 10.0).abs() < 1.0) && means.iter().any(|m| (m - 35.0).abs() < 1.0), "{means:?}");

    // Resubmitting the same box gives the same model.
    let (_, again) = call(&state, "POST", "/api/feedback/4/box", Some(json!([bx]))).await;
    assert_eq!(again["model"], resp["model"]);

    // The ranking is checked against the refined model, and the refinement
    // travels with it to the run loop.
    let (status, _) = call(&state, "POST", "/api/feedback/4/ranking", Some(json!([1, 0]))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, ack) = call(&state, "POST", "/api/feedback/4/ranking", Some(json!([3, 2, 0]))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ack["status"], "accepted");
    let (_, feedback) = rx.try_recv().unwrap();
    assert_eq!(feedback.boxes.len(), 1);
    assert_eq!(feedback.ranking, vec![ClassId(3), ClassId(2), ClassId(0)]);
}

#[tokio::test]
async fn malformed_feedback_is_422() {
    let state = ServiceState::new();
    let _rx = state.feedback_channel();
    state.open_request(&bimodal_request(5));
    let cases = [
        ("box", json!({"boxes": [{"x_min": 30.0, "x_max": 10.0, "y_min": 14.0, "y_max": 17.0}]})),
        ("box", json!({"boxes": [{"x_min": 80.0, "x_max": 90.0, "y_min": 10.0, "y_max": 11.0}]})),
        ("box", json!({"boxes": [{"x_min": -5.0, "x_max": 10.0, "y_min": 14.0, "y_max": 17.0}]})),
        ("box", json!({"boxes": "nope"})),
        ("ranking", json!({"ranking": [1, 1]})),
        ("ranking", json!({"ranking": [0]})),
        ("ranking", json!({"ranking": [0, 1, 9]})),
        ("ranking", json!({"order": [0, 1]})),
    ];
    for (kind, body) in cases {
        let (status, resp) = call(&state, "POST", &format!("/api/feedback/5/{kind}"), Some(body.clone())).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{kind} {body}");
        assert!(resp["error"].is_string());
    }
    // Nothing was consumed.
    assert_eq!(state.pending().unwrap().id, 5);
}

#[tokio::test]
async fn stale_ids_are_409_and_answers_are_idempotent() {
    let state = ServiceState::new();
    let rx = state.feedback_channel();
    let (status, _) = call(&state, "POST", "/api/feedback/1/ranking", Some(json!([0]))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&state, "POST", "/api/feedback/1/box", Some(json!([]))).await;
    assert_eq!(status, StatusCode::CONFLICT);

    state.open_request(&bimodal_request(2));
    let (status, _) = call(&state, "POST", "/api/feedback/1/box", Some(json!([]))).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, first) = call(&state, "POST", "/api/feedback/2/ranking", Some(json!([0, 1]))).await;
    assert_eq!(status, StatusCode::OK);
    let (status, again) = call(&state, "POST", "/api/feedback/2/ranking", Some(json!([0, 1]))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(first, again);
    assert_eq!(rx.try_iter().count(), 1, "a repeated answer is not forwarded twice");

    let (status, _) = call(&state, "POST", "/api/feedback/2/ranking", Some(json!([1, 0]))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&state, "POST", "/api/feedback/2/box", Some(json!([]))).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn expired_requests_are_stale() {
    let state = ServiceState::new();
    let _rx = state.feedback_channel();
    state.open_request(&bimodal_request(9));
    state.expire_request(9);
    let (status, _) = call(&state, "GET", "/api/feedback/pending", None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, _) = call(&state, "POST", "/api/feedback/9/ranking", Some(json!([0, 1]))).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn ranking_without_a_listening_run_is_503() {
    let state = ServiceState::new();
    let rx = state.feedback_channel();
    drop(rx);
    state.open_request(&bimodal_request(1));
    let (status, _) = call(&state, "POST", "/api/feedback/1/ranking", Some(json!([0, 1]))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(state.pending().unwrap().id, 1);
}

#[tokio::test]
async fn cors_preflight_is_allowed() {
    let state = ServiceState::new();
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/api/feedback/1/ranking")
        .header("origin", "http://localhost:5173")
        .header("access-control-request-method", "POST")
        .header("access-control-request-headers", "content-type")
        .body(Body::empty())
        .unwrap();
    let resp = build_router(state).oneshot(req).await.unwrap();
    assert!(resp.status().is_success());
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
}

#[test]
fn event_sequence_numbers_increase_and_the_buffer_is_bounded() {
    let state = ServiceState::new();
    let n = driftguard_service::EVENT_BUFFER as u64 + 25;
    for i in 0..n {
        state.publish(EventKind::CycleCompleted, json!({ "cycle": i }));
    }
    let (all, _rx) = state.subscribe(0);
    assert_eq!(all.len(), driftguard_service::EVENT_BUFFER);
    assert_eq!(all[0].seq, 26);
    assert!(all.windows(2).all(|w| w[1].seq == w[0].seq + 1));
    let (tail, _rx) = state.subscribe(n - 5);
    assert_eq!(tail.iter().map(|e| e.seq).collect::<Vec<_>>(), ((n - 4)..=n).collect::<Vec<_>>());
}
