use std::sync::OnceLock;

use artdisp::api::{router, ApiStateSnapshot, AppState, EventPage, StreamDelta};
use artdisp_core::control::{greedy_corrective_search, ControlConfig, Recommendation};
use artdisp_core::dispatch::{
    dispatch_step, replay, DispatchContext, DispatchEvent, DispatchInput, DispatchState, EventPayload, Mode,
};
use artdisp_core::grid::{
    apply_perturbation, bundled, solve_power_flow, ElementRef, NetworkCase, Perturbation, PowerFlowOptions,
};
use artdisp_core::scenario::{scale_system, ScenarioConfig};
use artdisp_core::stability::{compute_l_index, f_matrix_for_case, StateClass};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use tower::ServiceExt;

fn ctx() -> DispatchContext {
    DispatchContext {
        bundle: None,
        control: ControlConfig::from_scenario(&ScenarioConfig::ieee118_stressed(0)),
    }
}

/// The heavily loaded 118 case, still Normal.
fn stressed() -> NetworkCase {
    scale_system(&bundled::ieee118(), 1.7)
}

/// First non-bridge line whose loss puts the stressed case into alarm with
/// a complete greedy fix.
fn alarm_line() -> usize {
    static K: OnceLock<usize> = OnceLock::new();
    *K.get_or_init(|| {
        let base = stressed();
        let c = ctx().control;
        (0..base.branches.len())
            .filter(|&k| !base.is_bridge(k))
            .find(|&k| {
                let case = apply_perturbation(&base, &outage(k)).unwrap();
                let Ok(sol) = solve_power_flow(&case, &PowerFlowOptions::default()) else {
                    return false;
                };
                if !sol.converged {
                    return false;
                }
                let r = compute_l_index(&sol, &f_matrix_for_case(&case).unwrap(), &c.thresholds).unwrap();
                r.state_class != StateClass::Normal
                    && greedy_corrective_search(&case, &sol, &c.candidates, &c.thresholds, c.step_dq, c.budget)
                        .is_ok_and(|g| !g.actions.is_empty() && !g.incomplete)
            })
            .expect("some outage raises an alarm")
    })
}

fn outage(k: usize) -> Perturbation {
    Perturbation {
        outages: vec![ElementRef::Branch(k)],
        ..Default::default()
    }
}

fn app() -> (AppState, Router) {
    let app = AppState::start(stressed(), ctx()).unwrap();
    (app.clone(), router(app))
}

async fn call(r: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req
            .header("content-type", "application/json")
            .body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let res = r.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get<T: DeserializeOwned>(r: &Router, uri: &str) -> T {
    let (status, body) = call(r, "GET", uri, None).await;
    assert_eq!(status, StatusCode::OK);
    serde_json::from_slice(&body).unwrap()
}

async fn post(r: &Router, uri: &str, body: Value) -> StatusCode {
    call(r, "POST", uri, Some(body)).await.0
}

async fn error_code(r: &Router, uri: &str, body: Option<Value>) -> (StatusCode, String) {
    let (status, body) = call(r, "POST", uri, body).await;
    let v: Value = serde_json::from_slice(&body).unwrap();
    (status, v["code"].as_str().unwrap().to_string())
}

async fn tick(r: &Router) -> Vec<DispatchEvent> {
    let (status, body) = call(r, "POST", "/api/tick", None).await;
    assert_eq!(status, StatusCode::OK);
    serde_json::from_slice(&body).unwrap()
}

#[tokio::test]
async fn fresh_service_is_at_tick_zero_in_monitor() {
    let (_, r) = app();
    let s: ApiStateSnapshot = get(&r, "/api/state").await;
    assert_eq!(
        (s.tick, s.mode, s.l_report.state_class),
        (0, Mode::Monitor, StateClass::Normal)
    );
    assert_eq!(s.case.bus_count, 118);
    assert!(s.pending.is_empty() && !s.model_loaded);
    let recs: Vec<Recommendation> = get(&r, "/api/recommendations").await;
    assert!(recs.is_empty());
}

#[tokio::test]
async fn bad_requests_map_to_their_status_codes() {
    let (_, r) = app();
    assert_eq!(
        error_code(&r, "/api/actions/r0/apply", None).await,
        (StatusCode::CONFLICT, "mode_conflict".into())
    );
    assert_eq!(
        post(&r, "/api/mode", json!({"mode": "OpenLoop"})).await,
        StatusCode::NO_CONTENT
    );
    assert_eq!(
        error_code(&r, "/api/actions/nope/apply", None).await,
        (StatusCode::NOT_FOUND, "unknown_id".into())
    );
    assert_eq!(
        error_code(&r, "/api/actions/nope/reject", None).await,
        (StatusCode::NOT_FOUND, "unknown_id".into())
    );
    for (uri, body) in [
        ("/api/mode", json!({"mode": "Turbo"})),
        ("/api/mode", json!({})),
        ("/api/disturbance", json!({"outages": 5})),
        ("/api/disturbance", json!([1, 2])),
    ] {
        assert_eq!(
            error_code(&r, uri, Some(body)).await,
            (StatusCode::BAD_REQUEST, "malformed_request".into())
        );
    }
    let bad = json!({"outages": [{"branch": 9999}]});
    assert_eq!(
        error_code(&r, "/api/disturbance", Some(bad)).await,
        (StatusCode::BAD_REQUEST, "invalid_input".into())
    );
    // Rejections are logged but change nothing else.
    let s: ApiStateSnapshot = get(&r, "/api/state").await;
    assert_eq!((s.tick, s.mode), (0, Mode::OpenLoop));
    assert!(
        s.recent_events
            .iter()
            .filter(|e| matches!(e.payload, EventPayload::InputRejected { .. }))
            .count()
            >= 3
    );
}

#[tokio::test]
async fn closed_loop_outage_is_corrected_like_the_headless_engine() {
    let (app, r) = app();
    let k = alarm_line();
    assert_eq!(
        post(&r, "/api/mode", json!({"mode": "ClosedLoop"})).await,
        StatusCode::NO_CONTENT
    );
    assert_eq!(
        post(&r, "/api/disturbance", json!({"outages": [{"branch": k}]})).await,
        StatusCode::NO_CONTENT
    );
    let events = tick(&r).await;
    let assessed = events
        .iter()
        .find_map(|e| match e.payload {
            EventPayload::Telemetry { l_max, state_class, .. } => Some((l_max.unwrap(), state_class.unwrap())),
            _ => None,
        })
        .unwrap();
    assert_ne!(assessed.1, StateClass::Normal);
    let after = events
        .iter()
        .find_map(|e| match &e.payload {
            EventPayload::AutoApplied { l_max_after, .. } => *l_max_after,
            _ => None,
        })
        .expect("auto-applied action");
    assert!(after < assessed.0, "{after} vs {}", assessed.0);

    // Same inputs straight through the engine give the same log.
    let c = ctx();
    let mut s = DispatchState::new(stressed(), &c).unwrap();
    for input in [
        DispatchInput::ModeChange { mode: Mode::ClosedLoop },
        DispatchInput::Disturbance {
            perturbation: outage(k),
        },
        DispatchInput::Tick { attack: None },
    ] {
        s = dispatch_step(&c, s, &input).unwrap().0;
    }
    assert_eq!(s.event_log, app.state().event_log);
    assert_eq!(s.last_report, app.state().last_report);
}

#[tokio::test]
async fn open_loop_recommendations_wait_for_the_operator() {
    let (_, r) = app();
    post(&r, "/api/mode", json!({"mode": "OpenLoop"})).await;
    post(&r, "/api/disturbance", json!({"outages": [{"branch": alarm_line()}]})).await;
    let events = tick(&r).await;
    assert!(!events
        .iter()
        .any(|e| matches!(e.payload, EventPayload::AutoApplied { .. })));
    let recs: Vec<Recommendation> = get(&r, "/api/recommendations").await;
    assert!(!recs.is_empty());
    let before: ApiStateSnapshot = get(&r, "/api/state").await;

    assert_eq!(
        call(&r, "POST", &format!("/api/actions/{}/apply", recs[0].id), None)
            .await
            .0,
        StatusCode::NO_CONTENT
    );
    let s: ApiStateSnapshot = get(&r, "/api/state").await;
    assert!(s.pending.iter().all(|p| p.id != recs[0].id));
    let applied = s.recent_events.iter().rev().find_map(|e| match &e.payload {
        EventPayload::OperatorApplied {
            recommendation_id,
            l_max_after,
            ..
        } => Some((recommendation_id.clone(), *l_max_after)),
        _ => None,
    });
    let (id, l_after) = applied.expect("applied event");
    assert_eq!(id, recs[0].id);
    assert!(l_after.unwrap() < before.l_report.l_max);
    // The same id again is gone.
    assert_eq!(
        error_code(&r, &format!("/api/actions/{}/apply", recs[0].id), None)
            .await
            .0,
        StatusCode::NOT_FOUND
    );

    // Reject path: the case does not move.
    tick(&r).await;
    let recs: Vec<Recommendation> = get(&r, "/api/recommendations").await;
    if let Some(rec) = recs.first() {
        let case_before: ApiStateSnapshot = get(&r, "/api/state").await;
        assert_eq!(
            call(&r, "POST", &format!("/api/actions/{}/reject", rec.id), None)
                .await
                .0,
            StatusCode::NO_CONTENT
        );
        let s: ApiStateSnapshot = get(&r, "/api/state").await;
        assert_eq!(s.l_report, case_before.l_report);
        assert!(matches!(
            s.recent_events.last().unwrap().payload,
            EventPayload::OperatorRejected { .. }
        ));
    }
}

#[tokio::test]
async fn events_page_by_tick() {
    let (_, r) = app();
    for _ in 0..4 {
        tick(&r).await;
    }
    let all: EventPage = get(&r, "/api/events").await;
    assert_eq!(all.events.len(), 4);
    assert!(all.events.iter().enumerate().all(|(i, e)| e.seq == i as u64));
    let page: EventPage = get(&r, "/api/events?since=3").await;
    assert!(page.events.iter().all(|e| e.tick >= 3));
    assert_eq!(
        page.events,
        all.events.iter().filter(|e| e.tick >= 3).cloned().collect::<Vec<_>>()
    );
    let empty: EventPage = get(&r, "/api/events?since=99").await;
    assert!(empty.events.is_empty());
    assert_eq!(
        call(&r, "GET", "/api/events?since=minus", None).await.0,
        StatusCode::BAD_REQUEST
    );
}

/// Reads body frames until one complete SSE event is buffered.
async fn next_sse(body: &mut Body, buf: &mut String) -> (String, String) {
    loop {
        if let Some(end) = buf.find("\n\n") {
            let block: String = buf.drain(..end + 2).collect();
            let mut name = String::new();
            let mut data = String::new();
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("event:") {
                    name = v.trim().to_string();
                } else if let Some(v) = line.strip_prefix("data:") {
                    data += v.trim_start();
                }
            }
            if !name.is_empty() {
                return (name, data);
            }
            continue;
        }
        let frame = body.frame().await.expect("stream open").unwrap();
        if let Ok(bytes) = frame.into_data() {
            buf.push_str(std::str::from_utf8(&bytes).unwrap());
        }
    }
}

#[tokio::test]
async fn stream_sends_a_snapshot_then_deltas() {
    let (app, r) = app();
    let req = Request::builder().uri("/api/stream").body(Body::empty()).unwrap();
    let res = r.clone().oneshot(req).await.unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    assert!(res.headers()["content-type"]
        .to_str()
        .unwrap()
        .starts_with("text/event-stream"));
    let mut body = res.into_body();
    let mut buf = String::new();
    let (name, data) = next_sse(&mut body, &mut buf).await;
    assert_eq!(name, "snapshot");
    let snap: ApiStateSnapshot = serde_json::from_str(&data).unwrap();
    assert_eq!(snap.tick, 0);

    app.submit(DispatchInput::Tick { attack: None }).await.unwrap();
    let (name, data) = next_sse(&mut body, &mut buf).await;
    assert_eq!(name, "delta");
    let delta: StreamDelta = serde_json::from_str(&data).unwrap();
    assert_eq!(delta.tick, 1);
    assert_eq!(delta.events.len(), 1);
    assert_eq!(delta.l_max, app.snapshot().l_report.l_max);
}

#[tokio::test]
async fn served_log_replays_to_the_served_state() {
    let (app, r) = app();
    post(&r, "/api/mode", json!({"mode": "Combined"})).await;
    tick(&r).await;
    post(
        &r,
        "/api/disturbance",
        json!({"outages": [{"branch": alarm_line()}], "load_scale": {"44": 1.1}}),
    )
    .await;
    tick(&r).await;
    post(&r, "/api/mode", json!({"mode": "OpenLoop"})).await;
    tick(&r).await;
    let recs: Vec<Recommendation> = get(&r, "/api/recommendations").await;
    if let Some(rec) = recs.first() {
        call(&r, "POST", &format!("/api/actions/{}/apply", rec.id), None).await;
    }
    call(&r, "POST", "/api/actions/ghost/reject", None).await;
    tick(&r).await;

    let served = app.state();
    let replayed = replay(&ctx(), &app.initial_state(), &served.event_log).unwrap();
    assert_eq!(replayed, *served);
}
