use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use nfsar::config::ReconConfig;
use nfsar::io::{decode_image, Container};
use nfsar::pipeline;
use nfsar_server::{router, AppState, Session};

const GRID: &str = r#"{"algorithm": "bpa", "grid": {
    "x": {"min_m": -0.05, "max_m": 0.05, "count": 21},
    "y": {"min_m": -0.05, "max_m": 0.05, "count": 21},
    "z": {"min_m": 0.4, "max_m": 0.6, "count": 21}}}"#;

async fn call(app: &Router, method: Method, uri: &str, body: &str, accept: Option<&str>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri).header(header::CONTENT_TYPE, "application/json");
    if let Some(a) = accept {
        req = req.header(header::ACCEPT, a);
    }
    let resp = app.clone().oneshot(req.body(Body::from(body.to_string())).unwrap()).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn call_json(app: &Router, method: Method, uri: &str, body: &str) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body, None).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn wait(app: &Router, accepted: Value) -> Value {
    let uri = accepted["poll"].as_str().expect("job link").to_string();
    for _ in 0..600 {
        let (s, job) = call_json(app, Method::GET, &uri, "").await;
        assert_eq!(s, StatusCode::OK);
        if job["state"] == "done" || job["state"] == "failed" {
            return job;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("job did not finish");
}

async fn simulate(app: &Router) -> Value {
    let (s, body) = call_json(app, Method::POST, "/session/simulate", "").await;
    assert_eq!(s, StatusCode::ACCEPTED);
    wait(app, body).await
}

#[tokio::test]
async fn derived_range_resolution_for_four_gigahertz() {
    let app = router(AppState::new());
    let body = json!({"f0_Hz": 77e9, "K_Hz_per_s": 62.5e12, "Nk": 64, "fS_Hz": 1e6, "fC_Hz": 79e9}).to_string();
    let (s, _) = call_json(&app, Method::PUT, "/session/waveform", &body).await;
    assert_eq!(s, StatusCode::OK);
    let (s, d) = call_json(&app, Method::GET, "/derived", "").await;
    assert_eq!(s, StatusCode::OK);
    let dz = d["rangeResolution_m"].as_f64().unwrap();
    assert!((dz - 0.0375).abs() / 0.0375 < 1e-3, "{dz}");
    assert_eq!(d["poseCount"], 1024);
    assert!(d["crossRangeResolution_m"]["x"].as_f64().unwrap() > 0.0);
}

#[tokio::test]
async fn validation_errors_carry_field_paths() {
    let app = router(AppState::new());
    let body = json!({"f0_Hz": 77e9, "K_Hz_per_s": 62.5e12, "Nk": 1, "fS_Hz": 1e6, "fC_Hz": 79e9}).to_string();
    let (s, e) = call_json(&app, Method::PUT, "/session/waveform", &body).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(e["field"], "waveform.Nk");
    let (s, e) = call_json(&app, Method::PUT, "/session/waveform", r#"{"f0_Hz": "high"}"#).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(e["field"], "waveform.f0_Hz");
    let (s, e) = call_json(&app, Method::PUT, "/session/pattern", r#"{"mode": "rectilinear", "dx_m": 0.001, "dy_m": 0.001, "nx": 0, "ny": 4}"#).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(e["field"], "pattern.nx");
    let (s, _) = call_json(&app, Method::PUT, "/session/scene", r#"{"source": "points", "points": []}"#).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call_json(&app, Method::GET, "/jobs/99", "").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn single_point_loop_and_artifacts() {
    let app = router(AppState::new());
    let (s, _) = call_json(&app, Method::POST, "/session/reconstruct", GRID).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let job = simulate(&app).await;
    assert_eq!(job["state"], "done", "{job}");
    assert_eq!(job["result"]["poses"], 1024);

    let (s, accepted) = call_json(&app, Method::POST, "/session/reconstruct", GRID).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let job = wait(&app, accepted).await;
    assert_eq!(job["state"], "done", "{job}");

    let (s, slice) = call_json(&app, Method::GET, "/artifacts/image-slice?z=0.5&dbMin=-30", "").await;
    assert_eq!(s, StatusCode::OK);
    assert!((slice["z_m"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    let db: Vec<Vec<f64>> = serde_json::from_value(slice["dB"].clone()).unwrap();
    let (mut bi, mut bj, mut best) = (0, 0, f64::NEG_INFINITY);
    for (i, row) in db.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            assert!(v >= -30.0);
            if v > best {
                (bi, bj, best) = (i, j, v);
            }
        }
    }
    let x: Vec<f64> = serde_json::from_value(slice["x_m"].clone()).unwrap();
    let y: Vec<f64> = serde_json::from_value(slice["y_m"].clone()).unwrap();
    assert!(x[bi].abs() < 1e-12 && y[bj].abs() < 1e-12, "peak at ({}, {})", x[bi], y[bj]);
    assert_eq!(best, 0.0);

    let (s, bytes) = call(&app, Method::GET, "/artifacts/image-slice?z=0.5", "", Some("application/octet-stream")).await;
    assert_eq!(s, StatusCode::OK);
    let plane = decode_image(&Container::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(plane.shape(), (21, 21, 1));

    let (s, csv) = call(&app, Method::GET, "/artifacts/image-slice?z=0.5", "", Some("text/csv")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 21 * 21 + 1);

    let (s, csv) = call(&app, Method::GET, "/artifacts/pattern.csv", "", None).await;
    assert_eq!(s, StatusCode::OK);
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().next(), Some("x_m,y_m,dz_m"));
    assert_eq!(text.lines().count(), 1025);

    let (s, csv) = call(&app, Method::GET, "/artifacts/psf.csv", "", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 2);

    let (s, bytes) = call(&app, Method::GET, "/artifacts/cube", "", Some("application/octet-stream")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(Container::from_bytes(&bytes).unwrap().kind(), Some("beat_cube"));
}

#[tokio::test]
async fn editing_the_scene_makes_the_beat_signal_stale() {
    let app = router(AppState::new());
    assert_eq!(simulate(&app).await["state"], "done");
    let (_, sess) = call_json(&app, Method::GET, "/session", "").await;
    assert_eq!(sess["stages"]["beatSignal"]["stale"], false);
    let scene = r#"{"source": "points", "points": [{"position_m": [0.01, 0, 0.45]}]}"#;
    let (s, stages) = call_json(&app, Method::PUT, "/session/scene", scene).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(stages["beatSignal"]["stale"], true);
    let (s, e) = call_json(&app, Method::POST, "/session/reconstruct", GRID).await;
    assert_eq!(s, StatusCode::CONFLICT, "{e}");
    assert_eq!(simulate(&app).await["state"], "done");
    let (s, _) = call_json(&app, Method::POST, "/session/reconstruct", GRID).await;
    assert_eq!(s, StatusCode::ACCEPTED);
}

#[tokio::test]
async fn incompatible_algorithm_is_unprocessable() {
    let app = router(AppState::new());
    assert_eq!(simulate(&app).await["state"], "done");
    let body = GRID.replace("\"bpa\"", "\"pfa_circular_2d\"");
    let (s, e) = call_json(&app, Method::POST, "/session/reconstruct", &body).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(e["field"], "algorithm");
    let (s, e) = call_json(&app, Method::POST, "/session/reconstruct", &GRID.replace("\"bpa\"", "\"warp\"")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(e["field"], "reconstruct.algorithm");
}

#[tokio::test]
async fn api_matches_the_pipeline() {
    let app = router(AppState::new());
    let pattern = r#"{"mode": "linear", "dy_m": 0.002, "ny": 48}"#;
    assert_eq!(call_json(&app, Method::PUT, "/session/pattern", pattern).await.0, StatusCode::OK);
    let sim = r#"{"noise": {"snr_dB": 15}, "seed": 4}"#;
    let (s, accepted) = call_json(&app, Method::POST, "/session/simulate", sim).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    assert_eq!(wait(&app, accepted).await["state"], "done");
    let rc = r#"{"algorithm": "rma_linear_2d", "grid": {
        "x": {"min_m": 0, "max_m": 0, "count": 1},
        "y": {"min_m": -0.04, "max_m": 0.04, "count": 17},
        "z": {"min_m": 0.4, "max_m": 0.6, "count": 21}}}"#;
    let (_, accepted) = call_json(&app, Method::POST, "/session/reconstruct", rc).await;
    assert_eq!(wait(&app, accepted).await["state"], "done");
    let (_, bytes) = call(&app, Method::GET, "/artifacts/image", "", Some("application/octet-stream")).await;
    let api = Container::from_bytes(&bytes).unwrap();

    let mut session = Session::default();
    session.pattern = serde_json::from_str(pattern).unwrap();
    session.simulation = serde_json::from_str(sim).unwrap();
    let rc: ReconConfig = serde_json::from_str(rc).unwrap();
    let cfg = session.run_config(Some(rc));
    let cube = pipeline::simulate_config(&cfg, &pipeline::prepare(&cfg).unwrap()).unwrap();
    let img = pipeline::reconstruct_config(&cfg, &cube).unwrap();
    let cli = nfsar::io::encode_image(&img, false).unwrap();
    assert_eq!(api.payload, cli.payload);
}
