use std::path::PathBuf;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use futures_util::StreamExt;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use vdesk_core::action::gate::Decision;
use vdesk_core::action::EngineConfig;
use vdesk_core::rfb::{MockDesktop, Scenario};
use vdesk_core::session::{SessionConfig, SessionManager, Target};
use vdesk_server::{router, ServerConfig};

fn desk(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/desk").join(rel)
}

struct Rig {
    mock: MockDesktop,
    manager: SessionManager,
    app: Router,
    _data: tempfile::TempDir,
}

fn rig() -> Rig {
    let mock = MockDesktop::start(Scenario::load(&desk("scenario.json")).unwrap()).unwrap();
    let data = tempfile::tempdir().unwrap();
    let mut cfg = SessionConfig::new(data.path())
        .load_suite(&desk("suite.json"))
        .unwrap()
        .load_solutions(&desk("solutions.json"))
        .unwrap();
    cfg.allowlist = vec![Target {
        host: "127.0.0.1".into(),
        port: mock.port(),
    }];
    cfg.engine = EngineConfig::immediate();
    cfg.external_idle_timeout = Duration::from_millis(300);
    let manager = SessionManager::open(cfg).unwrap();
    Rig {
        mock,
        app: router(manager.clone()),
        manager,
        _data: data,
    }
}

async fn call_raw(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<(String, String)>, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let headers = resp
        .headers()
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_str().unwrap_or("").to_string()))
        .collect();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, headers, bytes)
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, _, bytes) = call_raw(app, method, uri, body).await;
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

async fn create(rig: &Rig, gating: &str) -> String {
    let body = json!({"host": "127.0.0.1", "port": rig.mock.port(), "gating": gating});
    let (status, v) = call(&rig.app, Method::POST, "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    let id = v["id"].as_str().unwrap().to_string();
    let deadline = Instant::now() + Duration::from_secs(3);
    loop {
        let (status, _) = call(&rig.app, Method::GET, &format!("/sessions/{id}/observation"), None).await;
        if status == StatusCode::OK {
            break;
        }
        assert!(Instant::now() < deadline, "no frame");
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    id
}

#[tokio::test(flavor = "multi_thread")]
async fn gated_command_round_trip() {
    let rig = rig();
    let id = create(&rig, "gated-exec").await;

    let (status, obs) = call(&rig.app, Method::GET, &format!("/sessions/{id}/observation?frames=3"), None).await;
    assert_eq!(status, StatusCode::OK);
    let ts = obs["screenshot"]["timestamp"].as_u64().unwrap();
    let (status, headers, png) = call_raw(&rig.app, Method::GET, &format!("/frames/{id}/{ts}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(headers.contains(&("content-type".into(), "image/png".into())));
    assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");

    let (status, v) = call(&rig.app, Method::POST, &format!("/sessions/{id}/actions"), Some(json!({"kind": "click", "point": {"x": 5, "y": 5}}))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["status"], "executed");

    let action = json!({"kind": "exec_command", "command": "echo hi > note.txt"});
    let (status, v) = call(&rig.app, Method::POST, &format!("/sessions/{id}/actions"), Some(action)).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{v}");
    let req = v["request"]["id"].as_str().unwrap().to_string();

    let (_, info) = call(&rig.app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(info["pending"][0]["id"], req.as_str());
    let (status, v) = call(&rig.app, Method::GET, &format!("/confirmations/{req}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["resolution"], "pending");

    // a second action waits for the first
    let (status, v) = call(&rig.app, Method::POST, &format!("/sessions/{id}/actions"), Some(json!({"kind": "wait", "duration_ms": 1}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"], "session_busy");

    let (status, v) = call(&rig.app, Method::POST, &format!("/confirmations/{req}"), Some(json!({"decision": "approve"}))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["status"], "executed");
    assert_eq!(v["step"]["approval"], req.as_str());
    let (status, v) = call(&rig.app, Method::POST, &format!("/confirmations/{req}"), Some(json!({"decision": "reject"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"], "already_resolved");

    let (status, v) = call(&rig.app, Method::POST, &format!("/sessions/{id}/feedback"), Some(json!({"text": "good", "step": 1}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(v["source"], "human");
    let (status, _) = call(&rig.app, Method::POST, &format!("/sessions/{id}/feedback"), Some(json!({"text": "  "}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, v) = call(&rig.app, Method::DELETE, &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["state"], "closed");
    let (status, headers, tar) = call_raw(&rig.app, Method::GET, &format!("/sessions/{id}/trajectory"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(headers.contains(&("content-type".into(), "application/x-tar".into())));
    let text = String::from_utf8_lossy(&tar);
    for name in ["metadata.json", "steps.jsonl", "feedback.jsonl"] {
        assert!(text.contains(&format!("{id}/{name}")), "{name} missing");
    }

    let (status, v) = call(&rig.app, Method::POST, &format!("/sessions/{id}/actions"), Some(json!({"kind": "wait", "duration_ms": 1}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"], "session_closed");
}

#[tokio::test(flavor = "multi_thread")]
async fn error_statuses() {
    let rig = rig();
    let other = rig.mock.port().wrapping_add(1);
    let (status, v) = call(&rig.app, Method::POST, "/sessions", Some(json!({"host": "127.0.0.1", "port": other}))).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(v["error"], "target_not_allowed");

    let (status, v) = call(&rig.app, Method::GET, "/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "unknown_session");
    let (status, _) = call(&rig.app, Method::POST, "/confirmations/nope", Some(json!({"decision": "approve"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&rig.app, Method::GET, "/runs/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let id = create(&rig, "off").await;
    let (status, v) = call(&rig.app, Method::POST, &format!("/sessions/{id}/actions"), Some(json!({"kind": "click", "point": {"x": 5000, "y": 5}}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "invalid_action");
    let (status, _) = call(&rig.app, Method::POST, &format!("/sessions/{id}/runs"), Some(json!({"task_id": "nope", "policy": "scripted"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&rig.app, Method::GET, &format!("/frames/{id}/1"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&rig.app, Method::POST, &format!("/sessions/{id}/annotations"), Some(json!({
        "instruction": "x", "bbox": {"x": 300, "y": 0, "w": 100, "h": 10},
        "click_type": "single", "platform": "linux", "application": "os"
    }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test(flavor = "multi_thread")]
async fn scripted_run_over_http() {
    let rig = rig();
    let (status, tasks) = call(&rig.app, Method::GET, "/tasks", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(tasks.as_array().unwrap().len(), 12);
    let (status, tools) = call(&rig.app, Method::GET, "/tools", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(tools.is_array());

    let id = create(&rig, "off").await;
    let (status, run) = call(&rig.app, Method::POST, &format!("/sessions/{id}/runs"), Some(json!({"task_id": "notes-hello", "policy": "scripted"}))).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{run}");
    let run_id = run["id"].as_str().unwrap().to_string();
    let deadline = Instant::now() + Duration::from_secs(10);
    let done = loop {
        let (_, v) = call(&rig.app, Method::GET, &format!("/runs/{run_id}"), None).await;
        if v["status"] != "running" {
            break v;
        }
        assert!(Instant::now() < deadline, "run did not finish");
        tokio::time::sleep(Duration::from_millis(20)).await;
    };
    assert_eq!(done["status"], "completed", "{done}");
    assert_eq!(done["verdict"]["success"], true);

    let (status, sample) = call(&rig.app, Method::POST, &format!("/sessions/{id}/annotations"), Some(json!({
        "instruction": "open the bar", "bbox": {"x": 0, "y": 220, "w": 320, "h": 20},
        "click_type": "single", "platform": "linux", "application": "os"
    }))).await;
    assert_eq!(status, StatusCode::CREATED, "{sample}");
    assert_eq!(sample["screenshot"]["width"], 320);
    assert!(rig.manager.annotations_path().is_file());
}

#[tokio::test(flavor = "multi_thread")]
async fn events_stream_over_websocket() {
    let rig = rig();
    let id = create(&rig, "gated-exec").await;
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = rig.app.clone();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/sessions/{id}/events")).await.unwrap();
    let (status, _) = call(&rig.app, Method::POST, &format!("/sessions/{id}/actions"), Some(json!({"kind": "exec_command", "command": "true"}))).await;
    assert_eq!(status, StatusCode::ACCEPTED);

    let mut seen = Vec::new();
    let wanted = ["confirmation_pending"];
    let read = async {
        while let Some(msg) = ws.next().await {
            let text = msg.unwrap().into_text().unwrap();
            let v: Value = serde_json::from_str(&text).unwrap();
            seen.push(v["type"].as_str().unwrap().to_string());
            if wanted.iter().all(|w| seen.iter().any(|s| s == w)) {
                break;
            }
        }
    };
    tokio::time::timeout(Duration::from_secs(5), read).await.expect("events did not arrive");

    let mgr = rig.manager.clone();
    let rejected = tokio::task::spawn_blocking(move || {
        let req = mgr.info(&id).unwrap().pending[0].id.clone();
        mgr.resolve_confirmation(&req, Decision::Reject, Some("no".into())).is_ok()
    })
    .await
    .unwrap();
    assert!(rejected);
    let resolved = async {
        while let Some(msg) = ws.next().await {
            let v: Value = serde_json::from_str(&msg.unwrap().into_text().unwrap()).unwrap();
            if v["type"] == "confirmation_resolved" {
                return v;
            }
        }
        panic!("stream ended");
    };
    let v = tokio::time::timeout(Duration::from_secs(5), resolved).await.unwrap();
    assert_eq!(v["request"]["resolution"], "rejected");

    let err = tokio_tungstenite::connect_async(format!("ws://{addr}/sessions/nope/events")).await;
    assert!(err.is_err());
}

#[test]
fn config_paths_resolve_against_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vdesk.toml");
    std::fs::write(
        &path,
        r#"
listen = "127.0.0.1:0"
data_root = "data"
allowlist = ["127.0.0.1:5900"]
gating = "gated-all"
max_fps = 4.0
"#,
    )
    .unwrap();
    let cfg = ServerConfig::load(&path).unwrap();
    assert_eq!(cfg.data_root, dir.path().join("data"));
    let sc = cfg.session_config().unwrap();
    assert_eq!(sc.allowlist, vec![Target { host: "127.0.0.1".into(), port: 5900 }]);
    assert_eq!(sc.max_fps, 4.0);

    std::fs::write(&path, "data_root = \"d\"\ncolour = 1\n").unwrap();
    assert!(ServerConfig::load(&path).unwrap_err().contains("colour"));
    std::fs::write(&path, "data_root = \"d\"\nallowlist = [\"nohost\"]\n").unwrap();
    assert!(ServerConfig::load(&path).unwrap().session_config().is_err());
}
