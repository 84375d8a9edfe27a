//! HTTP/WebSocket front end for the session manager.
//!
//! ```text
//! POST   /sessions                          create (CreateSession) -> SessionInfo
//! GET    /sessions                          list
//! GET    /sessions/{id}                     SessionInfo, including pending confirmations
//! DELETE /sessions/{id}                     close
//! GET    /sessions/{id}/observation?frames=N
//! GET    /frames/{session}/{ts}             image/png
//! POST   /sessions/{id}/actions             Action -> 200 executed | 202 pending
//! GET    /confirmations/{id}
//! POST   /confirmations/{id}                {"decision": "approve"|"reject", "note": ...}
//! POST   /sessions/{id}/feedback            {"text", "source", "step"}
//! POST   /sessions/{id}/annotations         AnnotationRequest -> GroundingSample
//! GET    /tasks
//! GET    /tools                             tool docs
//! POST   /sessions/{id}/runs                RunRequest -> 202 RunInfo
//! GET    /runs/{id}
//! GET    /sessions/{id}/trajectory          application/x-tar
//! GET    /sessions/{id}/events              WebSocket, one JSON SessionEvent per message
//! ```

use std::path::{Path, PathBuf};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast::error::RecvError;
use vdesk_core::action::gate::Decision;
use vdesk_core::action::{Action, ConfirmError, GatingMode};
use vdesk_core::feedback::FeedbackSource;
use vdesk_core::session::{
    AnnotationRequest, CreateSession, RunRequest, SessionConfig, SessionError, SessionManager,
    Submitted, Target,
};

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

/// The `serve` configuration file (TOML). Relative paths are resolved
/// against the file's directory.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    pub data_root: PathBuf,
    /// `host:port` entries.
    #[serde(default)]
    pub allowlist: Vec<String>,
    #[serde(default)]
    pub gating: GatingMode,
    #[serde(default)]
    pub suite: Option<PathBuf>,
    #[serde(default)]
    pub solutions: Option<PathBuf>,
    #[serde(default)]
    pub tools_dir: Option<PathBuf>,
    #[serde(default)]
    pub max_fps: Option<f64>,
    #[serde(default)]
    pub external_idle_timeout_ms: Option<u64>,
    #[serde(default)]
    pub confirmation_timeout_ms: Option<u64>,
}

impl ServerConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg: ServerConfig =
            toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.data_root);
        for p in [&mut cfg.suite, &mut cfg.solutions, &mut cfg.tools_dir].into_iter().flatten() {
            fix(p);
        }
        Ok(cfg)
    }

    pub fn session_config(&self) -> Result<SessionConfig, String> {
        let mut cfg = SessionConfig::new(&self.data_root);
        cfg.allowlist = self
            .allowlist
            .iter()
            .map(|s| s.parse::<Target>())
            .collect::<Result<_, _>>()?;
        cfg.default_gating = self.gating;
        if let Some(suite) = &self.suite {
            cfg = cfg.load_suite(suite).map_err(|e| e.to_string())?;
        }
        if let Some(sol) = &self.solutions {
            cfg = cfg.load_solutions(sol).map_err(|e| e.to_string())?;
        }
        cfg.tools_dir = self.tools_dir.clone();
        if let Some(fps) = self.max_fps {
            cfg.max_fps = fps;
        }
        if let Some(ms) = self.external_idle_timeout_ms {
            cfg.external_idle_timeout = Duration::from_millis(ms);
        }
        if let Some(ms) = self.confirmation_timeout_ms {
            cfg.confirmation_timeout = Duration::from_millis(ms);
        }
        Ok(cfg)
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

pub struct ApiError(SessionError);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        ApiError(e)
    }
}

fn classify(e: &SessionError) -> (StatusCode, &'static str) {
    use SessionError as E;
    match e {
        E::TargetNotAllowed(_) => (StatusCode::FORBIDDEN, "target_not_allowed"),
        E::ConnectFailed(_) => (StatusCode::BAD_GATEWAY, "connect_failed"),
        E::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
        E::UnknownFrame(_) => (StatusCode::NOT_FOUND, "unknown_frame"),
        E::UnknownTask(_) => (StatusCode::NOT_FOUND, "unknown_task"),
        E::UnknownRun(_) => (StatusCode::NOT_FOUND, "unknown_run"),
        E::Confirm(ConfirmError::UnknownRequest(_)) => (StatusCode::NOT_FOUND, "unknown_request"),
        E::Confirm(ConfirmError::AlreadyResolved(_)) => (StatusCode::CONFLICT, "already_resolved"),
        E::SessionClosed(_) => (StatusCode::CONFLICT, "session_closed"),
        E::SessionBusy(_) => (StatusCode::CONFLICT, "session_busy"),
        E::NoFrames => (StatusCode::SERVICE_UNAVAILABLE, "no_frames"),
        E::InvalidAction(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_action"),
        E::EmptyText(_) => (StatusCode::UNPROCESSABLE_ENTITY, "empty_text"),
        E::Grounding(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_annotation"),
        E::NoSolutions => (StatusCode::UNPROCESSABLE_ENTITY, "no_solutions"),
        E::Harness(_) => (StatusCode::INTERNAL_SERVER_ERROR, "harness_error"),
        E::Recorder(_) | E::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = classify(&self.0);
        let body = ErrorBody {
            error: kind,
            message: self.0.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs blocking manager work off the async executor.
async fn blocking<T, F>(mgr: &SessionManager, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(SessionManager) -> Result<T, SessionError> + Send + 'static,
{
    let mgr = mgr.clone();
    match tokio::task::spawn_blocking(move || f(mgr)).await {
        Ok(r) => r.map_err(ApiError),
        Err(e) => Err(ApiError(SessionError::Io(std::io::Error::other(e.to_string())))),
    }
}

pub fn router(mgr: SessionManager) -> Router {
    use axum::routing::post;
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(session_info).delete(close_session))
        .route("/sessions/{id}/observation", get(observation))
        .route("/frames/{session}/{ts}", get(frame))
        .route("/sessions/{id}/actions", post(submit_action))
        .route("/confirmations/{id}", get(confirmation).post(resolve))
        .route("/sessions/{id}/feedback", post(feedback))
        .route("/sessions/{id}/annotations", post(annotate))
        .route("/tasks", get(tasks))
        .route("/tools", get(tools))
        .route("/sessions/{id}/runs", post(run_task))
        .route("/runs/{id}", get(run))
        .route("/sessions/{id}/trajectory", get(trajectory))
        .route("/sessions/{id}/events", get(events))
        .with_state(mgr)
}

async fn create_session(
    State(mgr): State<SessionManager>,
    Json(req): Json<CreateSession>,
) -> ApiResult<impl IntoResponse> {
    let info = blocking(&mgr, move |m| m.create_session(req)).await?;
    Ok((StatusCode::CREATED, Json(info)))
}

async fn list_sessions(State(mgr): State<SessionManager>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(&mgr, |m| Ok(m.list_sessions())).await?))
}

async fn session_info(
    State(mgr): State<SessionManager>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(&mgr, move |m| m.info(&id)).await?))
}

async fn close_session(
    State(mgr): State<SessionManager>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(&mgr, move |m| m.close_session(&id)).await?))
}

#[derive(Debug, Deserialize)]
struct FramesQuery {
    #[serde(default = "one")]
    frames: usize,
}

fn one() -> usize {
    1
}

async fn observation(
    State(mgr): State<SessionManager>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<FramesQuery>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(&mgr, move |m| m.observation(&id, q.frames)).await?))
}

async fn frame(
    State(mgr): State<SessionManager>,
    UrlPath((session, ts)): UrlPath<(String, u64)>,
) -> ApiResult<impl IntoResponse> {
    let png = blocking(&mgr, move |m| m.frame_png(&session, ts)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png))
}

async fn submit_action(
    State(mgr): State<SessionManager>,
    UrlPath(id): UrlPath<String>,
    Json(action): Json<Action>,
) -> ApiResult<impl IntoResponse> {
    let out = blocking(&mgr, move |m| m.submit_action(&id, action)).await?;
    let status = match out {
        Submitted::Executed { .. } => StatusCode::OK,
        Submitted::Pending { .. } => StatusCode::ACCEPTED,
    };
    Ok((status, Json(out)))
}

async fn confirmation(
    State(mgr): State<SessionManager>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(&mgr, move |m| m.confirmation(&id)).await?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResolveBody {
    decision: Decision,
    #[serde(default)]
    note: Option<String>,
}

async fn resolve(
    State(mgr): State<SessionManager>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<ResolveBody>,
) -> ApiResult<impl IntoResponse> {
    let out = blocking(&mgr, move |m| m.resolve_confirmation(&id, body.decision, body.note)).await?;
    Ok(Json(out))
}

fn human() -> FeedbackSource {
    FeedbackSource::Human
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackBody {
    text: String,
    #[serde(default = "human")]
    source: FeedbackSource,
    #[serde(default)]
    step: Option<u64>,
}

async fn feedback(
    State(mgr): State<SessionManager>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<FeedbackBody>,
) -> ApiResult<impl IntoResponse> {
    let rec = blocking(&mgr, move |m| {
        m.submit_feedback(&id, &body.text, body.source, body.step)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(rec)))
}

async fn annotate(
    State(mgr): State<SessionManager>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<AnnotationRequest>,
) -> ApiResult<impl IntoResponse> {
    let sample = blocking(&mgr, move |m| m.annotate(&id, req)).await?;
    Ok((StatusCode::CREATED, Json(sample)))
}

async fn tasks(State(mgr): State<SessionManager>) -> impl IntoResponse {
    Json(mgr.tasks().to_vec())
}

async fn tools(State(mgr): State<SessionManager>) -> impl IntoResponse {
    Json(mgr.tools().map(|t| t.docs()).unwrap_or_default())
}

async fn run_task(
    State(mgr): State<SessionManager>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<RunRequest>,
) -> ApiResult<impl IntoResponse> {
    let info = blocking(&mgr, move |m| m.run_task(&id, req)).await?;
    Ok((StatusCode::ACCEPTED, Json(info)))
}

async fn run(
    State(mgr): State<SessionManager>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(&mgr, move |m| m.run(&id)).await?))
}

async fn trajectory(
    State(mgr): State<SessionManager>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<impl IntoResponse> {
    let name = format!("attachment; filename=\"{id}.tar\"");
    let tar = blocking(&mgr, move |m| m.trajectory_tar(&id)).await?;
    Ok((
        [
            (header::CONTENT_TYPE, "application/x-tar".to_string()),
            (header::CONTENT_DISPOSITION, name),
        ],
        tar,
    ))
}

async fn events(
    State(mgr): State<SessionManager>,
    UrlPath(id): UrlPath<String>,
    ws: WebSocketUpgrade,
) -> ApiResult<Response> {
    let rx = mgr.subscribe(&id)?;
    Ok(ws.on_upgrade(move |socket| pump(socket, rx)))
}

async fn pump(
    mut socket: WebSocket,
    mut rx: tokio::sync::broadcast::Receiver<vdesk_core::session::SessionEvent>,
) {
    loop {
        tokio::select! {
            ev = rx.recv() => {
                let text = match ev {
                    Ok(ev) => serde_json::to_string(&ev).unwrap_or_default(),
                    Err(RecvError::Lagged(n)) => format!(r#"{{"type":"lagged","missed":{n}}}"#),
                    Err(RecvError::Closed) => break,
                };
                if socket.send(Message::Text(text.into())).await.is_err() {
                    break;
                }
            }
            msg = socket.recv() => match msg {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
}

async fn stop_signal() {
    use tokio::signal::unix::{signal, SignalKind};
    let mut term = match signal(SignalKind::terminate()) {
        Ok(s) => s,
        Err(_) => {
            let _ = tokio::signal::ctrl_c().await;
            return;
        }
    };
    tokio::select! {
        _ = tokio::signal::ctrl_c() => {}
        _ = term.recv() => {}
    }
    log::info!("shutting down");
}

/// Binds and serves until SIGINT or SIGTERM, then closes every session.
pub async fn serve(cfg: ServerConfig) -> Result<(), String> {
    let mgr = tokio::task::spawn_blocking({
        let sc = cfg.session_config()?;
        move || SessionManager::open(sc)
    })
    .await
    .map_err(|e| e.to_string())?
    .map_err(|e| e.to_string())?;
    let listener = tokio::net::TcpListener::bind(&cfg.listen)
        .await
        .map_err(|e| format!("bind {}: {e}", cfg.listen))?;
    log::info!("listening on {}", listener.local_addr().map_err(|e| e.to_string())?);
    let app = router(mgr.clone());
    let result = axum::serve(listener, app)
        .with_graceful_shutdown(stop_signal())
        .await
        .map_err(|e| e.to_string());
    tokio::task::spawn_blocking(move || mgr.shutdown()).await.ok();
    result
}
