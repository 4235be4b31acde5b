//! Network front end: the line-framed bus on TCP, the HTTP API, the console
//! WebSocket bridge and the static console assets.
//!
//! One `std::sync::Mutex` guards the engine; every lock is held only for a
//! synchronous engine call, never across an await.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::Deserialize;
use serde_json::json;
use tokio::io::{AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch};

use super::{Host, HostError, Principal};
use crate::bus::{ClientId, FrameBytes};
use crate::gateway::{CloseReason, GatewayError, SessionId, SessionMode};
use crate::safety::{Authority, EStopSource};
use crate::slots::{SlotError, SlotId, TeamId, DEFAULT_SLOT_SECONDS};

/// Longest accepted frame line, bytes.
pub const MAX_LINE: usize = 1 << 20;
const AUTH_TIMEOUT: Duration = Duration::from_secs(10);

pub fn unix_now_us() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_micros() as u64)
        .unwrap_or(0)
}

enum Outgoing {
    Frame(FrameBytes),
    Close,
}

struct Shared {
    host: Mutex<Host>,
    outboxes: Mutex<HashMap<ClientId, mpsc::UnboundedSender<Outgoing>>>,
    operator_token: String,
    console_dir: Option<PathBuf>,
}

impl Shared {
    fn host(&self) -> MutexGuard<'_, Host> {
        self.host.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Runs `f` on the engine at the current wall time, then ships output.
    fn with_host<R>(&self, f: impl FnOnce(&mut Host) -> R) -> R {
        let mut host = self.host();
        host.advance_to(unix_now_us());
        let r = f(&mut host);
        self.pump(&mut host);
        r
    }

    fn pump(&self, host: &mut Host) {
        let mut outboxes = self.outboxes.lock().unwrap_or_else(|p| p.into_inner());
        for c in host.clients_with_output() {
            let frames = host.drain(c);
            match outboxes.get(&c) {
                Some(tx) => {
                    for f in frames {
                        if tx.send(Outgoing::Frame(f)).is_err() {
                            host.mark_dead(c);
                            break;
                        }
                    }
                }
                None => host.mark_dead(c),
            }
        }
        for c in host.take_kicked() {
            if let Some(tx) = outboxes.remove(&c) {
                let _ = tx.send(Outgoing::Close);
            }
            host.disconnect(c);
        }
    }

    fn register(&self, principal: Principal) -> (ClientId, mpsc::UnboundedReceiver<Outgoing>) {
        let (tx, rx) = mpsc::unbounded_channel();
        let mut host = self.host();
        let id = host.connect(principal);
        self.outboxes.lock().unwrap_or_else(|p| p.into_inner()).insert(id, tx);
        (id, rx)
    }

    fn unregister(&self, id: ClientId) {
        self.outboxes.lock().unwrap_or_else(|p| p.into_inner()).remove(&id);
        self.host().disconnect(id);
    }

    /// `Ok(grant line)` or the `ERR` reply for a failed `AUTH`.
    fn auth(&self, line: &str) -> Result<(Principal, String), String> {
        let token = line.trim_end().strip_prefix("AUTH ").map(str::trim).unwrap_or("");
        let host = self.host();
        match host.authenticate(token) {
            Ok((p, grant)) => Ok((p, format!("OK {grant}\n"))),
            Err(HostError::Gateway(GatewayError::Expired)) => Err("ERR EXPIRED\n".into()),
            Err(_) => Err("ERR AUTH_FAILED\n".into()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub bus_addr: SocketAddr,
    pub http_addr: SocketAddr,
    pub console_dir: Option<PathBuf>,
}

/// A running server. Dropping it does not stop it; call [`ServerHandle::shutdown`].
pub struct ServerHandle {
    pub bus_addr: SocketAddr,
    pub http_addr: SocketAddr,
    stop: watch::Sender<bool>,
    tasks: Vec<tokio::task::JoinHandle<()>>,
}

impl ServerHandle {
    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        for t in self.tasks {
            let _ = t.await;
        }
    }
}

/// Binds both listeners and starts the clock, bus and HTTP tasks.
pub async fn start(host: Host, opts: ServerOptions) -> std::io::Result<ServerHandle> {
    let operator_token = host.config.operator_token.clone();
    let shared = Arc::new(Shared {
        host: Mutex::new(host),
        outboxes: Mutex::new(HashMap::new()),
        operator_token,
        console_dir: opts.console_dir,
    });
    let bus = TcpListener::bind(opts.bus_addr).await?;
    let http = TcpListener::bind(opts.http_addr).await?;
    let (stop, stop_rx) = watch::channel(false);
    let bus_addr = bus.local_addr()?;
    let http_addr = http.local_addr()?;

    let clock = {
        let shared = shared.clone();
        let mut stop_rx = stop_rx.clone();
        tokio::spawn(async move {
            let tick = Duration::from_micros(shared.host().tick_us());
            let mut interval = tokio::time::interval(tick);
            interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
            loop {
                tokio::select! {
                    _ = interval.tick() => shared.with_host(|_| ()),
                    _ = stop_rx.changed() => break,
                }
            }
        })
    };

    let bus_task = {
        let shared = shared.clone();
        let mut stop_rx = stop_rx.clone();
        tokio::spawn(async move {
            loop {
                tokio::select! {
                    accepted = bus.accept() => match accepted {
                        Ok((stream, peer)) => {
                            let shared = shared.clone();
                            tokio::spawn(async move {
                                if let Err(e) = serve_bus_client(shared, stream).await {
                                    tracing::debug!(%peer, "bus connection ended: {e}");
                                }
                            });
                        }
                        Err(e) => tracing::warn!("bus accept failed: {e}"),
                    },
                    _ = stop_rx.changed() => break,
                }
            }
        })
    };

    let http_task = {
        let app = router(shared.clone());
        let mut stop_rx = stop_rx.clone();
        tokio::spawn(async move {
            let _ = axum::serve(http, app)
                .with_graceful_shutdown(async move {
                    let _ = stop_rx.changed().await;
                })
                .await;
        })
    };

    Ok(ServerHandle {
        bus_addr,
        http_addr,
        stop,
        tasks: vec![clock, bus_task, http_task],
    })
}

async fn serve_bus_client(shared: Arc<Shared>, stream: TcpStream) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let (read_half, mut write_half) = stream.into_split();
    let mut reader = BufReader::new(read_half);
    let mut line = Vec::new();
    let n = tokio::time::timeout(AUTH_TIMEOUT, (&mut reader).take(4096).read_until(b'\n', &mut line))
        .await
        .map_err(|_| std::io::Error::new(std::io::ErrorKind::TimedOut, "no AUTH line"))??;
    if n == 0 {
        return Ok(());
    }
    let (principal, reply) = match shared.auth(&String::from_utf8_lossy(&line)) {
        Ok(ok) => ok,
        Err(reply) => {
            write_half.write_all(reply.as_bytes()).await?;
            return Ok(());
        }
    };
    write_half.write_all(reply.as_bytes()).await?;
    let (id, mut rx) = shared.register(principal);

    let writer = tokio::spawn(async move {
        while let Some(out) = rx.recv().await {
            match out {
                Outgoing::Frame(f) => {
                    if write_half.write_all(&f).await.is_err() {
                        break;
                    }
                }
                Outgoing::Close => break,
            }
        }
        let _ = write_half.shutdown().await;
    });

    let result = async {
        loop {
            line.clear();
            let n = (&mut reader).take(MAX_LINE as u64 + 1).read_until(b'\n', &mut line).await?;
            if n == 0 {
                return Ok(());
            }
            if line.len() > MAX_LINE {
                return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "frame too long"));
            }
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            if writer.is_finished() {
                return Ok(());
            }
            let _ = shared.with_host(|h| h.handle_frame(id, &line));
        }
    }
    .await;
    shared.unregister(id);
    let _ = writer.await;
    result
}

// ---- HTTP ------------------------------------------------------------

struct ApiError(StatusCode, &'static str, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "code": self.1, "detail": self.2 }))).into_response()
    }
}

impl From<HostError> for ApiError {
    fn from(e: HostError) -> Self {
        let status = match &e {
            HostError::Slot(SlotError::NotFound(_)) | HostError::Gateway(GatewayError::NoSuchSession(_)) => {
                StatusCode::NOT_FOUND
            }
            HostError::Slot(SlotError::Io(_) | SlotError::CorruptLog { .. }) => StatusCode::INTERNAL_SERVER_ERROR,
            HostError::Release(_) | HostError::Forbidden(_) => StatusCode::FORBIDDEN,
            HostError::Gateway(GatewayError::AuthFailed | GatewayError::Expired) => StatusCode::UNAUTHORIZED,
            _ => StatusCode::CONFLICT,
        };
        ApiError(status, e.code(), e.to_string())
    }
}

impl From<SlotError> for ApiError {
    fn from(e: SlotError) -> Self {
        HostError::from(e).into()
    }
}

type ApiResult = Result<Response, ApiError>;

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

fn require_operator(shared: &Shared, headers: &HeaderMap) -> Result<(), ApiError> {
    match bearer(headers) {
        Some(t) if !shared.operator_token.is_empty() && t == shared.operator_token => Ok(()),
        Some(_) => Err(ApiError(StatusCode::FORBIDDEN, "FORBIDDEN", "operator token required".into())),
        None => Err(ApiError(StatusCode::UNAUTHORIZED, "UNAUTHORIZED", "missing bearer token".into())),
    }
}

fn ok<T: serde::Serialize>(v: T) -> ApiResult {
    Ok(Json(v).into_response())
}

fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/api/status", get(status))
        .route("/api/world", get(world))
        .route("/api/teams", get(list_teams).post(register_team))
        .route("/api/slots", get(list_slots).post(create_slot))
        .route("/api/slots/export.csv", get(export_slots))
        .route("/api/slots/{id}/activate", post(activate_slot))
        .route("/api/slots/{id}/deactivate", post(deactivate_slot))
        .route("/api/slots/{id}/book", post(book_slot))
        .route("/api/sessions", get(list_sessions).post(open_session))
        .route("/api/sessions/{id}", axum::routing::delete(close_session))
        .route("/api/sessions/{id}/report", get(session_report))
        .route("/api/estop", get(estop_state).post(engage_estop))
        .route("/api/estop/release", post(release_estop))
        .route("/ws/console", get(console_ws))
        .route("/console", get(console_index))
        .route("/console/", get(console_index))
        .route("/console/{*path}", get(console_asset))
        .with_state(shared)
}

async fn status(State(s): State<Arc<Shared>>) -> ApiResult {
    ok(s.with_host(|h| h.status()))
}

async fn world(State(s): State<Arc<Shared>>) -> ApiResult {
    ok(s.with_host(|h| h.world_spec().clone()))
}

#[derive(Deserialize)]
struct TeamBody {
    id: String,
    name: String,
}

async fn register_team(State(s): State<Arc<Shared>>, headers: HeaderMap, Json(b): Json<TeamBody>) -> ApiResult {
    require_operator(&s, &headers)?;
    let id = TeamId::new(b.id).map_err(|e| ApiError(StatusCode::BAD_REQUEST, "INVALID_TEAM_ID", e.to_string()))?;
    let slots = s.host().slots().clone();
    ok(slots.register_team(id, &b.name)?)
}

async fn list_teams(State(s): State<Arc<Shared>>) -> ApiResult {
    let slots = s.host().slots().clone();
    ok(slots.teams())
}

#[derive(Deserialize)]
struct SlotBody {
    start: DateTime<Utc>,
    duration_s: Option<u32>,
}

async fn create_slot(State(s): State<Arc<Shared>>, headers: HeaderMap, Json(b): Json<SlotBody>) -> ApiResult {
    require_operator(&s, &headers)?;
    let slots = s.host().slots().clone();
    let slot = slots.create_slot(b.start, b.duration_s.unwrap_or(DEFAULT_SLOT_SECONDS))?;
    Ok((StatusCode::CREATED, Json(slot)).into_response())
}

async fn list_slots(State(s): State<Arc<Shared>>) -> ApiResult {
    let slots = s.host().slots().clone();
    ok(slots.list())
}

async fn export_slots(State(s): State<Arc<Shared>>) -> ApiResult {
    let slots = s.host().slots().clone();
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], slots.export_csv()).into_response())
}

async fn activate_slot(State(s): State<Arc<Shared>>, headers: HeaderMap, UrlPath(id): UrlPath<SlotId>) -> ApiResult {
    require_operator(&s, &headers)?;
    let slots = s.host().slots().clone();
    ok(slots.activate(id)?)
}

async fn deactivate_slot(
    State(s): State<Arc<Shared>>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<SlotId>,
) -> ApiResult {
    require_operator(&s, &headers)?;
    ok(s.with_host(|h| h.deactivate_slot(id))?)
}

#[derive(Deserialize)]
struct BookBody {
    team_id: String,
}

async fn book_slot(State(s): State<Arc<Shared>>, UrlPath(id): UrlPath<SlotId>, Json(b): Json<BookBody>) -> ApiResult {
    let team =
        TeamId::new(b.team_id).map_err(|e| ApiError(StatusCode::BAD_REQUEST, "INVALID_TEAM_ID", e.to_string()))?;
    let slots = s.host().slots().clone();
    ok(slots.book(id, &team)?)
}

#[derive(Deserialize)]
struct OpenBody {
    slot_id: SlotId,
    /// Students open their own session by naming their team.
    team_id: Option<String>,
    #[serde(default = "default_mode")]
    mode: SessionMode,
}

fn default_mode() -> SessionMode {
    SessionMode::StudentSide
}

async fn open_session(State(s): State<Arc<Shared>>, headers: HeaderMap, Json(b): Json<OpenBody>) -> ApiResult {
    let is_operator = require_operator(&s, &headers).is_ok();
    if !is_operator {
        let slot = s.host().slots().get(b.slot_id)?;
        let named = b.team_id.as_deref();
        if named.is_none() || slot.team_id.as_ref().map(TeamId::as_str) != named {
            return Err(ApiError(
                StatusCode::FORBIDDEN,
                "FORBIDDEN",
                "only the booking team or an operator may open this slot".into(),
            ));
        }
    }
    let session = s.with_host(|h| h.open_session(b.slot_id, b.mode))?;
    Ok((StatusCode::CREATED, Json(session)).into_response())
}

async fn list_sessions(State(s): State<Arc<Shared>>, headers: HeaderMap) -> ApiResult {
    require_operator(&s, &headers)?;
    ok(s.with_host(|h| h.gateway().sessions().cloned().collect::<Vec<_>>()))
}

async fn close_session(
    State(s): State<Arc<Shared>>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<SessionId>,
) -> ApiResult {
    require_operator(&s, &headers)?;
    ok(s.with_host(|h| h.close_session(id, CloseReason::Operator))?)
}

async fn session_report(
    State(s): State<Arc<Shared>>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<SessionId>,
) -> ApiResult {
    require_operator(&s, &headers)?;
    s.with_host(|h| h.report(id))
        .map(|r| Json(r).into_response())
        .ok_or_else(|| HostError::Gateway(GatewayError::NoSuchSession(id)).into())
}

async fn estop_state(State(s): State<Arc<Shared>>) -> ApiResult {
    ok(s.with_host(|h| h.estop()))
}

#[derive(Deserialize, Default)]
struct EStopBody {
    #[serde(default)]
    detail: String,
}

async fn engage_estop(State(s): State<Arc<Shared>>, headers: HeaderMap, body: Option<Json<EStopBody>>) -> ApiResult {
    require_operator(&s, &headers)?;
    let detail = body.map(|Json(b)| b.detail).unwrap_or_default();
    let detail = if detail.is_empty() { "operator button".to_owned() } else { detail };
    ok(s.with_host(|h| h.engage_estop(EStopSource::Operator, &detail)))
}

async fn release_estop(State(s): State<Arc<Shared>>, headers: HeaderMap) -> ApiResult {
    let authority = match require_operator(&s, &headers) {
        Ok(()) => Authority::Operator,
        Err(_) if bearer(&headers).is_some() => Authority::Student,
        Err(e) => return Err(e),
    };
    ok(s.with_host(|h| h.release_estop(authority))?)
}

#[derive(Deserialize)]
struct WsQuery {
    token: Option<String>,
}

/// Same frames as the TCP bus, one per text message. The token comes from
/// `?token=` or an `AUTH <token>` first message.
async fn console_ws(State(s): State<Arc<Shared>>, Query(q): Query<WsQuery>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| serve_ws(s, socket, q.token))
}

async fn serve_ws(shared: Arc<Shared>, mut socket: WebSocket, token: Option<String>) {
    let auth_line = match token {
        Some(t) => format!("AUTH {t}"),
        None => match tokio::time::timeout(AUTH_TIMEOUT, socket.recv()).await {
            Ok(Some(Ok(WsMessage::Text(t)))) => t.to_string(),
            _ => return,
        },
    };
    let (principal, reply) = match shared.auth(&auth_line) {
        Ok(ok) => ok,
        Err(reply) => {
            let _ = socket.send(WsMessage::Text(reply.trim_end().to_owned().into())).await;
            return;
        }
    };
    if socket.send(WsMessage::Text(reply.trim_end().to_owned().into())).await.is_err() {
        return;
    }
    let (id, mut rx) = shared.register(principal);
    loop {
        tokio::select! {
            out = rx.recv() => match out {
                Some(Outgoing::Frame(f)) => {
                    let text = String::from_utf8_lossy(&f).trim_end().to_owned();
                    if socket.send(WsMessage::Text(text.into())).await.is_err() {
                        break;
                    }
                }
                Some(Outgoing::Close) | None => break,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(WsMessage::Text(t))) => {
                    let mut line = t.as_bytes().to_vec();
                    line.push(b'\n');
                    let _ = shared.with_host(|h| h.handle_frame(id, &line));
                }
                Some(Ok(WsMessage::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
    shared.unregister(id);
}

const CONSOLE_PLACEHOLDER: &str = "<!doctype html>\n<title>telelab console</title>\n\
<p>Console assets are not installed. Set <code>server.console_dir</code> to the built console.</p>\n\
<p>Telemetry: <code>/ws/console?token=...</code>. Control: <code>/api/slots</code>, <code>/api/sessions</code>, \
<code>/api/estop</code>.</p>\n";

async fn console_index(State(s): State<Arc<Shared>>) -> Response {
    match &s.console_dir {
        Some(dir) => serve_file(dir, "index.html").await,
        None => ([(header::CONTENT_TYPE, "text/html; charset=utf-8")], CONSOLE_PLACEHOLDER).into_response(),
    }
}

async fn console_asset(State(s): State<Arc<Shared>>, UrlPath(path): UrlPath<String>) -> Response {
    match &s.console_dir {
        Some(dir) => serve_file(dir, &path).await,
        None => StatusCode::NOT_FOUND.into_response(),
    }
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("wav") => "audio/wav",
        _ => "application/octet-stream",
    }
}

async fn serve_file(dir: &Path, rel: &str) -> Response {
    let rel = if rel.is_empty() { "index.html" } else { rel };
    if rel.split('/').any(|seg| seg == ".." || seg.is_empty() && rel.starts_with('/')) {
        return StatusCode::NOT_FOUND.into_response();
    }
    let path = dir.join(rel);
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

/// Runs until Ctrl-C.
pub async fn serve(host: Host, opts: ServerOptions) -> std::io::Result<()> {
    let handle = start(host, opts).await?;
    tracing::info!(bus = %handle.bus_addr, http = %handle.http_addr, "telelab host listening");
    tokio::signal::ctrl_c().await?;
    handle.shutdown().await;
    Ok(())
}
