//! Network runtime around the pure [`Session`] state machine.
//!
//! Every connection reader, the heartbeat timer and the TUIO socket feed
//! one channel; a single task applies inputs to the session in arrival
//! order and fans the results out to bounded per-client queues.

use std::collections::HashMap;
use std::io::Write;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::Context;
use axum::extract::ws::{CloseFrame, Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use surface_sync_core::datastore::Store;
use surface_sync_core::protocol::{encode, CalibrationMeta};
use surface_sync_core::query::{parse, Dialect, QueryText};
use surface_sync_core::session::{ConnId, Input, JournalEntry, Outbound, Session, SessionDump};
use tokio::net::UdpSocket;
use tokio::sync::{mpsc, oneshot};

use crate::config::Config;

pub const SUBPROTOCOL: &str = "surface-sync.v1";

enum Event {
    Connect { conn: ConnId, tx: mpsc::Sender<Out> },
    Input(Input),
    Dump(oneshot::Sender<SessionDump>),
}

enum Out {
    Text(String),
    Close(String),
}

#[derive(Clone)]
struct AppState {
    events: mpsc::Sender<Event>,
    next_conn: Arc<AtomicU64>,
    send_queue: usize,
    calibration: CalibrationMeta,
}

/// A running server. Dropping it does not stop the server; call
/// [`Running::shutdown`].
pub struct Running {
    pub http_addr: SocketAddr,
    pub tuio_addr: Option<SocketAddr>,
    stop: oneshot::Sender<()>,
    task: tokio::task::JoinHandle<()>,
}

impl Running {
    pub async fn shutdown(self) {
        let _ = self.stop.send(());
        let _ = self.task.await;
    }

    pub async fn wait(self) {
        let _ = self.task.await;
    }
}

pub fn load_store(cfg: &Config) -> anyhow::Result<Store> {
    Store::ingest(&cfg.dataset.path, cfg.dataset.format).with_context(|| format!("loading dataset {}", cfg.dataset.path.display()))
}

/// Rebuilds the session a journal describes and returns its final state.
pub fn replay_journal(cfg: &Config, path: &Path) -> anyhow::Result<SessionDump> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let journal = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str::<JournalEntry>(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let (session, _) = Session::replay(cfg.session_config()?, Arc::new(load_store(cfg)?), &journal);
    Ok(session.dump())
}

/// Binds the HTTP and TUIO sockets and starts serving.
pub async fn start(cfg: Config) -> anyhow::Result<Running> {
    let store = Arc::new(load_store(&cfg)?);
    let scfg = cfg.session_config()?;
    let calibration = scfg.calibration.clone();
    let session = Session::new(scfg, store.clone());
    tracing::info!(event = "dataset_loaded", session = %cfg.session, records = store.len());

    let journal = match &cfg.journal {
        Some(p) => Some(std::io::BufWriter::new(
            std::fs::OpenOptions::new().create(true).append(true).open(p).with_context(|| format!("opening journal {}", p.display()))?,
        )),
        None => None,
    };

    let (events, rx) = mpsc::channel(4096);
    let listener = tokio::net::TcpListener::bind(cfg.listen).await.with_context(|| format!("binding {}", cfg.listen))?;
    let http_addr = listener.local_addr()?;
    let udp = if cfg.tuio.enabled {
        Some(UdpSocket::bind(cfg.tuio.bind).await.with_context(|| format!("binding TUIO {}", cfg.tuio.bind))?)
    } else {
        None
    };
    let tuio_addr = udp.as_ref().map(|u| u.local_addr()).transpose()?;

    let state = AppState {
        events: events.clone(),
        next_conn: Arc::new(AtomicU64::new(1)),
        send_queue: cfg.send_queue,
        calibration,
    };
    let app = Router::new()
        .route("/ws", get(ws_handler))
        .route("/dump", get(dump_handler))
        .route("/healthz", get(|| async { "ok" }))
        .route("/calibration", get(calibration_handler))
        .route("/translate", post(translate_handler))
        .with_state(state);

    let (stop, stop_rx) = oneshot::channel();
    let (halt_tx, _) = tokio::sync::watch::channel(false);
    let mut aux = Vec::new();
    if cfg.heartbeat_secs > 0 {
        let ev = events.clone();
        let period = Duration::from_secs(cfg.heartbeat_secs);
        aux.push(tokio::spawn(async move {
            let mut t = tokio::time::interval_at(tokio::time::Instant::now() + period, period);
            loop {
                t.tick().await;
                if ev.send(Event::Input(Input::Tick)).await.is_err() {
                    break;
                }
            }
        }));
    }
    if let Some(udp) = udp {
        let ev = events.clone();
        aux.push(tokio::spawn(async move {
            let mut buf = vec![0u8; 65536];
            loop {
                match udp.recv_from(&mut buf).await {
                    Ok((n, _)) => {
                        if ev.send(Event::Input(Input::Tuio { packet: buf[..n].to_vec() })).await.is_err() {
                            break;
                        }
                    }
                    Err(e) => tracing::warn!(event = "tuio_recv_failed", error = %e),
                }
            }
        }));
    }
    drop(events);

    tracing::info!(event = "listening", session = %cfg.session, http = %http_addr, tuio = ?tuio_addr);
    let session_task = tokio::spawn(run_session(session, rx, journal));
    let mut halt_rx = halt_tx.subscribe();
    let http = tokio::spawn(async move {
        let serve = axum::serve(listener, app).with_graceful_shutdown(async move {
            let _ = halt_rx.changed().await;
        });
        if let Err(e) = serve.await {
            tracing::error!(event = "http_failed", error = %e);
        }
    });
    let task = tokio::spawn(async move {
        let _ = stop_rx.await;
        let _ = halt_tx.send(true);
        for a in aux {
            a.abort();
        }
        http.abort();
        session_task.abort();
    });
    Ok(Running {
        http_addr,
        tuio_addr,
        stop,
        task,
    })
}

async fn run_session(mut session: Session, mut rx: mpsc::Receiver<Event>, mut journal: Option<std::io::BufWriter<std::fs::File>>) {
    let started = Instant::now();
    let sid = session.config().session_id.clone();
    let mut queues: HashMap<ConnId, mpsc::Sender<Out>> = HashMap::new();
    while let Some(ev) = rx.recv().await {
        let input = match ev {
            Event::Connect { conn, tx } => {
                queues.insert(conn, tx);
                tracing::info!(event = "connect", session = %sid, conn);
                Input::Connect { conn }
            }
            Event::Input(i) => i,
            Event::Dump(reply) => {
                let _ = reply.send(session.dump());
                continue;
            }
        };
        let mut pending = vec![input];
        while let Some(input) = pending.pop() {
            let now = started.elapsed().as_millis() as u64;
            if let Some(j) = &mut journal {
                let line = serde_json::to_string(&JournalEntry { at_ms: now, input: input.clone() }).expect("journal entry serializes");
                if let Err(e) = writeln!(j, "{line}").and_then(|_| j.flush()) {
                    tracing::error!(event = "journal_write_failed", error = %e);
                }
            }
            if let Input::Frame { conn, .. } = &input {
                let client = session.client_of(*conn).map(|c| c.client_id.clone());
                tracing::debug!(event = "recv", session = %sid, conn, client = ?client);
            }
            if let Input::Disconnect { conn } = &input {
                queues.remove(conn);
                tracing::info!(event = "disconnect", session = %sid, conn);
            }
            for o in session.apply(input, now) {
                match o {
                    Outbound::Send { conn, env } => {
                        let Some(q) = queues.get(&conn) else { continue };
                        tracing::debug!(event = "send", session = %sid, conn, client = ?session.client_of(conn).map(|c| &c.client_id), seq = env.seq, kind = env.type_tag());
                        if q.try_send(Out::Text(encode(&env))).is_err() {
                            // Full or gone: drop the client rather than stall the room.
                            tracing::warn!(event = "send_queue_overflow", session = %sid, conn);
                            queues.remove(&conn);
                            pending.push(Input::Disconnect { conn });
                        }
                    }
                    Outbound::Close { conn, reason } => {
                        tracing::info!(event = "close", session = %sid, conn, %reason);
                        if let Some(q) = queues.remove(&conn) {
                            let _ = q.try_send(Out::Close(reason));
                        }
                    }
                }
            }
        }
    }
}

fn offers_subprotocol(headers: &HeaderMap) -> bool {
    headers
        .get_all("sec-websocket-protocol")
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(','))
        .any(|p| p.trim() == SUBPROTOCOL)
}

async fn ws_handler(State(st): State<AppState>, headers: HeaderMap, ws: WebSocketUpgrade) -> Response {
    if !offers_subprotocol(&headers) {
        return (StatusCode::BAD_REQUEST, format!("websocket subprotocol {SUBPROTOCOL} required")).into_response();
    }
    ws.protocols([SUBPROTOCOL]).on_upgrade(move |socket| connection(st, socket))
}

async fn connection(st: AppState, socket: WebSocket) {
    let conn = st.next_conn.fetch_add(1, Ordering::Relaxed);
    let (tx, mut rx) = mpsc::channel::<Out>(st.send_queue);
    if st.events.send(Event::Connect { conn, tx }).await.is_err() {
        return;
    }
    let (mut sink, mut stream) = socket.split();
    let writer = tokio::spawn(async move {
        while let Some(out) = rx.recv().await {
            let r = match out {
                Out::Text(t) => sink.send(WsMessage::Text(t)).await,
                Out::Close(reason) => {
                    let _ = sink
                        .send(WsMessage::Close(Some(CloseFrame {
                            code: axum::extract::ws::close_code::POLICY,
                            reason: reason.into(),
                        })))
                        .await;
                    break;
                }
            };
            if r.is_err() {
                break;
            }
        }
    });
    while let Some(msg) = stream.next().await {
        let text = match msg {
            Ok(WsMessage::Text(t)) => t,
            Ok(WsMessage::Binary(b)) => String::from_utf8_lossy(&b).into_owned(),
            Ok(WsMessage::Close(_)) | Err(_) => break,
            Ok(_) => continue,
        };
        if st.events.send(Event::Input(Input::Frame { conn, text })).await.is_err() {
            break;
        }
    }
    let _ = st.events.send(Event::Input(Input::Disconnect { conn })).await;
    // The queue sender is gone once the session processes the disconnect.
    let _ = writer.await;
}

async fn dump_handler(State(st): State<AppState>) -> Result<Json<SessionDump>, StatusCode> {
    let (tx, rx) = oneshot::channel();
    st.events.send(Event::Dump(tx)).await.map_err(|_| StatusCode::SERVICE_UNAVAILABLE)?;
    rx.await.map(Json).map_err(|_| StatusCode::SERVICE_UNAVAILABLE)
}

async fn calibration_handler(State(st): State<AppState>) -> Json<CalibrationMeta> {
    Json(st.calibration)
}

#[derive(Debug, Deserialize)]
pub struct TranslateRequest {
    pub dialect: Dialect,
    pub text: String,
    pub target: Dialect,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TranslateResponse {
    pub dialect: Dialect,
    pub text: String,
    /// Canonical VISUAL-JSON of the parsed query, for comparing edits.
    pub canonical: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TranslateError {
    pub code: String,
    pub detail: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position: Option<usize>,
}

async fn translate_handler(Json(req): Json<TranslateRequest>) -> Result<Json<TranslateResponse>, (StatusCode, Json<TranslateError>)> {
    let input = QueryText {
        dialect: req.dialect,
        text: req.text,
    };
    match parse(&input) {
        Ok(ast) => {
            let ast = ast.canonicalize();
            Ok(Json(TranslateResponse {
                dialect: req.target,
                text: surface_sync_core::query::emit(&ast, req.target).text,
                canonical: surface_sync_core::query::emit(&ast, Dialect::VisualJson).text,
            }))
        }
        Err(e) => Err((
            StatusCode::UNPROCESSABLE_ENTITY,
            Json(TranslateError {
                code: surface_sync_core::protocol::ErrorCode::from(&e).as_str().to_string(),
                detail: e.to_string(),
                position: e.position(),
            }),
        )),
    }
}
