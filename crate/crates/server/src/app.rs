//! WebSocket transport: one task per connection, one actor task per session.
//!
//! Routes:
//!
//! - `GET /ws`: the game channel (JSON text frames, see [`crate::protocol`]).
//! - `GET /sessions/{session_id}/captures/{sample_id}.png?token=…`: capture
//!   previews, for seats that were shown the capture.
//! - `GET /healthz`.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use gazeboard_core::engine::PlayerSlot;
use gazeboard_core::ids::{SampleId, SessionId};
use gazeboard_core::seed;
use gazeboard_core::store::Store;
use serde::Deserialize;
use tokio::sync::{mpsc, oneshot};

use crate::host::{HostConfig, Outbound, SessionHost};
use crate::protocol::{parse_client, ClientBody, ClientMessage, ErrorCode, ServerBody, ServerMessage, PROTOCOL_VERSION};

pub const HEARTBEAT: Duration = Duration::from_secs(15);
/// Missed heartbeats before a connection counts as lost.
const HEARTBEAT_MISSES: u32 = 3;

type ConnId = u64;

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

enum Out {
    Text(String),
    Ping,
}

enum Command {
    Client { conn: ConnId, msg: ClientMessage, reply: mpsc::UnboundedSender<Out> },
    Disconnect { conn: ConnId },
    Image { sample_id: SampleId, token: String, reply: oneshot::Sender<Option<Vec<u8>>> },
}

pub struct Hub {
    config: Arc<HostConfig>,
    store: Option<Store>,
    sessions: Mutex<HashMap<SessionId, mpsc::UnboundedSender<Command>>>,
    next_conn: AtomicU64,
    token_salt: u64,
}

impl Hub {
    pub fn new(config: HostConfig, store: Option<Store>) -> Arc<Self> {
        let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos() as u64).unwrap_or(0);
        Arc::new(Self {
            config: Arc::new(config),
            store,
            sessions: Mutex::new(HashMap::new()),
            next_conn: AtomicU64::new(1),
            token_salt: seed::mix64(nanos ^ u64::from(std::process::id())),
        })
    }

    pub fn active_sessions(&self) -> usize {
        self.sessions.lock().expect("hub lock").len()
    }

    /// Sends to the session's actor, spawning it on first use.
    fn dispatch(self: &Arc<Self>, session_id: &SessionId, cmd: Command) {
        let mut map = self.sessions.lock().expect("hub lock");
        let cmd = match map.get(session_id) {
            Some(tx) => match tx.send(cmd) {
                Ok(()) => return,
                Err(mpsc::error::SendError(cmd)) => cmd,
            },
            None => cmd,
        };
        let (tx, rx) = mpsc::unbounded_channel();
        let _ = tx.send(cmd);
        map.insert(session_id.clone(), tx);
        let token_seed = seed::derive(self.token_salt, session_id.as_str(), self.next_conn.fetch_add(1, Ordering::Relaxed));
        let host = SessionHost::new(Arc::clone(&self.config), session_id.clone(), self.store.clone(), token_seed);
        tokio::spawn(session_actor(Arc::clone(self), host, rx));
    }
}

pub fn router(hub: Arc<Hub>) -> Router {
    Router::new()
        .route("/ws", get(ws_handler))
        .route("/sessions/{session_id}/captures/{file}", get(capture_handler))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(hub)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    hub: Arc<Hub>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(hub)).with_graceful_shutdown(shutdown).await
}

async fn ws_handler(ws: WebSocketUpgrade, State(hub): State<Arc<Hub>>) -> Response {
    ws.on_upgrade(move |socket| connection(socket, hub))
}

#[derive(Deserialize)]
struct TokenQuery {
    token: String,
}

async fn capture_handler(
    State(hub): State<Arc<Hub>>,
    Path((session_id, file)): Path<(String, String)>,
    Query(q): Query<TokenQuery>,
) -> Response {
    let Some(sample) = file.strip_suffix(".png") else {
        return StatusCode::NOT_FOUND.into_response();
    };
    let (tx, rx) = oneshot::channel();
    let cmd = Command::Image { sample_id: SampleId::new(sample), token: q.token, reply: tx };
    hub.dispatch(&SessionId::new(session_id), cmd);
    match rx.await {
        Ok(Some(png)) => ([(header::CONTENT_TYPE, "image/png")], png).into_response(),
        _ => StatusCode::NOT_FOUND.into_response(),
    }
}

fn unseated_error(session_id: &SessionId, code: ErrorCode, message: String) -> String {
    let msg = ServerMessage {
        v: PROTOCOL_VERSION,
        seq: 0,
        session_id: session_id.clone(),
        body: ServerBody::Error { code, message },
    };
    serde_json::to_string(&msg).expect("message serializes")
}

async fn connection(socket: WebSocket, hub: Arc<Hub>) {
    let conn = hub.next_conn.fetch_add(1, Ordering::Relaxed);
    let (mut ws_tx, mut ws_rx) = socket.split();
    let (tx, mut rx) = mpsc::unbounded_channel::<Out>();
    let writer = tokio::spawn(async move {
        while let Some(out) = rx.recv().await {
            let frame = match out {
                Out::Text(t) => Message::Text(t.into()),
                Out::Ping => Message::Ping(Vec::new().into()),
            };
            if ws_tx.send(frame).await.is_err() {
                break;
            }
        }
        let _ = ws_tx.close().await;
    });

    let mut session: Option<SessionId> = None;
    let mut ping = tokio::time::interval(HEARTBEAT);
    ping.tick().await;
    let mut last_seen = Instant::now();
    loop {
        tokio::select! {
            frame = ws_rx.next() => {
                let text = match frame {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Ping(_) | Message::Pong(_))) => { last_seen = Instant::now(); continue }
                    Some(Ok(Message::Binary(_))) => {
                        let sid = session.clone().unwrap_or_else(|| SessionId::new(""));
                        let _ = tx.send(Out::Text(unseated_error(&sid, ErrorCode::Malformed, "binary frames are not supported".into())));
                        continue;
                    }
                    Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                };
                last_seen = Instant::now();
                let msg = match parse_client(&text) {
                    Ok(m) => m,
                    Err(e) => {
                        let sid = session.clone().unwrap_or_else(|| SessionId::new(""));
                        let _ = tx.send(Out::Text(unseated_error(&sid, e.code(), e.to_string())));
                        continue;
                    }
                };
                if let Some(sid) = &session {
                    if sid != &msg.session_id {
                        let _ = tx.send(Out::Text(unseated_error(sid, ErrorCode::IllegalAction, "one session per connection".into())));
                        continue;
                    }
                }
                if session.is_none() && matches!(msg.body, ClientBody::Join { .. }) {
                    session = Some(msg.session_id.clone());
                }
                let sid = msg.session_id.clone();
                hub.dispatch(&sid, Command::Client { conn, msg, reply: tx.clone() });
            }
            _ = ping.tick() => {
                if last_seen.elapsed() > HEARTBEAT * HEARTBEAT_MISSES {
                    tracing::info!(conn, "heartbeat lost");
                    break;
                }
                let _ = tx.send(Out::Ping);
            }
        }
    }
    if let Some(sid) = session {
        hub.dispatch(&sid, Command::Disconnect { conn });
    }
    drop(tx);
    let _ = writer.await;
}

async fn session_actor(hub: Arc<Hub>, mut host: SessionHost, mut rx: mpsc::UnboundedReceiver<Command>) {
    let session_id = host.session_id().clone();
    tracing::info!(session = %session_id, "session opened");
    let mut conns: HashMap<ConnId, (PlayerSlot, mpsc::UnboundedSender<Out>)> = HashMap::new();
    loop {
        let wake = host.next_wakeup_ms();
        let sleep = async move {
            match wake {
                Some(t) => tokio::time::sleep(Duration::from_millis(t.saturating_sub(now_ms()))).await,
                None => std::future::pending().await,
            }
        };
        tokio::select! {
            cmd = rx.recv() => {
                let Some(cmd) = cmd else { break };
                handle(&mut host, &mut conns, cmd);
            }
            _ = sleep => {
                let out = host.tick(now_ms());
                deliver(&conns, out);
            }
        }
        if conns.is_empty() && (host.is_idle() || host.journal().is_empty()) {
            let mut map = hub.sessions.lock().expect("hub lock");
            match rx.try_recv() {
                Ok(cmd) => {
                    drop(map);
                    handle(&mut host, &mut conns, cmd);
                }
                Err(_) => {
                    map.remove(&session_id);
                    break;
                }
            }
        }
    }
    tracing::info!(session = %session_id, events = host.events().len(), "session closed");
}

fn handle(host: &mut SessionHost, conns: &mut HashMap<ConnId, (PlayerSlot, mpsc::UnboundedSender<Out>)>, cmd: Command) {
    let now = now_ms();
    match cmd {
        Command::Client { conn, msg, reply } => match conns.get(&conn).map(|(s, _)| *s) {
            None => {
                if !matches!(msg.body, ClientBody::Join { .. }) {
                    let _ = reply.send(Out::Text(unseated_error(&msg.session_id, ErrorCode::NotJoined, "join first".into())));
                    return;
                }
                match host.join(&msg.body, msg.token.as_deref(), now) {
                    Ok((slot, out)) => {
                        conns.retain(|_, (s, _)| *s != slot);
                        conns.insert(conn, (slot, reply));
                        deliver(conns, out);
                    }
                    Err(e) => {
                        let _ = reply.send(Out::Text(unseated_error(&msg.session_id, e.code, e.message)));
                    }
                }
            }
            Some(slot) => {
                let authorized = msg.token.as_deref().and_then(|t| host.authenticate(t)) == Some(slot);
                let out = if authorized {
                    host.client(slot, msg.body, now)
                } else {
                    let err = crate::host::HostError { code: ErrorCode::Unauthorized, message: "missing or wrong token".into() };
                    vec![host.error(slot, &err)]
                };
                deliver(conns, out);
            }
        },
        Command::Disconnect { conn } => {
            if let Some((slot, _)) = conns.remove(&conn) {
                if !conns.values().any(|(s, _)| *s == slot) {
                    let out = host.disconnect(slot, now);
                    deliver(conns, out);
                }
            }
        }
        Command::Image { sample_id, token, reply } => {
            let png = host.authenticate(&token).and_then(|slot| host.capture_png(slot, &sample_id));
            let _ = reply.send(png);
        }
    }
}

fn deliver(conns: &HashMap<ConnId, (PlayerSlot, mpsc::UnboundedSender<Out>)>, out: Vec<Outbound>) {
    for o in out {
        let text = serde_json::to_string(&o.message).expect("message serializes");
        for (slot, tx) in conns.values() {
            if *slot == o.to {
                let _ = tx.send(Out::Text(text.clone()));
            }
        }
    }
}
