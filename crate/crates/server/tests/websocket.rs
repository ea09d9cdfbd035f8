//! Games played over real WebSocket connections.

use std::collections::{BTreeSet, HashMap};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use gazeboard_core::board_geometry::{BoardLayout, Calibration};
use gazeboard_core::capture::{DriverConfig, LabelOrigin};
use gazeboard_core::dictionary::Dictionary;
use gazeboard_core::engine::{Actor, EventKind, GameConfig, Input, Phase, PlayerSlot};
use gazeboard_core::ids::{Mode, ParticipantId, SessionId};
use gazeboard_core::normalization::NormalizationParams;
use gazeboard_core::runtime::{Installation, Seat, SessionRuntime, SessionSetup};
use gazeboard_core::sim::{synthetic_hardware, EyeTrackerModel};
use gazeboard_core::store::MemorySink;
use gazeboard_server::app::{serve, Hub};
use gazeboard_server::host::HostConfig;
use gazeboard_server::protocol::{Role, ServerBody, ServerMessage};
use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

const WAIT: Duration = Duration::from_secs(20);

fn host_config() -> HostConfig {
    HostConfig {
        installation: Arc::new(Installation {
            layout: BoardLayout::gojuon(),
            dictionary: Dictionary::builtin(),
            calibration: Calibration::default_installation(),
            normalization: NormalizationParams::default(),
            label_origin: LabelOrigin::FaceCenter,
        }),
        drivers: DriverConfig::default(),
        eyetracker: Some(EyeTrackerModel::default()),
        game: GameConfig { capture_countdown_s: 0.05, ..GameConfig::default() },
        grace_ms: 120_000,
        seed: 2024,
    }
}

async fn start_server(config: HostConfig) -> (SocketAddr, Arc<Hub>, tokio::sync::oneshot::Sender<()>) {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let hub = Hub::new(config, None);
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    tokio::spawn(serve(listener, Arc::clone(&hub), async {
        let _ = rx.await;
    }));
    (addr, hub, tx)
}

struct Client {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
    session_id: String,
    token: Option<String>,
    log: Vec<ServerMessage>,
}

impl Client {
    async fn connect(addr: SocketAddr, session_id: &str) -> Self {
        let (ws, _) = connect_async(format!("ws://{addr}/ws")).await.unwrap();
        Self { ws, session_id: session_id.into(), token: None, log: Vec::new() }
    }

    async fn send(&mut self, mut body: Value) {
        body["v"] = json!(1);
        body["session_id"] = json!(self.session_id);
        if let Some(t) = &self.token {
            body["token"] = json!(t);
        }
        self.ws.send(Message::Text(body.to_string().into())).await.unwrap();
    }

    async fn send_raw(&mut self, text: &str) {
        self.ws.send(Message::Text(text.to_owned().into())).await.unwrap();
    }

    /// Next server message; every frame must parse as a `ServerMessage`.
    async fn recv(&mut self) -> ServerMessage {
        loop {
            let frame = tokio::time::timeout(WAIT, self.ws.next()).await.expect("server went quiet").unwrap().unwrap();
            if let Message::Text(t) = frame {
                let msg: ServerMessage = serde_json::from_str(&t).unwrap_or_else(|e| panic!("{e}: {t}"));
                if let ServerBody::Joined { token, .. } = &msg.body {
                    self.token = Some(token.clone());
                }
                self.log.push(msg.clone());
                return msg;
            }
        }
    }

    async fn recv_until(&mut self, pred: impl Fn(&ServerBody) -> bool) -> ServerMessage {
        loop {
            let m = self.recv().await;
            if pred(&m.body) {
                return m;
            }
        }
    }

    async fn join(&mut self, extra: Value) -> PlayerSlot {
        let mut body = json!({"kind": "join"});
        for (k, v) in extra.as_object().unwrap() {
            body[k] = v.clone();
        }
        self.send(body).await;
        match self.recv_until(|b| matches!(b, ServerBody::Joined { .. } | ServerBody::Error { .. })).await.body {
            ServerBody::Joined { slot, .. } => slot,
            other => panic!("join refused: {other:?}"),
        }
    }
}

fn is_phase(b: &ServerBody, phase: &str) -> bool {
    matches!(b, ServerBody::StateSnapshot(s) if s.phase == phase)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn join_start_briefing_and_third_join_refused() {
    let (addr, _hub, _stop) = start_server(host_config()).await;
    let mut a = Client::connect(addr, "lobby").await;
    let mut b = Client::connect(addr, "lobby").await;
    assert_eq!(a.join(json!({"wearing_eyetracker": true})).await, PlayerSlot::A);
    assert_eq!(b.join(json!({})).await, PlayerSlot::B);

    let mut c = Client::connect(addr, "lobby").await;
    c.send(json!({"kind": "join"})).await;
    let m = c.recv().await;
    assert!(matches!(m.body, ServerBody::Error { code: gazeboard_server::protocol::ErrorCode::SessionFull, .. }));

    a.send(json!({"kind": "start"})).await;
    a.recv_until(|b| is_phase(b, "briefing")).await;
    b.recv_until(|b| is_phase(b, "briefing")).await;

    // malformed frames get an error reply and the connection stays usable
    b.send_raw("{not json").await;
    assert!(matches!(b.recv().await.body, ServerBody::Error { code: gazeboard_server::protocol::ErrorCode::Malformed, .. }));
    b.send(json!({"kind": "dance"})).await;
    assert!(matches!(b.recv().await.body, ServerBody::Error { .. }));
    b.send(json!({"kind": "ready"})).await;
    let snap = b.recv_until(|b| matches!(b, ServerBody::StateSnapshot(_))).await;
    assert!(matches!(snap.body, ServerBody::StateSnapshot(s) if s.phase == "briefing"));

    // a wrong token is refused
    let saved = b.token.replace("0000".into());
    b.send(json!({"kind": "ready"})).await;
    assert!(matches!(
        b.recv().await.body,
        ServerBody::Error { code: gazeboard_server::protocol::ErrorCode::Unauthorized, .. }
    ));
    b.token = saved;
}

/// What a scripted player does in a phase. The answerer gets the first word
/// right and every later one wrong.
fn decide(phase: &str, role: Role, word_index: u32, word: Option<&str>) -> Option<Value> {
    let kind = |k: &str| Some(json!({ "kind": k }));
    match (phase, role) {
        ("briefing", _) => kind("ready"),
        ("answerer_review", Role::Answerer) => kind("ready"),
        ("conveying.await_capture_trigger", Role::Questioner) => kind("trigger_capture"),
        ("conveying.await_approval", Role::Questioner) => kind("approve_capture"),
        ("conveying.answerer_marking", Role::Answerer) => Some(json!({"kind": "mark", "position_mm": [12.5, -30.0]})),
        ("answering", Role::Answerer) => {
            let text = if word_index == 0 { word?.to_owned() } else { "ん".to_owned() };
            Some(json!({"kind": "answer", "text": text}))
        }
        ("reveal", Role::Questioner) => kind("proceed"),
        _ => None,
    }
}

fn to_input(v: &Value) -> Input {
    match v["kind"].as_str().unwrap() {
        "ready" => Input::Ready,
        "trigger_capture" => Input::TriggerCapture,
        "approve_capture" => Input::ApproveCapture,
        "mark" => Input::Mark { position_mm: [v["position_mm"][0].as_f64().unwrap(), v["position_mm"][1].as_f64().unwrap()] },
        "answer" => Input::Answer { text: v["text"].as_str().unwrap().to_owned() },
        "proceed" => Input::Proceed,
        other => panic!("{other}"),
    }
}

#[derive(Debug, Default)]
struct Outcome {
    words: Vec<String>,
    score: Option<u32>,
    images_fetched: usize,
}

type Words = Arc<Mutex<HashMap<u32, String>>>;

async fn http_get(addr: SocketAddr, path: &str) -> (u16, Vec<u8>) {
    let mut s = TcpStream::connect(addr).await.unwrap();
    let req = format!("GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n");
    s.write_all(req.as_bytes()).await.unwrap();
    let mut buf = Vec::new();
    s.read_to_end(&mut buf).await.unwrap();
    let head_end = buf.windows(4).position(|w| w == b"\r\n\r\n").unwrap();
    let status: u16 = std::str::from_utf8(&buf[9..12]).unwrap().parse().unwrap();
    (status, buf[head_end + 4..].to_vec())
}

/// Plays one seat until the session finishes.
async fn bot(mut c: Client, addr: SocketAddr, words: Words, fetch_images: bool) -> (Client, Outcome) {
    let mut out = Outcome::default();
    let mut done: BTreeSet<String> = BTreeSet::new();
    let mut captures = 0usize;
    loop {
        let m = c.recv().await;
        match &m.body {
            ServerBody::WordPrompt { word_index, glyphs, .. } => {
                words.lock().unwrap().insert(*word_index, glyphs.concat());
            }
            ServerBody::CapturedImage { image_url, no_face, approved, .. } => {
                captures += 1;
                if fetch_images && *approved && !*no_face {
                    let url = image_url.as_ref().expect("image url");
                    let (status, body) = http_get(addr, &format!("{url}?token={}", c.token.as_ref().unwrap())).await;
                    assert_eq!(status, 200);
                    assert_eq!(&body[1..4], b"PNG");
                    let (status, _) = http_get(addr, &format!("{url}?token=bogus")).await;
                    assert_eq!(status, 404);
                    out.images_fetched += 1;
                }
            }
            ServerBody::Result { word, .. } => out.words.push(word.clone()),
            ServerBody::SessionFinished { score, .. } => {
                out.score = Some(*score);
                return (c, out);
            }
            ServerBody::Error { code, message } => panic!("server error {code:?}: {message}"),
            ServerBody::StateSnapshot(s) => {
                let Some(role) = s.role else { continue };
                let word = words.lock().unwrap().get(&s.word_index).cloned();
                let Some(action) = decide(&s.phase, role, s.word_index, word.as_deref()) else { continue };
                let key = format!("{}/{}/{:?}/{}/{}", s.phase, s.word_index, s.letter_index, s.marks.len(), captures);
                if done.insert(key) {
                    c.send(action).await;
                }
            }
            _ => {}
        }
    }
}

/// The same script against the engine alone, with the session's seed.
fn engine_only(config: &HostConfig, session_id: &str, players: [ParticipantId; 2], wearing: [bool; 2]) -> Outcome {
    let sid = SessionId::new(session_id);
    let setup = SessionSetup {
        session_id: sid.clone(),
        mode: Mode::Gamified,
        seats: players
            .iter()
            .zip(wearing)
            .map(|(p, w)| Seat { participant_id: p.clone(), wearing_eyetracker: w })
            .collect(),
        config: config.game.clone(),
        rng_seed: config.session_seed(&sid),
    };
    let inst = Arc::clone(&config.installation);
    let (d, t) = synthetic_hardware(&inst, &setup, &config.drivers, config.eyetracker.as_ref()).unwrap();
    let (mut rt, _) = SessionRuntime::start(inst, setup, d, t, MemorySink::default(), 0).unwrap();
    let mut now = 0;
    while !rt.session().phase().is_finished() {
        now += 10;
        let state = rt.session().state().clone();
        let word = state.word.as_ref().map(|w| w.word());
        let mut acted = false;
        for slot in [PlayerSlot::A, PlayerSlot::B] {
            if let Phase::Briefing { ready } = state.phase {
                if ready[slot.index()] {
                    continue;
                }
            }
            let role = if slot == state.questioner { Role::Questioner } else { Role::Answerer };
            if let Some(action) = decide(state.phase.name(), role, state.word_index, word.as_deref()) {
                rt.handle(Actor::from(slot), to_input(&action), now).unwrap();
                acted = true;
                break;
            }
        }
        if !acted {
            let deadline = rt.next_deadline_ms().unwrap_or_else(|| panic!("engine-only run stuck in {}", state.phase.name()));
            now = now.max(deadline);
            rt.tick(now);
        }
    }
    let mut out = Outcome::default();
    for e in rt.session().events() {
        if let EventKind::ResultShown { word, score, .. } = &e.kind {
            out.words.push(word.clone());
            out.score = Some(*score);
        }
    }
    out
}

async fn play_over_wire(addr: SocketAddr, session_id: &str, fetch_images: bool) -> (Outcome, [ParticipantId; 2]) {
    let mut a = Client::connect(addr, session_id).await;
    let mut b = Client::connect(addr, session_id).await;
    a.join(json!({"wearing_eyetracker": true})).await;
    b.join(json!({})).await;
    let pid = |c: &Client| {
        c.log
            .iter()
            .find_map(|m| match &m.body {
                ServerBody::Joined { participant_id, .. } => Some(participant_id.clone()),
                _ => None,
            })
            .unwrap()
    };
    let players = [pid(&a), pid(&b)];
    a.send(json!({"kind": "start"})).await;
    let words: Words = Arc::default();
    let ta = tokio::spawn(bot(a, addr, Arc::clone(&words), false));
    let tb = tokio::spawn(bot(b, addr, Arc::clone(&words), fetch_images));
    let (ca, oa) = ta.await.unwrap();
    let (cb, ob) = tb.await.unwrap();
    assert_eq!(oa.words, ob.words);
    assert_eq!(oa.score, ob.score);
    for c in [&ca, &cb] {
        // sequence numbers strictly increase per recipient
        assert!(c.log.windows(2).all(|w| w[0].seq < w[1].seq));
    }
    // the answerer never saw a word prompt
    let answerer_prompts = cb.log.iter().filter(|m| matches!(m.body, ServerBody::WordPrompt { .. })).count()
        + ca.log.iter().filter(|m| matches!(m.body, ServerBody::ClueView { .. })).count();
    assert_eq!(answerer_prompts, 2, "each seat is prompted for exactly one of the two words");
    (Outcome { images_fetched: ob.images_fetched, ..oa }, players)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scripted_game_matches_engine_only_run() {
    let config = host_config();
    let (addr, _hub, _stop) = start_server(config.clone()).await;
    let (wire, players) = play_over_wire(addr, "wire-1", true).await;
    let oracle = engine_only(&config, "wire-1", players, [true, false]);
    assert_eq!(wire.words.len(), 2);
    assert_eq!(wire.words, oracle.words);
    assert_eq!(wire.score, oracle.score);
    assert_eq!(wire.score, Some(1));
    assert_eq!(wire.images_fetched, 6, "approved captures go to both seats, for both words");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn sixteen_concurrent_sessions() {
    let config = host_config();
    let (addr, hub, _stop) = start_server(config.clone()).await;
    let started = std::time::Instant::now();
    let games: Vec<_> = (0..16)
        .map(|i| tokio::spawn(async move { play_over_wire(addr, &format!("multi-{i}"), false).await }))
        .collect();
    for (i, g) in games.into_iter().enumerate() {
        let (wire, players) = g.await.unwrap();
        let oracle = engine_only(&config, &format!("multi-{i}"), players, [true, false]);
        assert_eq!(wire.words, oracle.words);
        assert_eq!(wire.score, oracle.score);
    }
    assert!(started.elapsed() < Duration::from_secs(60), "took {:?}", started.elapsed());
    // finished sessions are dropped once their clients leave
    for _ in 0..100 {
        if hub.active_sessions() == 0 {
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    assert_eq!(hub.active_sessions(), 0);
}
