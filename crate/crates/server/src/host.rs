//! Per-session executor, independent of any transport.
//!
//! A [`SessionHost`] owns the lobby seats and, once started, the
//! [`SessionRuntime`]. It turns client messages, clock ticks and
//! disconnects into role-filtered [`Outbound`] messages. Everything that
//! changes its state is recorded in a journal; [`replay_journal`] feeds a
//! journal to a fresh host and reproduces the same event log.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::sync::Arc;

use gazeboard_core::capture::DriverConfig;
use gazeboard_core::engine::{Actor, ConveyStep, Effect, EngineError, GameConfig, Input, Phase, PlayerSlot, SessionEvent};
use gazeboard_core::ids::{Mode, ParticipantId, SampleId, SessionId};
use gazeboard_core::jsonl;
use gazeboard_core::runtime::{Installation, Seat, SessionRuntime, SessionSetup};
use gazeboard_core::seed;
use gazeboard_core::sim::{synthetic_hardware, EyeTrackerModel};
use gazeboard_core::store::{MemorySink, Participant, SessionSink, Store};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::protocol::{ClientBody, ErrorCode, Role, ServerBody, ServerMessage, Snapshot, PROTOCOL_VERSION};

#[derive(Debug, Clone)]
pub struct HostConfig {
    pub installation: Arc<Installation>,
    pub drivers: DriverConfig,
    pub eyetracker: Option<EyeTrackerModel>,
    pub game: GameConfig,
    pub grace_ms: u64,
    /// Base seed; each session derives its own from its id.
    pub seed: u64,
}

impl HostConfig {
    pub fn session_seed(&self, session_id: &SessionId) -> u64 {
        seed::derive(self.seed, session_id.as_str(), 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
pub enum JournalEntry {
    Join { slot: PlayerSlot, participant_id: ParticipantId, wearing_eyetracker: bool, exclude_from_dataset: bool, mode: Mode },
    Rejoin { slot: PlayerSlot },
    Client { slot: PlayerSlot, body: ClientBody },
    Tick,
    Disconnect { slot: PlayerSlot },
    Expire,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalLine {
    pub seq: u64,
    pub at_ms: u64,
    #[serde(flatten)]
    pub entry: JournalEntry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outbound {
    pub to: PlayerSlot,
    pub message: ServerMessage,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct HostError {
    pub code: ErrorCode,
    pub message: String,
}

impl HostError {
    fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

#[derive(Debug, Clone)]
struct SeatState {
    seat: Seat,
    token: String,
    connected: bool,
}

pub struct SessionHost {
    config: Arc<HostConfig>,
    session_id: SessionId,
    store: Option<Store>,
    token_rng: ChaCha8Rng,
    mode: Option<Mode>,
    seats: Vec<SeatState>,
    runtime: Option<SessionRuntime<Box<dyn SessionSink>>>,
    journal: Vec<JournalLine>,
    journal_flushed: usize,
    seq: [u64; 2],
    grace_deadline_ms: Option<u64>,
    expired: bool,
    /// Which seats were shown each capture image.
    image_audience: BTreeMap<SampleId, [bool; 2]>,
}

fn capacity(mode: Mode) -> usize {
    match mode {
        Mode::Gamified => 2,
        Mode::Standard => 1,
    }
}

fn slot_at(i: usize) -> PlayerSlot {
    if i == 0 {
        PlayerSlot::A
    } else {
        PlayerSlot::B
    }
}

impl SessionHost {
    /// `token_seed` only feeds bearer tokens, which never reach the journal.
    pub fn new(config: Arc<HostConfig>, session_id: SessionId, store: Option<Store>, token_seed: u64) -> Self {
        Self {
            config,
            session_id,
            store,
            token_rng: seed::rng(token_seed),
            mode: None,
            seats: Vec::new(),
            runtime: None,
            journal: Vec::new(),
            journal_flushed: 0,
            seq: [0; 2],
            grace_deadline_ms: None,
            expired: false,
            image_audience: BTreeMap::new(),
        }
    }

    pub fn session_id(&self) -> &SessionId {
        &self.session_id
    }

    pub fn grace_ms(&self) -> u64 {
        self.config.grace_ms
    }

    pub fn journal(&self) -> &[JournalLine] {
        &self.journal
    }

    pub fn events(&self) -> &[SessionEvent] {
        self.runtime.as_ref().map(|r| r.session().events()).unwrap_or_default()
    }

    pub fn runtime(&self) -> Option<&SessionRuntime<Box<dyn SessionSink>>> {
        self.runtime.as_ref()
    }

    pub fn is_finished(&self) -> bool {
        self.expired || self.runtime.as_ref().is_some_and(|r| r.session().phase().is_finished())
    }

    pub fn paused(&self) -> bool {
        self.grace_deadline_ms.is_some()
    }

    pub fn authenticate(&self, token: &str) -> Option<PlayerSlot> {
        self.seats.iter().position(|s| s.token == token).map(slot_at)
    }

    pub fn connected(&self, slot: PlayerSlot) -> bool {
        self.seats.get(slot.index()).is_some_and(|s| s.connected)
    }

    /// When the caller should call [`SessionHost::tick`] next.
    pub fn next_wakeup_ms(&self) -> Option<u64> {
        let engine = if self.paused() { None } else { self.runtime.as_ref().and_then(|r| r.next_deadline_ms()) };
        match (engine, self.grace_deadline_ms) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// PNG of a capture preview, if `slot` was shown it.
    pub fn capture_png(&self, slot: PlayerSlot, sample_id: &SampleId) -> Option<Vec<u8>> {
        if !self.image_audience.get(sample_id).is_some_and(|a| a[slot.index()]) {
            return None;
        }
        let img = self.runtime.as_ref()?.preview(sample_id)?.normalized_image.as_ref()?;
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png).ok()?;
        Some(out.into_inner())
    }

    fn record(&mut self, at_ms: u64, entry: JournalEntry) {
        let seq = self.journal.len() as u64;
        self.journal.push(JournalLine { seq, at_ms, entry });
        self.flush_journal();
    }

    fn flush_journal(&mut self) {
        let Some(rt) = self.runtime.as_mut() else { return };
        while let Some(line) = self.journal.get(self.journal_flushed) {
            if let Err(e) = rt.sink_mut().append_journal_line(&jsonl::to_line(line)) {
                tracing::error!(session = %self.session_id, error = %e, "journal write failed");
                return;
            }
            self.journal_flushed += 1;
        }
    }

    fn message(&mut self, to: PlayerSlot, body: ServerBody) -> Outbound {
        self.seq[to.index()] += 1;
        Outbound {
            to,
            message: ServerMessage { v: PROTOCOL_VERSION, seq: self.seq[to.index()], session_id: self.session_id.clone(), body },
        }
    }

    /// Error reply to a seated client.
    pub fn error(&mut self, to: PlayerSlot, err: &HostError) -> Outbound {
        self.message(to, ServerBody::error(err.code, err.message.clone()))
    }

    /// New seat or rejoin by token.
    pub fn join(
        &mut self,
        body: &ClientBody,
        token: Option<&str>,
        now_ms: u64,
    ) -> Result<(PlayerSlot, Vec<Outbound>), HostError> {
        let ClientBody::Join { participant_id, wearing_eyetracker, exclude_from_dataset, mode } = body else {
            return Err(HostError::new(ErrorCode::NotJoined, "join first"));
        };
        if let Some(token) = token {
            let slot = self.authenticate(token).ok_or_else(|| HostError::new(ErrorCode::Unauthorized, "unknown token"))?;
            if self.expired {
                return Err(HostError::new(ErrorCode::Finished, "session was abandoned"));
            }
            self.record(now_ms, JournalEntry::Rejoin { slot });
            self.reconnect(slot);
            return Ok((slot, self.welcome(slot)));
        }
        if self.expired || self.is_finished() {
            return Err(HostError::new(ErrorCode::Finished, "session is over"));
        }
        let mode = self.mode.unwrap_or(mode.unwrap_or(Mode::Gamified));
        if self.seats.len() >= capacity(mode) || self.runtime.is_some() {
            return Err(HostError::new(ErrorCode::SessionFull, "all seats are taken"));
        }
        if self.seats.is_empty() {
            if let Some(store) = &self.store {
                if store.session(&self.session_id).is_some() {
                    return Err(HostError::new(ErrorCode::Finished, "session id already used"));
                }
            }
        }
        let (participant_id, wearing, exclude) =
            self.resolve_participant(participant_id.clone(), *wearing_eyetracker, *exclude_from_dataset, now_ms)?;
        let slot = slot_at(self.seats.len());
        self.record(
            now_ms,
            JournalEntry::Join {
                slot,
                participant_id: participant_id.clone(),
                wearing_eyetracker: wearing,
                exclude_from_dataset: exclude,
                mode,
            },
        );
        self.seat(participant_id, wearing, mode);
        Ok((slot, self.welcome(slot)))
    }

    fn resolve_participant(
        &self,
        requested: Option<ParticipantId>,
        wearing: bool,
        exclude: bool,
        now_ms: u64,
    ) -> Result<(ParticipantId, bool, bool), HostError> {
        if let Some(id) = &requested {
            if self.seats.iter().any(|s| &s.seat.participant_id == id) {
                return Err(HostError::new(ErrorCode::IllegalAction, "participant already seated"));
            }
        }
        let internal = |e: gazeboard_core::store::StoreError| HostError::new(ErrorCode::Internal, e.to_string());
        let Some(store) = &self.store else {
            let id = requested.unwrap_or_else(|| ParticipantId::new(format!("{}-{}", self.session_id, self.seats.len())));
            return Ok((id, wearing, exclude));
        };
        match requested {
            Some(id) => match store.participant(&id) {
                Some(p) => Ok((id, p.wearing_eyetracker, p.exclude_from_dataset)),
                None => {
                    store
                        .upsert_participant(Participant {
                            participant_id: id.clone(),
                            wearing_eyetracker: wearing,
                            exclude_from_dataset: exclude,
                            registered_at_ms: now_ms,
                        })
                        .map_err(internal)?;
                    Ok((id, wearing, exclude))
                }
            },
            None => Ok((store.register_participant(wearing, exclude, now_ms).map_err(internal)?, wearing, exclude)),
        }
    }

    fn seat(&mut self, participant_id: ParticipantId, wearing: bool, mode: Mode) {
        self.mode = Some(mode);
        let mut bytes = [0u8; 16];
        self.token_rng.fill(&mut bytes);
        let token = bytes.iter().map(|b| format!("{b:02x}")).collect();
        self.seats.push(SeatState {
            seat: Seat { participant_id, wearing_eyetracker: wearing },
            token,
            connected: true,
        });
    }

    fn reconnect(&mut self, slot: PlayerSlot) {
        self.seats[slot.index()].connected = true;
        if self.seats.iter().all(|s| s.connected) {
            self.grace_deadline_ms = None;
        }
    }

    /// Joined + board + the current word view for `slot`, then snapshots.
    fn welcome(&mut self, slot: PlayerSlot) -> Vec<Outbound> {
        let seat = &self.seats[slot.index()];
        let joined = ServerBody::Joined {
            slot,
            token: seat.token.clone(),
            participant_id: seat.seat.participant_id.clone(),
            mode: self.mode.unwrap_or(Mode::Gamified),
        };
        let layout = ServerBody::BoardLayout { layout: (&self.config.installation.layout).into() };
        let mut out = vec![self.message(slot, joined), self.message(slot, layout)];
        if let Some(view) = self.word_view(slot) {
            out.push(self.message(slot, view));
        }
        out.extend(self.snapshots());
        out
    }

    /// Client message from a seated client: ticks the clock, then dispatches.
    pub fn client(&mut self, slot: PlayerSlot, body: ClientBody, now_ms: u64) -> Vec<Outbound> {
        let mut out = self.tick(now_ms);
        out.extend(self.dispatch(slot, body, now_ms));
        out
    }

    fn dispatch(&mut self, slot: PlayerSlot, body: ClientBody, now_ms: u64) -> Vec<Outbound> {
        self.record(now_ms, JournalEntry::Client { slot, body: body.clone() });
        match self.dispatch_inner(slot, body, now_ms) {
            Ok(out) => out,
            Err(e) => vec![self.error(slot, &e)],
        }
    }

    fn dispatch_inner(&mut self, slot: PlayerSlot, body: ClientBody, now_ms: u64) -> Result<Vec<Outbound>, HostError> {
        if self.is_finished() {
            return Err(HostError::new(ErrorCode::Finished, "session is over"));
        }
        let input = match body {
            ClientBody::Join { .. } => return Err(HostError::new(ErrorCode::IllegalAction, "already joined")),
            ClientBody::Start => return self.start(now_ms),
            ClientBody::Ready => Input::Ready,
            ClientBody::TriggerCapture => Input::TriggerCapture,
            ClientBody::ApproveCapture => Input::ApproveCapture,
            ClientBody::RejectCapture => Input::RejectCapture,
            ClientBody::Mark { position_mm } => Input::Mark { position_mm },
            ClientBody::Answer { text } => Input::Answer { text },
            ClientBody::Proceed => Input::Proceed,
        };
        if self.paused() {
            return Err(HostError::new(ErrorCode::IllegalAction, "session paused while a player reconnects"));
        }
        let rt = self.runtime.as_mut().ok_or_else(|| HostError::new(ErrorCode::NotStarted, "session not started"))?;
        let effects = rt.handle(Actor::from(slot), input, now_ms).map_err(|e| match e {
            EngineError::ProtocolViolation { .. } => HostError::new(ErrorCode::IllegalAction, e.to_string()),
            other => HostError::new(ErrorCode::Internal, other.to_string()),
        })?;
        self.flush_journal();
        Ok(self.effect_messages(&effects))
    }

    fn start(&mut self, now_ms: u64) -> Result<Vec<Outbound>, HostError> {
        if self.runtime.is_some() {
            return Err(HostError::new(ErrorCode::AlreadyStarted, "session already started"));
        }
        let mode = self.mode.unwrap_or(Mode::Gamified);
        if self.seats.len() < capacity(mode) {
            return Err(HostError::new(ErrorCode::NotStarted, "waiting for players"));
        }
        if self.paused() {
            return Err(HostError::new(ErrorCode::IllegalAction, "session paused while a player reconnects"));
        }
        let setup = SessionSetup {
            session_id: self.session_id.clone(),
            mode,
            seats: self.seats.iter().map(|s| s.seat.clone()).collect(),
            config: self.config.game.clone(),
            rng_seed: self.config.session_seed(&self.session_id),
        };
        let internal = |m: String| HostError::new(ErrorCode::Internal, m);
        let sink: Box<dyn SessionSink> = match &self.store {
            Some(store) => {
                let ids: Vec<ParticipantId> = setup.seats.iter().map(|s| s.participant_id.clone()).collect();
                Box::new(store.open_session(&self.session_id, mode, &ids, now_ms).map_err(|e| internal(e.to_string()))?)
            }
            None => Box::new(MemorySink::default()),
        };
        let inst = Arc::clone(&self.config.installation);
        let (drivers, trackers) = synthetic_hardware(&inst, &setup, &self.config.drivers, self.config.eyetracker.as_ref())
            .map_err(|e| internal(e.to_string()))?;
        let (rt, effects) =
            SessionRuntime::start(inst, setup, drivers, trackers, sink, now_ms).map_err(|e| internal(e.to_string()))?;
        self.runtime = Some(rt);
        self.flush_journal();
        Ok(self.effect_messages(&effects))
    }

    /// Fires due engine timers and the reconnect deadline.
    pub fn tick(&mut self, now_ms: u64) -> Vec<Outbound> {
        if self.grace_deadline_ms.is_some_and(|d| now_ms >= d) {
            return self.expire(now_ms);
        }
        self.engine_tick(now_ms)
    }

    fn engine_tick(&mut self, now_ms: u64) -> Vec<Outbound> {
        if self.paused() {
            return Vec::new();
        }
        let Some(rt) = self.runtime.as_mut() else { return Vec::new() };
        let before = rt.session().events().len();
        let effects = rt.tick(now_ms);
        if rt.session().events().len() == before {
            return Vec::new();
        }
        self.record(now_ms, JournalEntry::Tick);
        self.effect_messages(&effects)
    }

    fn expire(&mut self, now_ms: u64) -> Vec<Outbound> {
        self.record(now_ms, JournalEntry::Expire);
        self.grace_deadline_ms = None;
        self.expired = true;
        match self.runtime.as_mut() {
            Some(rt) => {
                let effects = rt.abandon(now_ms);
                self.flush_journal();
                self.effect_messages(&effects)
            }
            None => Vec::new(),
        }
    }

    pub fn disconnect(&mut self, slot: PlayerSlot, now_ms: u64) -> Vec<Outbound> {
        if !self.connected(slot) {
            return Vec::new();
        }
        self.record(now_ms, JournalEntry::Disconnect { slot });
        self.seats[slot.index()].connected = false;
        if !self.is_finished() && self.grace_deadline_ms.is_none() {
            self.grace_deadline_ms = Some(now_ms + self.config.grace_ms);
        }
        self.snapshots()
    }

    /// Closed for good and nobody is connected.
    pub fn is_idle(&self) -> bool {
        self.is_finished() && self.seats.iter().all(|s| !s.connected)
    }

    fn word_view(&self, slot: PlayerSlot) -> Option<ServerBody> {
        let state = self.runtime.as_ref()?.session().state();
        let word = state.word.as_ref()?;
        if state.mode != Mode::Gamified || matches!(state.phase, Phase::Finished { .. }) {
            return None;
        }
        Some(if slot == state.questioner {
            ServerBody::WordPrompt {
                word_index: word.index,
                glyphs: word.glyphs.clone(),
                hidden_positions: word.hidden_positions.clone(),
                letter_ids: word.letter_ids.clone(),
            }
        } else {
            ServerBody::ClueView {
                word_index: word.index,
                glyphs: word
                    .glyphs
                    .iter()
                    .enumerate()
                    .map(|(i, g)| (!word.hidden_positions.contains(&i)).then(|| g.clone()))
                    .collect(),
            }
        })
    }

    fn seat_slots(&self) -> Vec<PlayerSlot> {
        (0..self.seats.len()).map(slot_at).collect()
    }

    fn effect_messages(&mut self, effects: &[Effect]) -> Vec<Outbound> {
        let Some(rt) = self.runtime.as_ref() else { return Vec::new() };
        let state = rt.session().state();
        let q = state.questioner;
        let subject = state.subject();
        let all = self.seat_slots();
        let mut plan: Vec<(PlayerSlot, ServerBody)> = Vec::new();
        for effect in effects {
            match effect {
                Effect::AssignWord { .. } => {
                    for slot in &all {
                        if let Some(view) = self.word_view(*slot) {
                            plan.push((*slot, view));
                        }
                    }
                }
                Effect::StartCountdown { sample_id, duration_ms, deadline_ms } => {
                    for slot in &all {
                        let body = ServerBody::Countdown {
                            sample_id: sample_id.clone(),
                            duration_ms: *duration_ms,
                            deadline_ms: *deadline_ms,
                        };
                        plan.push((*slot, body));
                    }
                }
                Effect::PresentImage { sample_id, audience } => {
                    let arrow = rt.preview(sample_id).and_then(|p| p.arrow);
                    let both = *audience == gazeboard_core::engine::Audience::Both;
                    let to: Vec<PlayerSlot> = if both { all.clone() } else { vec![q] };
                    let seen = self.image_audience.entry(sample_id.clone()).or_default();
                    for slot in &to {
                        seen[slot.index()] = true;
                    }
                    for slot in to {
                        plan.push((
                            slot,
                            ServerBody::CapturedImage {
                                sample_id: sample_id.clone(),
                                image_url: Some(format!("/sessions/{}/captures/{}.png", self.session_id, sample_id)),
                                arrow,
                                no_face: false,
                                approved: both,
                            },
                        ));
                    }
                }
                Effect::NoFace { sample_id } => plan.push((
                    subject,
                    ServerBody::CapturedImage {
                        sample_id: sample_id.clone(),
                        image_url: None,
                        arrow: None,
                        no_face: true,
                        approved: false,
                    },
                )),
                Effect::StartAnswerTimer { deadline_ms, clue_at_ms } => {
                    for slot in &all {
                        plan.push((*slot, ServerBody::Timer { deadline_ms: *deadline_ms, clue_at_ms: *clue_at_ms }));
                    }
                }
                Effect::RevealClue { index, glyph } => {
                    for slot in &all {
                        plan.push((*slot, ServerBody::ClueRevealed { index: *index, glyph: glyph.clone() }));
                    }
                }
                Effect::ShowResult { correct, word, score } => {
                    for slot in &all {
                        plan.push((*slot, ServerBody::Result { correct: *correct, word: word.clone(), score: *score }));
                    }
                }
                Effect::SwitchRoles { questioner } => {
                    for slot in &all {
                        plan.push((*slot, ServerBody::RolesSwitched { questioner: *questioner }));
                    }
                }
                Effect::ShowStimulus { index, position_mm } => {
                    plan.push((subject, ServerBody::Stimulus { index: *index, position_mm: *position_mm }))
                }
                Effect::EndSession { reason } => {
                    for slot in &all {
                        let body = ServerBody::SessionFinished {
                            reason: *reason,
                            score: state.score,
                            samples_saved: rt.persisted_count(),
                        };
                        plan.push((*slot, body));
                    }
                }
                Effect::RequestCapture { .. }
                | Effect::PersistSample { .. }
                | Effect::DiscardCapture { .. }
                | Effect::RecordMark { .. }
                | Effect::EvaluateAnswer { .. } => {}
            }
        }
        let mut out: Vec<Outbound> = plan.into_iter().map(|(to, body)| self.message(to, body)).collect();
        out.extend(self.snapshots());
        out
    }

    fn snapshots(&mut self) -> Vec<Outbound> {
        self.seat_slots()
            .into_iter()
            .map(|slot| {
                let snap = self.snapshot(slot);
                self.message(slot, ServerBody::StateSnapshot(snap))
            })
            .collect()
    }

    pub fn snapshot(&self, slot: PlayerSlot) -> Snapshot {
        let connected = [self.connected(PlayerSlot::A), self.connected(PlayerSlot::B)];
        let mode = self.mode.unwrap_or(Mode::Gamified);
        let Some(rt) = self.runtime.as_ref() else {
            let g = &self.config.game;
            return Snapshot {
                mode,
                phase: if self.expired { "abandoned".into() } else { "lobby".into() },
                slot,
                role: None,
                started: false,
                questioner: PlayerSlot::A,
                score: 0,
                word_index: 0,
                words_per_game: g.words_per_game,
                hidden_count: g.hidden_count,
                letter_index: None,
                marks: Vec::new(),
                connected,
                paused: self.paused(),
                countdown_deadline_ms: None,
                answer_deadline_ms: None,
                clue_at_ms: None,
                stimuli_captured: 0,
                stimuli_total: g.standard_stimuli_count,
            };
        };
        let s = rt.session().state();
        let role = match s.mode {
            Mode::Standard => Role::Participant,
            Mode::Gamified if slot == s.questioner => Role::Questioner,
            Mode::Gamified => Role::Answerer,
        };
        let (letter_index, countdown) = match s.phase {
            Phase::Conveying { letter, step: ConveyStep::Countdown { deadline_ms } } => (Some(letter), Some(deadline_ms)),
            Phase::Conveying { letter, .. } => (Some(letter), None),
            Phase::Countdown { deadline_ms } => (None, Some(deadline_ms)),
            _ => (None, None),
        };
        let (answer_deadline_ms, clue_at_ms) = match s.phase {
            Phase::Answering { deadline_ms, clue_at_ms, .. } => (Some(deadline_ms), Some(clue_at_ms)),
            _ => (None, None),
        };
        Snapshot {
            mode: s.mode,
            phase: s.phase.name().into(),
            slot,
            role: Some(role),
            started: true,
            questioner: s.questioner,
            score: s.score,
            word_index: s.word_index,
            words_per_game: s.config.words_per_game,
            hidden_count: s.config.hidden_count,
            letter_index,
            marks: s.marks.clone(),
            connected,
            paused: self.paused(),
            countdown_deadline_ms: countdown,
            answer_deadline_ms,
            clue_at_ms,
            stimuli_captured: s.stimuli_captured,
            stimuli_total: s.config.standard_stimuli_count,
        }
    }
}

/// Feeds a journal to a fresh in-memory host. Returns the host and every
/// message it produced, in order.
pub fn replay_journal(
    config: Arc<HostConfig>,
    session_id: SessionId,
    journal: &[JournalLine],
) -> Result<(SessionHost, Vec<Outbound>), HostError> {
    let mut host = SessionHost::new(config, session_id, None, 0);
    let mut out = Vec::new();
    for line in journal {
        let now = line.at_ms;
        match &line.entry {
            JournalEntry::Join { slot, participant_id, wearing_eyetracker, exclude_from_dataset, mode } => {
                if *slot != slot_at(host.seats.len()) {
                    return Err(HostError::new(ErrorCode::Internal, format!("journal line {}: seat order", line.seq)));
                }
                let body = ClientBody::Join {
                    participant_id: Some(participant_id.clone()),
                    wearing_eyetracker: *wearing_eyetracker,
                    exclude_from_dataset: *exclude_from_dataset,
                    mode: Some(*mode),
                };
                let (_, msgs) = host.join(&body, None, now)?;
                out.extend(msgs);
            }
            JournalEntry::Rejoin { slot } => {
                let token = host.seats.get(slot.index()).map(|s| s.token.clone()).unwrap_or_default();
                let (_, msgs) = host.join(&ClientBody::Join {
                    participant_id: None,
                    wearing_eyetracker: false,
                    exclude_from_dataset: false,
                    mode: None,
                }, Some(&token), now)?;
                out.extend(msgs);
            }
            JournalEntry::Client { slot, body } => out.extend(host.dispatch(*slot, body.clone(), now)),
            JournalEntry::Tick => out.extend(host.engine_tick(now)),
            JournalEntry::Disconnect { slot } => out.extend(host.disconnect(*slot, now)),
            JournalEntry::Expire => out.extend(host.expire(now)),
        }
    }
    Ok((host, out))
}
