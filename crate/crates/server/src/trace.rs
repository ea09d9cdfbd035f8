//! Scripted clients and trace checks.
//!
//! [`play`] seats simulated players in a [`SessionHost`] and drives it to
//! the end with legal moves, optionally mixed with stray messages and
//! dropped connections. [`information_leaks`] and [`sequence_violations`]
//! inspect the resulting message trace.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use gazeboard_core::engine::{Actor, EventKind, Input, PlayerSlot, SessionEvent};
use gazeboard_core::ids::{LetterId, Mode, SessionId};
use gazeboard_core::seed;
use gazeboard_core::sim::{next_move, PlayerPolicy};
use rand::Rng;

use crate::host::{HostConfig, HostError, Outbound, SessionHost};
use crate::protocol::{ClientBody, ErrorCode, ServerBody};

/// Perturbations layered over the legal move stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Fuzz {
    pub policy: PlayerPolicy,
    /// Chance per step of an extra message from a random seat, legal or not.
    pub stray_rate: f64,
    /// Chance per step that a seat drops and rejoins with its token.
    pub reconnect_rate: f64,
}

impl Default for Fuzz {
    fn default() -> Self {
        Self { policy: PlayerPolicy::default(), stray_rate: 0.0, reconnect_rate: 0.0 }
    }
}

impl Fuzz {
    pub fn heavy() -> Self {
        Self { policy: PlayerPolicy::erratic(), stray_rate: 0.15, reconnect_rate: 0.03 }
    }
}

pub struct ScriptedGame {
    pub host: SessionHost,
    pub outbound: Vec<Outbound>,
    pub end_ms: u64,
}

const STEP_LIMIT: usize = 20_000;

fn stray_body<R: Rng + ?Sized>(rng: &mut R) -> ClientBody {
    match rng.random_range(0..9) {
        0 => ClientBody::Start,
        1 => ClientBody::Ready,
        2 => ClientBody::TriggerCapture,
        3 => ClientBody::ApproveCapture,
        4 => ClientBody::RejectCapture,
        5 => ClientBody::Mark { position_mm: [rng.random_range(-300.0..300.0), rng.random_range(-150.0..150.0)] },
        6 => ClientBody::Answer { text: "あ".into() },
        7 => ClientBody::Proceed,
        _ => ClientBody::Join { participant_id: None, wearing_eyetracker: false, exclude_from_dataset: false, mode: None },
    }
}

fn to_body(input: &Input) -> Option<ClientBody> {
    Some(match input {
        Input::Ready => ClientBody::Ready,
        Input::TriggerCapture => ClientBody::TriggerCapture,
        Input::ApproveCapture => ClientBody::ApproveCapture,
        Input::RejectCapture => ClientBody::RejectCapture,
        Input::Mark { position_mm } => ClientBody::Mark { position_mm: *position_mm },
        Input::Answer { text } => ClientBody::Answer { text: text.clone() },
        Input::Proceed => ClientBody::Proceed,
        Input::Tick | Input::CaptureResult { .. } | Input::Abandon => return None,
    })
}

fn internal(message: String) -> HostError {
    HostError { code: ErrorCode::Internal, message }
}

/// Seats the players, starts the session and plays it to the end.
/// `seats[i]` is `(wearing_eyetracker, exclude_from_dataset)` for slot `i`.
pub fn play(
    config: Arc<HostConfig>,
    session_id: SessionId,
    mode: Mode,
    seats: &[(bool, bool)],
    fuzz: &Fuzz,
    seed_value: u64,
    start_ms: u64,
) -> Result<ScriptedGame, HostError> {
    play_with(SessionHost::new(config, session_id, None, seed_value), mode, seats, fuzz, seed_value, start_ms)
}

/// [`play`] on a host built by the caller, e.g. one backed by a store.
pub fn play_with(
    mut host: SessionHost,
    mode: Mode,
    seats: &[(bool, bool)],
    fuzz: &Fuzz,
    seed_value: u64,
    start_ms: u64,
) -> Result<ScriptedGame, HostError> {
    let mut rng = seed::rng(seed::derive(seed_value, "script", 0));
    let mut outbound = Vec::new();
    let mut now = start_ms;
    let mut tokens = Vec::new();
    for &(wearing_eyetracker, exclude_from_dataset) in seats {
        let body = ClientBody::Join { participant_id: None, wearing_eyetracker, exclude_from_dataset, mode: Some(mode) };
        let (slot, out) = host.join(&body, None, now)?;
        let token = out
            .iter()
            .find_map(|o| match &o.message.body {
                ServerBody::Joined { token, .. } if o.to == slot => Some(token.clone()),
                _ => None,
            })
            .ok_or_else(|| internal("no joined message".into()))?;
        tokens.push(token);
        outbound.extend(out);
        now += 100;
    }
    outbound.extend(host.client(PlayerSlot::A, ClientBody::Start, now));
    let grace = host.grace_ms();
    for _ in 0..STEP_LIMIT {
        if host.is_finished() {
            return Ok(ScriptedGame { host, outbound, end_ms: now });
        }
        let slots = tokens.len();
        if fuzz.stray_rate > 0.0 && rng.random_bool(fuzz.stray_rate) {
            let slot = if rng.random_range(0..slots) == 0 { PlayerSlot::A } else { PlayerSlot::B };
            // seated clients reach the host through `client`, joins included
            outbound.extend(host.client(slot, stray_body(&mut rng), now));
            continue;
        }
        if fuzz.reconnect_rate > 0.0 && rng.random_bool(fuzz.reconnect_rate) {
            let slot = if rng.random_range(0..slots) == 0 { PlayerSlot::A } else { PlayerSlot::B };
            outbound.extend(host.disconnect(slot, now));
            now += rng.random_range(100..=grace.max(200) / 2);
            outbound.extend(host.tick(now));
            let rejoin = ClientBody::Join { participant_id: None, wearing_eyetracker: false, exclude_from_dataset: false, mode: None };
            let (_, out) = host.join(&rejoin, Some(&tokens[slot.index()]), now)?;
            outbound.extend(out);
            continue;
        }
        let runtime = host.runtime().ok_or_else(|| internal("session did not start".into()))?;
        let state = runtime.session().state();
        let layout = &runtime.installation().layout;
        let Some(m) = next_move(state, layout, now, &fuzz.policy, &mut rng) else {
            return Err(internal(format!("stalled in {}", state.phase.name())));
        };
        now = m.at_ms.max(now);
        match (m.actor, to_body(&m.input)) {
            (Actor::System, _) | (_, None) => outbound.extend(host.tick(now)),
            (actor, Some(body)) => {
                let slot = actor.slot().ok_or_else(|| internal("move without a seat".into()))?;
                outbound.extend(host.client(slot, body, now));
            }
        }
    }
    Err(internal(format!("no end after {STEP_LIMIT} steps")))
}

struct Secret {
    glyphs: Vec<String>,
    hidden: BTreeSet<usize>,
    hidden_positions: Vec<usize>,
    letter_ids: Vec<LetterId>,
    answerer: PlayerSlot,
}

impl Secret {
    /// Glyphs that occur only at hidden (and not yet revealed) positions.
    fn hidden_only(&self, revealed: &BTreeSet<usize>) -> BTreeSet<&str> {
        let visible: BTreeSet<&str> = self
            .glyphs
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.hidden.contains(i) || revealed.contains(i))
            .map(|(_, g)| g.as_str())
            .collect();
        self.hidden
            .iter()
            .filter(|i| !revealed.contains(i))
            .map(|&i| self.glyphs[i].as_str())
            .filter(|g| !visible.contains(g))
            .collect()
    }
}

fn word_index_of(body: &ServerBody) -> Option<u32> {
    match body {
        ServerBody::StateSnapshot(s) if s.started => Some(s.word_index),
        ServerBody::WordPrompt { word_index, .. } | ServerBody::ClueView { word_index, .. } => Some(*word_index),
        _ => None,
    }
}

/// Answerer-bound messages that reveal part of the current word before its
/// result is shown. Secrets come from the `WordAssigned` events.
pub fn information_leaks(events: &[SessionEvent], outbound: &[Outbound]) -> Vec<String> {
    let secrets: BTreeMap<u32, Secret> = events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::WordAssigned { word_index, glyphs, hidden_positions, letter_ids, questioner } => Some((
                *word_index,
                Secret {
                    glyphs: glyphs.clone(),
                    hidden: hidden_positions.iter().copied().collect(),
                    hidden_positions: hidden_positions.clone(),
                    letter_ids: letter_ids.clone(),
                    answerer: questioner.other(),
                },
            )),
            _ => None,
        })
        .collect();
    let mut leaks = Vec::new();
    let mut current: Option<u32> = None;
    let mut revealed_word = false;
    let mut clues: BTreeSet<usize> = BTreeSet::new();
    for (n, o) in outbound.iter().enumerate() {
        let body = &o.message.body;
        if let Some(w) = word_index_of(body) {
            if current != Some(w) && secrets.contains_key(&w) {
                current = Some(w);
                revealed_word = false;
                clues.clear();
            }
        }
        match body {
            ServerBody::Result { .. } => revealed_word = true,
            ServerBody::ClueRevealed { index, .. } => {
                clues.insert(*index);
            }
            _ => {}
        }
        let Some(secret) = current.and_then(|w| secrets.get(&w)) else { continue };
        if revealed_word || o.to != secret.answerer {
            continue;
        }
        let mut leak = |what: String| leaks.push(format!("message {n} ({}) to {:?}: {what}", body.name(), o.to));
        if matches!(body, ServerBody::WordPrompt { .. }) {
            leak("word prompt".into());
            continue;
        }
        if matches!(body, ServerBody::BoardLayout { .. }) {
            continue;
        }
        let json = serde_json::to_string(&o.message).expect("message serializes");
        let word: String = secret.glyphs.concat();
        if secret.glyphs.len() > 1 && json.contains(&word) {
            leak(format!("full word {word}"));
        }
        for (pos, id) in secret.hidden_positions.iter().zip(&secret.letter_ids) {
            if !clues.contains(pos) && json.contains(&format!("\"{id}\"")) {
                leak(format!("letter id {id}"));
            }
        }
        let own_clue = match body {
            ServerBody::ClueRevealed { glyph, .. } => Some(glyph.as_str()),
            _ => None,
        };
        for g in secret.hidden_only(&clues) {
            if Some(g) != own_clue && json.contains(g) {
                leak(format!("hidden glyph {g}"));
            }
        }
    }
    leaks
}

/// Recipients whose sequence numbers do not strictly increase.
pub fn sequence_violations(outbound: &[Outbound]) -> Vec<String> {
    let mut last: BTreeMap<PlayerSlot, u64> = BTreeMap::new();
    let mut bad = Vec::new();
    for (n, o) in outbound.iter().enumerate() {
        let prev = last.insert(o.to, o.message.seq);
        if prev.is_some_and(|p| o.message.seq <= p) {
            bad.push(format!("message {n} to {:?}: seq {} after {}", o.to, o.message.seq, prev.unwrap_or(0)));
        }
    }
    bad
}
