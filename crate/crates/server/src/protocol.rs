//! Wire protocol, version 1.
//!
//! Every WebSocket text frame carries one JSON object. Client frames hold
//! `v`, `session_id`, an optional bearer `token` and a `kind` with its
//! payload fields inline:
//!
//! ```json
//! {"v":1,"session_id":"demo","kind":"join","wearing_eyetracker":false}
//! {"v":1,"session_id":"demo","token":"9f…","kind":"mark","position_mm":[30.0,-60.0]}
//! ```
//!
//! Server frames hold `v`, a per-recipient `seq` that strictly increases,
//! `session_id` and a `kind`. See `docs/protocol.md` for the field tables.

use gazeboard_core::board_geometry::{BoardLayout, LetterCell};
use gazeboard_core::engine::{FinishReason, PlayerSlot};
use gazeboard_core::ids::{LetterId, Mode, ParticipantId, SampleId, SessionId};
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMessage {
    pub v: u32,
    pub session_id: SessionId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
    #[serde(flatten)]
    pub body: ClientBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientBody {
    /// New seat, or a rejoin when `token` is set.
    Join {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        participant_id: Option<ParticipantId>,
        #[serde(default)]
        wearing_eyetracker: bool,
        /// Staff member filling a seat; their data never enters exports.
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        exclude_from_dataset: bool,
        /// Session mode, honored for the first join only.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mode: Option<Mode>,
    },
    Start,
    Ready,
    TriggerCapture,
    ApproveCapture,
    RejectCapture,
    Mark { position_mm: [f64; 2] },
    Answer { text: String },
    Proceed,
}

impl ClientBody {
    pub fn name(&self) -> &'static str {
        match self {
            ClientBody::Join { .. } => "join",
            ClientBody::Start => "start",
            ClientBody::Ready => "ready",
            ClientBody::TriggerCapture => "trigger_capture",
            ClientBody::ApproveCapture => "approve_capture",
            ClientBody::RejectCapture => "reject_capture",
            ClientBody::Mark { .. } => "mark",
            ClientBody::Answer { .. } => "answer",
            ClientBody::Proceed => "proceed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unsupported protocol version {0}")]
    Version(u32),
}

impl ProtocolError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ProtocolError::Malformed(_) => ErrorCode::Malformed,
            ProtocolError::Version(_) => ErrorCode::Version,
        }
    }
}

/// Fields a client frame of `kind` may carry besides the envelope.
fn payload_fields(kind: &str) -> Option<&'static [&'static str]> {
    Some(match kind {
        "join" => &["participant_id", "wearing_eyetracker", "exclude_from_dataset", "mode"],
        "start" | "ready" | "trigger_capture" | "approve_capture" | "reject_capture" | "proceed" => &[],
        "mark" => &["position_mm"],
        "answer" => &["text"],
        _ => return None,
    })
}

#[derive(Deserialize)]
struct Envelope {
    v: u32,
    session_id: SessionId,
    #[serde(default)]
    token: Option<String>,
    #[serde(flatten)]
    rest: serde_json::Map<String, serde_json::Value>,
}

/// Strict parse of one client frame: unknown kinds and unknown fields are
/// both rejected.
pub fn parse_client(text: &str) -> Result<ClientMessage, ProtocolError> {
    let malformed = |m: String| ProtocolError::Malformed(m);
    let env: Envelope = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    if env.v != PROTOCOL_VERSION {
        return Err(ProtocolError::Version(env.v));
    }
    let kind = env.rest.get("kind").and_then(|k| k.as_str()).ok_or_else(|| malformed("missing kind".into()))?;
    let allowed = payload_fields(kind).ok_or_else(|| malformed(format!("unknown kind `{kind}`")))?;
    if let Some(extra) = env.rest.keys().find(|k| *k != "kind" && !allowed.contains(&k.as_str())) {
        return Err(malformed(format!("unknown field `{extra}` for `{kind}`")));
    }
    let body: ClientBody =
        serde_json::from_value(serde_json::Value::Object(env.rest)).map_err(|e| malformed(e.to_string()))?;
    if let ClientBody::Mark { position_mm } = &body {
        if !position_mm.iter().all(|v| v.is_finite()) {
            return Err(malformed("mark position must be finite".into()));
        }
    }
    Ok(ClientMessage { v: env.v, session_id: env.session_id, token: env.token, body })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Questioner,
    Answerer,
    /// The single participant of a standard session.
    Participant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    Version,
    Unauthorized,
    SessionFull,
    NotJoined,
    NotStarted,
    AlreadyStarted,
    IllegalAction,
    Finished,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerMessage {
    pub v: u32,
    pub seq: u64,
    pub session_id: SessionId,
    #[serde(flatten)]
    pub body: ServerBody,
}

/// Role-filtered view of the session. Carries no glyphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub mode: Mode,
    pub phase: String,
    pub slot: PlayerSlot,
    pub role: Option<Role>,
    pub started: bool,
    pub questioner: PlayerSlot,
    pub score: u32,
    pub word_index: u32,
    pub words_per_game: u32,
    pub hidden_count: u32,
    /// Hidden letter currently being conveyed (0-based).
    pub letter_index: Option<usize>,
    pub marks: Vec<[f64; 2]>,
    pub connected: [bool; 2],
    pub paused: bool,
    pub countdown_deadline_ms: Option<u64>,
    pub answer_deadline_ms: Option<u64>,
    pub clue_at_ms: Option<u64>,
    pub stimuli_captured: u32,
    pub stimuli_total: u32,
}

/// Board replica for clients: every cell with its glyph and board position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutView {
    pub glyph_set_id: String,
    pub rows: usize,
    pub cols: usize,
    pub pitch_mm: f64,
    pub layout_hash: String,
    pub cells: Vec<LetterCell>,
}

impl From<&BoardLayout> for LayoutView {
    fn from(l: &BoardLayout) -> Self {
        Self {
            glyph_set_id: l.glyph_set_id().to_owned(),
            rows: l.rows(),
            cols: l.cols(),
            pitch_mm: l.pitch_mm(),
            layout_hash: l.content_hash(),
            cells: l.cells().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServerBody {
    Joined { slot: PlayerSlot, token: String, participant_id: ParticipantId, mode: Mode },
    BoardLayout { layout: LayoutView },
    StateSnapshot(Snapshot),
    /// Questioner only.
    WordPrompt { word_index: u32, glyphs: Vec<String>, hidden_positions: Vec<usize>, letter_ids: Vec<LetterId> },
    /// Answerer only: visible glyphs, `null` for hidden ones.
    ClueView { word_index: u32, glyphs: Vec<Option<String>> },
    Countdown { sample_id: SampleId, duration_ms: u64, deadline_ms: u64 },
    CapturedImage {
        sample_id: SampleId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        image_url: Option<String>,
        /// Estimated gaze arrow end point in normalized image coordinates
        /// (`[0.5, 0.5]` is the image center).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        arrow: Option<[f64; 2]>,
        no_face: bool,
        approved: bool,
    },
    Timer { deadline_ms: u64, clue_at_ms: u64 },
    ClueRevealed { index: usize, glyph: String },
    Result { correct: bool, word: String, score: u32 },
    RolesSwitched { questioner: PlayerSlot },
    Stimulus { index: u32, position_mm: [f64; 2] },
    SessionFinished { reason: FinishReason, score: u32, samples_saved: usize },
    Error { code: ErrorCode, message: String },
}

impl ServerBody {
    pub fn name(&self) -> &'static str {
        match self {
            ServerBody::Joined { .. } => "joined",
            ServerBody::BoardLayout { .. } => "board_layout",
            ServerBody::StateSnapshot(_) => "state_snapshot",
            ServerBody::WordPrompt { .. } => "word_prompt",
            ServerBody::ClueView { .. } => "clue_view",
            ServerBody::Countdown { .. } => "countdown",
            ServerBody::CapturedImage { .. } => "captured_image",
            ServerBody::Timer { .. } => "timer",
            ServerBody::ClueRevealed { .. } => "clue_revealed",
            ServerBody::Result { .. } => "result",
            ServerBody::RolesSwitched { .. } => "roles_switched",
            ServerBody::Stimulus { .. } => "stimulus",
            ServerBody::SessionFinished { .. } => "session_finished",
            ServerBody::Error { .. } => "error",
        }
    }

    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        ServerBody::Error { code, message: message.into() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_kind_and_fields_rejected() {
        assert!(parse_client(r#"{"v":1,"session_id":"s","kind":"dance"}"#).is_err());
        assert!(parse_client(r#"{"v":1,"session_id":"s","kind":"ready","extra":1}"#).is_err());
        assert!(parse_client(r#"{"v":1,"session_id":"s","kind":"mark"}"#).is_err());
        assert_eq!(parse_client(r#"{"v":2,"session_id":"s","kind":"ready"}"#), Err(ProtocolError::Version(2)));
        let m = parse_client(r#"{"v":1,"session_id":"s","token":"t","kind":"mark","position_mm":[1.5,-2]}"#).unwrap();
        assert_eq!(m.body, ClientBody::Mark { position_mm: [1.5, -2.0] });
        assert_eq!(m.token.as_deref(), Some("t"));
    }

    #[test]
    fn join_defaults() {
        let m = parse_client(r#"{"v":1,"session_id":"s","kind":"join"}"#).unwrap();
        assert_eq!(
            m.body,
            ClientBody::Join { participant_id: None, wearing_eyetracker: false, exclude_from_dataset: false, mode: None }
        );
    }
}
