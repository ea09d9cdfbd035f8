use serde::{Deserialize, Serialize};

use super::GameConfig;
use crate::ids::{LetterId, Mode, ParticipantId, SampleId, SessionId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlayerSlot {
    A,
    B,
}

impl PlayerSlot {
    pub fn other(self) -> Self {
        match self {
            PlayerSlot::A => PlayerSlot::B,
            PlayerSlot::B => PlayerSlot::A,
        }
    }

    pub fn index(self) -> usize {
        match self {
            PlayerSlot::A => 0,
            PlayerSlot::B => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    System,
    A,
    B,
}

impl Actor {
    pub fn slot(self) -> Option<PlayerSlot> {
        match self {
            Actor::System => None,
            Actor::A => Some(PlayerSlot::A),
            Actor::B => Some(PlayerSlot::B),
        }
    }
}

impl From<PlayerSlot> for Actor {
    fn from(s: PlayerSlot) -> Self {
        match s {
            PlayerSlot::A => Actor::A,
            PlayerSlot::B => Actor::B,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimerKind {
    Countdown,
    Answer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Completed,
    Abandoned,
}

/// One line of a session's event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub timestamp_ms: u64,
    pub actor: Actor,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventKind {
    GameStarted {
        session_id: SessionId,
        mode: Mode,
        players: Vec<ParticipantId>,
        rng_seed: u64,
        config: GameConfig,
    },
    WordAssigned {
        word_index: u32,
        glyphs: Vec<String>,
        hidden_positions: Vec<usize>,
        /// Board cell of each hidden position, same order.
        letter_ids: Vec<LetterId>,
        questioner: PlayerSlot,
    },
    Ready,
    CaptureTriggered {
        sample_id: SampleId,
    },
    CaptureCompleted {
        sample_id: SampleId,
        no_face: bool,
    },
    CaptureApproved {
        sample_id: SampleId,
    },
    CaptureRejected {
        sample_id: SampleId,
    },
    MarkRecorded {
        position_mm: [f64; 2],
    },
    AnswerSubmitted {
        text: String,
        correct: bool,
    },
    ClueRevealed {
        index: usize,
        glyph: String,
    },
    Timeout {
        timer: TimerKind,
    },
    ResultShown {
        correct: bool,
        word: String,
        score: u32,
    },
    RolesSwitched {
        questioner: PlayerSlot,
    },
    StimulusShown {
        index: u32,
        position_mm: [f64; 2],
    },
    Finished {
        reason: FinishReason,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::GameStarted { .. } => "game_started",
            EventKind::WordAssigned { .. } => "word_assigned",
            EventKind::Ready => "ready",
            EventKind::CaptureTriggered { .. } => "capture_triggered",
            EventKind::CaptureCompleted { .. } => "capture_completed",
            EventKind::CaptureApproved { .. } => "capture_approved",
            EventKind::CaptureRejected { .. } => "capture_rejected",
            EventKind::MarkRecorded { .. } => "mark_recorded",
            EventKind::AnswerSubmitted { .. } => "answer_submitted",
            EventKind::ClueRevealed { .. } => "clue_revealed",
            EventKind::Timeout { .. } => "timeout",
            EventKind::ResultShown { .. } => "result_shown",
            EventKind::RolesSwitched { .. } => "roles_switched",
            EventKind::StimulusShown { .. } => "stimulus_shown",
            EventKind::Finished { .. } => "finished",
        }
    }
}

/// Serializes events as JSON lines.
pub fn to_jsonl(events: &[SessionEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("event serializes"));
        out.push('\n');
    }
    out
}

/// Parses JSON lines; blank lines are skipped. Errors carry the 0-based
/// record index.
pub fn from_jsonl(text: &str) -> Result<Vec<SessionEvent>, (usize, serde_json::Error)> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i, e)))
        .collect()
}
