//! Authoritative session state machine.
//!
//! A [`GameSession`] is event-sourced: [`GameSession::handle`] turns a player
//! action or clock reading into a list of [`SessionEvent`]s, applies them with
//! the validating reducer [`GameSession::apply`], and returns the
//! [`Effect`]s other subsystems must carry out. [`replay`] folds a log back
//! into the identical state. The engine never reads a clock; every input
//! carries the wall time in milliseconds.
//!
//! Gamified phases:
//!
//! ```text
//! Idle → Briefing → AnswererReview → Conveying{k}: AwaitCaptureTrigger → Countdown
//!      → Capturing → AwaitApproval → AnswererMarking → … → Answering → Reveal
//!      → RoleSwitch → AnswererReview … → Finished
//! ```
//!
//! Standard setting: `Idle → AwaitTrigger → Countdown → Capturing → Captured
//! → AwaitTrigger … → Finished`.

mod config;
mod events;
mod replay;
mod session;

pub use config::GameConfig;
pub use events::{
    from_jsonl, to_jsonl, Actor, EventKind, FinishReason, PlayerSlot, SessionEvent, TimerKind,
};
pub use replay::replay;
pub use session::{
    answer_matches, sample_id_for, ApprovedCapture, AssignedWord, Audience, CaptureTarget,
    ConveyStep, Effect, EngineContext, GameSession, Input, Phase, SessionState,
};

use crate::dictionary::DictionaryError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("protocol violation: {actor:?} sent `{input}` during {phase}")]
    ProtocolViolation { actor: Actor, phase: String, input: String },
    #[error("illegal event `{kind}` during {phase}: {reason}")]
    IllegalEvent { kind: &'static str, phase: String, reason: String },
    #[error("replay failed at event {index}: {source}")]
    Replay {
        index: usize,
        #[source]
        source: Box<EngineError>,
    },
    #[error(transparent)]
    Dictionary(#[from] DictionaryError),
}
