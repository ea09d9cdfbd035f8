use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use super::events::{Actor, EventKind, FinishReason, PlayerSlot, SessionEvent, TimerKind};
use super::{EngineError, GameConfig};
use crate::board_geometry::BoardLayout;
use crate::dictionary::{select_question_excluding, Dictionary};
use crate::ids::{LetterId, Mode, ParticipantId, SampleId, SessionId};
use crate::seed;

/// Read-only resources needed to decide new words.
#[derive(Clone, Copy)]
pub struct EngineContext<'a> {
    pub dictionary: &'a Dictionary,
    pub layout: &'a BoardLayout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignedWord {
    pub index: u32,
    pub glyphs: Vec<String>,
    pub hidden_positions: Vec<usize>,
    pub letter_ids: Vec<LetterId>,
    pub questioner: PlayerSlot,
}

impl AssignedWord {
    pub fn word(&self) -> String {
        self.glyphs.concat()
    }

    pub fn is_hidden(&self, position: usize) -> bool {
        self.hidden_positions.contains(&position)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum ConveyStep {
    AwaitCaptureTrigger,
    Countdown { deadline_ms: u64 },
    Capturing,
    AwaitApproval,
    AnswererMarking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Briefing {
        ready: [bool; 2],
    },
    AnswererReview,
    Conveying {
        letter: usize,
        #[serde(flatten)]
        step: ConveyStep,
    },
    Answering {
        deadline_ms: u64,
        clue_at_ms: u64,
        clue_revealed: bool,
        /// Set once an answer or the timeout has decided the word.
        outcome: Option<bool>,
    },
    Reveal {
        correct: bool,
    },
    RoleSwitch,
    AwaitTrigger,
    Countdown {
        deadline_ms: u64,
    },
    Capturing,
    Captured,
    Finished {
        reason: FinishReason,
    },
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Idle => "idle",
            Phase::Briefing { .. } => "briefing",
            Phase::AnswererReview => "answerer_review",
            Phase::Conveying { step, .. } => match step {
                ConveyStep::AwaitCaptureTrigger => "conveying.await_capture_trigger",
                ConveyStep::Countdown { .. } => "conveying.countdown",
                ConveyStep::Capturing => "conveying.capturing",
                ConveyStep::AwaitApproval => "conveying.await_approval",
                ConveyStep::AnswererMarking => "conveying.answerer_marking",
            },
            Phase::Answering { .. } => "answering",
            Phase::Reveal { .. } => "reveal",
            Phase::RoleSwitch => "role_switch",
            Phase::AwaitTrigger => "await_trigger",
            Phase::Countdown { .. } => "countdown",
            Phase::Capturing => "capturing",
            Phase::Captured => "captured",
            Phase::Finished { .. } => "finished",
        }
    }

    pub fn is_finished(&self) -> bool {
        matches!(self, Phase::Finished { .. })
    }
}

/// What a capture is labeled with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CaptureTarget {
    Letter { letter_id: LetterId, word_index: u32, letter_index: usize },
    Stimulus { index: u32, position_mm: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApprovedCapture {
    pub sample_id: SampleId,
    pub target: CaptureTarget,
    /// Player whose face was captured.
    pub subject: PlayerSlot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Audience {
    Questioner,
    Both,
}

/// Commands for the subsystems around the engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum Effect {
    AssignWord { word_index: u32 },
    StartCountdown { sample_id: SampleId, duration_ms: u64, deadline_ms: u64 },
    RequestCapture { sample_id: SampleId, target: CaptureTarget, subject: PlayerSlot },
    PresentImage { sample_id: SampleId, audience: Audience },
    NoFace { sample_id: SampleId },
    PersistSample { sample_id: SampleId, target: CaptureTarget, subject: PlayerSlot },
    DiscardCapture { sample_id: SampleId },
    RecordMark { position_mm: [f64; 2] },
    StartAnswerTimer { deadline_ms: u64, clue_at_ms: u64 },
    RevealClue { index: usize, glyph: String },
    EvaluateAnswer { text: String, correct: bool },
    ShowResult { correct: bool, word: String, score: u32 },
    SwitchRoles { questioner: PlayerSlot },
    ShowStimulus { index: u32, position_mm: [f64; 2] },
    EndSession { reason: FinishReason },
}

/// Player actions and system notifications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "input", rename_all = "snake_case")]
pub enum Input {
    Ready,
    TriggerCapture,
    ApproveCapture,
    RejectCapture,
    Mark { position_mm: [f64; 2] },
    Answer { text: String },
    Proceed,
    /// Clock reading only.
    Tick,
    CaptureResult { sample_id: SampleId, no_face: bool },
    Abandon,
}

impl Input {
    pub fn name(&self) -> &'static str {
        match self {
            Input::Ready => "ready",
            Input::TriggerCapture => "trigger_capture",
            Input::ApproveCapture => "approve_capture",
            Input::RejectCapture => "reject_capture",
            Input::Mark { .. } => "mark",
            Input::Answer { .. } => "answer",
            Input::Proceed => "proceed",
            Input::Tick => "tick",
            Input::CaptureResult { .. } => "capture_result",
            Input::Abandon => "abandon",
        }
    }
}

/// Answer check: NFC-normalized, surrounding whitespace ignored, exact match.
pub fn answer_matches(text: &str, word: &str) -> bool {
    text.trim().nfc().eq(word.nfc())
}

pub fn sample_id_for(session: &SessionId, seq: u32) -> SampleId {
    SampleId::new(format!("{session}-{seq:03}"))
}

/// Plain session data. Mutated only by [`GameSession::apply`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: SessionId,
    pub mode: Mode,
    pub players: Vec<ParticipantId>,
    pub config: GameConfig,
    pub rng_seed: u64,
    pub phase: Phase,
    pub word_index: u32,
    pub questioner: PlayerSlot,
    pub score: u32,
    pub word: Option<AssignedWord>,
    pub used_words: BTreeSet<String>,
    pub marks: Vec<[f64; 2]>,
    pub clue: Option<(usize, String)>,
    pub last_answer: Option<String>,
    pub captures_started: u32,
    pub pending_sample: Option<SampleId>,
    pub last_capture_no_face: bool,
    pub approved: Vec<ApprovedCapture>,
    pub stimulus: Option<(u32, [f64; 2])>,
    pub stimuli_captured: u32,
    pub last_timestamp_ms: u64,
}

impl SessionState {
    fn idle(config: GameConfig) -> Self {
        Self {
            session_id: SessionId::new(""),
            mode: Mode::Gamified,
            players: Vec::new(),
            config,
            rng_seed: 0,
            phase: Phase::Idle,
            word_index: 0,
            questioner: PlayerSlot::A,
            score: 0,
            word: None,
            used_words: BTreeSet::new(),
            marks: Vec::new(),
            clue: None,
            last_answer: None,
            captures_started: 0,
            pending_sample: None,
            last_capture_no_face: false,
            approved: Vec::new(),
            stimulus: None,
            stimuli_captured: 0,
            last_timestamp_ms: 0,
        }
    }

    pub fn answerer(&self) -> PlayerSlot {
        self.questioner.other()
    }

    /// Seat of the player whose face the next capture shows.
    pub fn subject(&self) -> PlayerSlot {
        match self.mode {
            Mode::Gamified => self.questioner,
            Mode::Standard => PlayerSlot::A,
        }
    }

    pub fn stimulus_position(&self, index: u32) -> [f64; 2] {
        let mut rng = seed::rng(seed::derive(self.rng_seed, "stimulus", u64::from(index)));
        let [w, h] = self.config.canvas_mm;
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        [(u - 0.5) * w, (v - 0.5) * h]
    }

    fn next_sample_id(&self) -> SampleId {
        sample_id_for(&self.session_id, self.captures_started + 1)
    }

    fn current_target(&self) -> Option<CaptureTarget> {
        match (self.mode, &self.phase) {
            (Mode::Gamified, Phase::Conveying { letter, .. }) => {
                let w = self.word.as_ref()?;
                Some(CaptureTarget::Letter {
                    letter_id: w.letter_ids.get(*letter)?.clone(),
                    word_index: w.index,
                    letter_index: *letter,
                })
            }
            (Mode::Standard, _) => {
                let (index, position_mm) = self.stimulus?;
                Some(CaptureTarget::Stimulus { index, position_mm })
            }
            _ => None,
        }
    }

    fn require(cond: bool, reason: &str) -> Result<(), String> {
        if cond {
            Ok(())
        } else {
            Err(reason.to_owned())
        }
    }

    fn require_actor(actual: Actor, expected: impl Into<Actor>) -> Result<(), String> {
        let expected = expected.into();
        Self::require(actual == expected, &format!("expected actor {expected:?}, got {actual:?}"))
    }

    fn require_pending(&self, id: &SampleId) -> Result<(), String> {
        Self::require(self.pending_sample.as_ref() == Some(id), "sample id does not match the pending capture")
    }

    /// Validating reducer: checks the event against the current phase and
    /// updates the state, or leaves it untouched and returns the reason.
    fn apply(&mut self, ts: u64, actor: Actor, kind: &EventKind) -> Result<(), String> {
        Self::require(ts >= self.last_timestamp_ms, "timestamp decreases")?;
        let mut next = self.clone();
        next.apply_unchecked(ts, actor, kind)?;
        next.last_timestamp_ms = ts;
        *self = next;
        Ok(())
    }

    fn apply_unchecked(&mut self, ts: u64, actor: Actor, kind: &EventKind) -> Result<(), String> {
        let gamified = self.mode == Mode::Gamified;
        match kind {
            EventKind::GameStarted { session_id, mode, players, rng_seed, config } => {
                Self::require(self.phase == Phase::Idle, "session already started")?;
                Self::require_actor(actor, Actor::System)?;
                config.validate().map_err(|e| e.to_string())?;
                let distinct: BTreeSet<_> = players.iter().collect();
                match mode {
                    Mode::Gamified => Self::require(
                        players.len() == 2 && distinct.len() == 2,
                        "gamified sessions need two distinct players",
                    )?,
                    Mode::Standard => {
                        Self::require(players.len() == 1, "standard sessions need exactly one participant")?
                    }
                }
                self.session_id = session_id.clone();
                self.mode = *mode;
                self.players = players.clone();
                self.config = config.clone();
                self.rng_seed = *rng_seed;
                self.phase = match mode {
                    Mode::Gamified => Phase::Briefing { ready: [false; 2] },
                    Mode::Standard => Phase::AwaitTrigger,
                };
            }
            EventKind::WordAssigned { word_index, glyphs, hidden_positions, letter_ids, questioner } => {
                Self::require(gamified, "words exist only in gamified sessions")?;
                Self::require_actor(actor, Actor::System)?;
                let first = matches!(self.phase, Phase::Briefing { .. }) && self.word.is_none() && *word_index == 0;
                let next = self.phase == Phase::RoleSwitch && *word_index == self.word_index + 1;
                Self::require(first || next, "no word expected now")?;
                Self::require(*word_index < self.config.words_per_game, "word index beyond words_per_game")?;
                Self::require(*questioner == self.questioner, "questioner does not match role order")?;
                let n = glyphs.len() as u32;
                Self::require(
                    (self.config.min_letters..=self.config.max_letters).contains(&n),
                    "word length outside configured bounds",
                )?;
                Self::require(
                    hidden_positions.len() as u32 == self.config.hidden_count
                        && letter_ids.len() == hidden_positions.len()
                        && hidden_positions.windows(2).all(|w| w[0] < w[1])
                        && hidden_positions.iter().all(|p| *p < glyphs.len()),
                    "malformed hidden positions",
                )?;
                self.word = Some(AssignedWord {
                    index: *word_index,
                    glyphs: glyphs.clone(),
                    hidden_positions: hidden_positions.clone(),
                    letter_ids: letter_ids.clone(),
                    questioner: *questioner,
                });
                self.used_words.insert(glyphs.concat());
                self.word_index = *word_index;
                self.marks.clear();
                self.clue = None;
                self.last_answer = None;
                self.last_capture_no_face = false;
                if next {
                    self.phase = Phase::AnswererReview;
                }
            }
            EventKind::Ready => {
                let slot = actor.slot().ok_or("ready must come from a player")?;
                match self.phase {
                    Phase::Briefing { mut ready } => {
                        Self::require(self.word.is_some(), "no word assigned yet")?;
                        Self::require(!ready[slot.index()], "player already ready")?;
                        ready[slot.index()] = true;
                        self.phase =
                            if ready == [true, true] { Phase::AnswererReview } else { Phase::Briefing { ready } };
                    }
                    Phase::AnswererReview => {
                        Self::require_actor(actor, self.answerer())?;
                        self.phase = Phase::Conveying { letter: 0, step: ConveyStep::AwaitCaptureTrigger };
                    }
                    _ => return Err("ready not expected".into()),
                }
            }
            EventKind::CaptureTriggered { sample_id } => {
                Self::require(*sample_id == self.next_sample_id(), "unexpected sample id")?;
                let deadline_ms = ts + self.config.countdown_ms();
                match self.phase {
                    Phase::Conveying { letter, step: ConveyStep::AwaitCaptureTrigger } => {
                        Self::require_actor(actor, self.questioner)?;
                        self.phase = Phase::Conveying { letter, step: ConveyStep::Countdown { deadline_ms } };
                    }
                    Phase::AwaitTrigger => {
                        Self::require_actor(actor, PlayerSlot::A)?;
                        Self::require(
                            matches!(self.stimulus, Some((i, _)) if i == self.stimuli_captured),
                            "no stimulus shown",
                        )?;
                        self.phase = Phase::Countdown { deadline_ms };
                    }
                    _ => return Err("capture trigger not expected".into()),
                }
                self.captures_started += 1;
                self.pending_sample = Some(sample_id.clone());
                self.last_capture_no_face = false;
            }
            EventKind::Timeout { timer: TimerKind::Countdown } => {
                Self::require_actor(actor, Actor::System)?;
                match self.phase {
                    Phase::Conveying { letter, step: ConveyStep::Countdown { deadline_ms } } => {
                        Self::require(ts >= deadline_ms, "countdown not expired")?;
                        self.phase = Phase::Conveying { letter, step: ConveyStep::Capturing };
                    }
                    Phase::Countdown { deadline_ms } => {
                        Self::require(ts >= deadline_ms, "countdown not expired")?;
                        self.phase = Phase::Capturing;
                    }
                    _ => return Err("no countdown running".into()),
                }
            }
            EventKind::Timeout { timer: TimerKind::Answer } => {
                Self::require_actor(actor, Actor::System)?;
                match self.phase {
                    Phase::Answering { deadline_ms, clue_at_ms, clue_revealed, outcome: None } => {
                        Self::require(ts >= deadline_ms, "answer time not expired")?;
                        self.phase = Phase::Answering { deadline_ms, clue_at_ms, clue_revealed, outcome: Some(false) };
                    }
                    _ => return Err("no answer timer running".into()),
                }
            }
            EventKind::CaptureCompleted { sample_id, no_face } => {
                Self::require_actor(actor, Actor::System)?;
                self.require_pending(sample_id)?;
                match self.phase {
                    Phase::Conveying { letter, step: ConveyStep::Capturing } => {
                        let step = if *no_face { ConveyStep::AwaitCaptureTrigger } else { ConveyStep::AwaitApproval };
                        self.phase = Phase::Conveying { letter, step };
                    }
                    Phase::Capturing => {
                        self.phase = if *no_face { Phase::AwaitTrigger } else { Phase::Captured };
                    }
                    _ => return Err("no capture in flight".into()),
                }
                if *no_face {
                    self.pending_sample = None;
                }
                self.last_capture_no_face = *no_face;
            }
            EventKind::CaptureApproved { sample_id } => {
                self.require_pending(sample_id)?;
                let target = self.current_target().ok_or("no capture target")?;
                let subject = self.subject();
                match self.phase {
                    Phase::Conveying { letter, step: ConveyStep::AwaitApproval } => {
                        Self::require_actor(actor, self.questioner)?;
                        self.phase = Phase::Conveying { letter, step: ConveyStep::AnswererMarking };
                    }
                    Phase::Captured => {
                        Self::require_actor(actor, Actor::System)?;
                        self.stimuli_captured += 1;
                        self.stimulus = None;
                        self.phase = Phase::AwaitTrigger;
                    }
                    _ => return Err("no capture awaiting approval".into()),
                }
                self.approved.push(ApprovedCapture { sample_id: sample_id.clone(), target, subject });
                self.pending_sample = None;
            }
            EventKind::CaptureRejected { sample_id } => {
                self.require_pending(sample_id)?;
                match self.phase {
                    Phase::Conveying { letter, step: ConveyStep::AwaitApproval } => {
                        Self::require_actor(actor, self.questioner)?;
                        self.phase = Phase::Conveying { letter, step: ConveyStep::AwaitCaptureTrigger };
                    }
                    _ => return Err("no capture awaiting approval".into()),
                }
                self.pending_sample = None;
            }
            EventKind::MarkRecorded { position_mm } => {
                Self::require(position_mm.iter().all(|v| v.is_finite()), "mark must be finite")?;
                match self.phase {
                    Phase::Conveying { letter, step: ConveyStep::AnswererMarking } => {
                        Self::require_actor(actor, self.answerer())?;
                        self.marks.push(*position_mm);
                        if ((letter + 1) as u32) < self.config.hidden_count {
                            self.phase = Phase::Conveying { letter: letter + 1, step: ConveyStep::AwaitCaptureTrigger };
                        } else {
                            let deadline_ms = ts + self.config.answer_limit_ms();
                            self.phase = Phase::Answering {
                                deadline_ms,
                                clue_at_ms: deadline_ms - self.config.clue_remaining_ms(),
                                clue_revealed: false,
                                outcome: None,
                            };
                        }
                    }
                    _ => return Err("mark not expected".into()),
                }
            }
            EventKind::ClueRevealed { index, glyph } => {
                Self::require_actor(actor, Actor::System)?;
                let word = self.word.as_ref().ok_or("no word")?;
                Self::require(*index == 0 && word.glyphs.first() == Some(glyph), "clue must be the first letter")?;
                match self.phase {
                    Phase::Answering { deadline_ms, clue_at_ms, clue_revealed: false, outcome: None } => {
                        Self::require(ts >= clue_at_ms, "clue threshold not reached")?;
                        self.phase = Phase::Answering { deadline_ms, clue_at_ms, clue_revealed: true, outcome: None };
                        self.clue = Some((*index, glyph.clone()));
                    }
                    _ => return Err("clue not expected".into()),
                }
            }
            EventKind::AnswerSubmitted { text, correct } => {
                let word = self.word.as_ref().ok_or("no word")?.word();
                Self::require(*correct == answer_matches(text, &word), "correctness flag mismatch")?;
                match self.phase {
                    Phase::Answering { deadline_ms, clue_at_ms, clue_revealed, outcome: None } => {
                        Self::require_actor(actor, self.answerer())?;
                        Self::require(ts < deadline_ms, "answer time expired")?;
                        self.phase =
                            Phase::Answering { deadline_ms, clue_at_ms, clue_revealed, outcome: Some(*correct) };
                        self.last_answer = Some(text.clone());
                    }
                    _ => return Err("answer not expected".into()),
                }
            }
            EventKind::ResultShown { correct, word, score } => {
                Self::require_actor(actor, Actor::System)?;
                let expected = self.word.as_ref().ok_or("no word")?.word();
                match self.phase {
                    Phase::Answering { outcome: Some(c), .. } => {
                        Self::require(
                            c == *correct && *word == expected && *score == self.score + u32::from(c),
                            "result does not match the decided outcome",
                        )?;
                        self.score = *score;
                        self.phase = Phase::Reveal { correct: c };
                    }
                    _ => return Err("result not expected".into()),
                }
            }
            EventKind::RolesSwitched { questioner } => {
                Self::require(actor.slot().is_some(), "proceed must come from a player")?;
                Self::require(matches!(self.phase, Phase::Reveal { .. }), "roles switch only after reveal")?;
                Self::require(self.word_index + 1 < self.config.words_per_game, "no words left")?;
                Self::require(*questioner == self.questioner.other(), "roles must alternate")?;
                self.questioner = *questioner;
                self.phase = Phase::RoleSwitch;
            }
            EventKind::StimulusShown { index, position_mm } => {
                Self::require_actor(actor, Actor::System)?;
                Self::require(!gamified && self.phase == Phase::AwaitTrigger, "stimulus not expected")?;
                Self::require(self.stimulus.is_none(), "stimulus already shown")?;
                Self::require(*index == self.stimuli_captured, "unexpected stimulus index")?;
                Self::require(*position_mm == self.stimulus_position(*index), "stimulus position does not match seed")?;
                self.stimulus = Some((*index, *position_mm));
            }
            EventKind::Finished { reason } => {
                Self::require_actor(actor, Actor::System)?;
                match reason {
                    FinishReason::Completed => {
                        let done = match self.phase {
                            Phase::Reveal { .. } => self.word_index + 1 == self.config.words_per_game,
                            Phase::AwaitTrigger => self.stimuli_captured == self.config.standard_stimuli_count,
                            _ => false,
                        };
                        Self::require(done, "session not complete")?;
                    }
                    FinishReason::Abandoned => {
                        Self::require(
                            !matches!(self.phase, Phase::Idle | Phase::Finished { .. }),
                            "session not running",
                        )?;
                    }
                }
                self.pending_sample = None;
                self.phase = Phase::Finished { reason: *reason };
            }
        }
        Ok(())
    }

    /// Effects implied by an event that was just applied.
    fn effects_of(&self, kind: &EventKind, ts: u64) -> Vec<Effect> {
        match kind {
            EventKind::GameStarted { .. } | EventKind::Ready => vec![],
            EventKind::WordAssigned { word_index, .. } => vec![Effect::AssignWord { word_index: *word_index }],
            EventKind::CaptureTriggered { sample_id } => vec![Effect::StartCountdown {
                sample_id: sample_id.clone(),
                duration_ms: self.config.countdown_ms(),
                deadline_ms: ts + self.config.countdown_ms(),
            }],
            EventKind::Timeout { timer: TimerKind::Countdown } => match (&self.pending_sample, self.current_target()) {
                (Some(sample_id), Some(target)) => vec![Effect::RequestCapture {
                    sample_id: sample_id.clone(),
                    target,
                    subject: self.subject(),
                }],
                _ => vec![],
            },
            EventKind::Timeout { timer: TimerKind::Answer } => vec![],
            EventKind::CaptureCompleted { sample_id, no_face } => {
                if *no_face {
                    vec![Effect::NoFace { sample_id: sample_id.clone() }, Effect::DiscardCapture { sample_id: sample_id.clone() }]
                } else if self.mode == Mode::Gamified {
                    vec![Effect::PresentImage { sample_id: sample_id.clone(), audience: Audience::Questioner }]
                } else {
                    vec![]
                }
            }
            EventKind::CaptureApproved { sample_id } => {
                let approved = self.approved.last().expect("approval recorded");
                let mut out = vec![Effect::PersistSample {
                    sample_id: sample_id.clone(),
                    target: approved.target.clone(),
                    subject: approved.subject,
                }];
                if self.mode == Mode::Gamified {
                    out.push(Effect::PresentImage { sample_id: sample_id.clone(), audience: Audience::Both });
                }
                out
            }
            EventKind::CaptureRejected { sample_id } => vec![Effect::DiscardCapture { sample_id: sample_id.clone() }],
            EventKind::MarkRecorded { position_mm } => {
                let mut out = vec![Effect::RecordMark { position_mm: *position_mm }];
                if let Phase::Answering { deadline_ms, clue_at_ms, .. } = self.phase {
                    out.push(Effect::StartAnswerTimer { deadline_ms, clue_at_ms });
                }
                out
            }
            EventKind::ClueRevealed { index, glyph } => vec![Effect::RevealClue { index: *index, glyph: glyph.clone() }],
            EventKind::AnswerSubmitted { text, correct } => {
                vec![Effect::EvaluateAnswer { text: text.clone(), correct: *correct }]
            }
            EventKind::ResultShown { correct, word, score } => {
                vec![Effect::ShowResult { correct: *correct, word: word.clone(), score: *score }]
            }
            EventKind::RolesSwitched { questioner } => vec![Effect::SwitchRoles { questioner: *questioner }],
            EventKind::StimulusShown { index, position_mm } => {
                vec![Effect::ShowStimulus { index: *index, position_mm: *position_mm }]
            }
            EventKind::Finished { reason } => vec![Effect::EndSession { reason: *reason }],
        }
    }
}

/// One session: current state plus the event log that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GameSession {
    state: SessionState,
    log: Vec<SessionEvent>,
}

impl GameSession {
    /// A session before `game_started`.
    pub fn idle(config: GameConfig) -> Self {
        Self { state: SessionState::idle(config), log: Vec::new() }
    }

    /// Starts a session: logs `game_started` and, for gamified sessions, the
    /// first word. Player A is the first questioner.
    pub fn start(
        session_id: SessionId,
        mode: Mode,
        players: Vec<ParticipantId>,
        config: GameConfig,
        rng_seed: u64,
        now_ms: u64,
        ctx: EngineContext<'_>,
    ) -> Result<(Self, Vec<Effect>), EngineError> {
        config.validate()?;
        let mut session = Self::idle(config.clone());
        let started = EventKind::GameStarted { session_id, mode, players, rng_seed, config };
        let mut effects = session
            .commit(now_ms, vec![(Actor::System, started)])
            .map_err(|e| match e {
                EngineError::ProtocolViolation { .. } | EngineError::IllegalEvent { .. } => {
                    EngineError::Config(e.to_string())
                }
                other => other,
            })?;
        if mode == Mode::Gamified {
            let word = session.decide_word(0, ctx)?;
            effects.extend(session.commit(now_ms, vec![(Actor::System, word)])?);
        }
        Ok((session, effects))
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.log
    }

    /// Appends one event after validating it. Used by replay.
    pub fn apply(&mut self, event: SessionEvent) -> Result<(), EngineError> {
        self.state.apply(event.timestamp_ms, event.actor, &event.kind).map_err(|reason| {
            EngineError::IllegalEvent { kind: event.kind.name(), phase: self.state.phase.name().into(), reason }
        })?;
        self.log.push(event);
        Ok(())
    }

    /// Processes one input. Illegal inputs leave the session unchanged and
    /// return [`EngineError::ProtocolViolation`].
    pub fn handle(
        &mut self,
        actor: Actor,
        input: Input,
        now_ms: u64,
        ctx: EngineContext<'_>,
    ) -> Result<Vec<Effect>, EngineError> {
        let violation = |state: &SessionState, reason: String| EngineError::ProtocolViolation {
            actor,
            phase: state.phase.name().into(),
            input: format!("{}: {reason}", input.name()),
        };
        let events = self.decide(actor, &input, now_ms, ctx).map_err(|r| violation(&self.state, r))?;
        self.commit(now_ms, events).map_err(|e| match e {
            EngineError::IllegalEvent { reason, .. } => violation(&self.state, reason),
            other => other,
        })
    }

    /// Timer-only input; never fails.
    pub fn advance_time(&mut self, now_ms: u64, ctx: EngineContext<'_>) -> Vec<Effect> {
        self.handle(Actor::System, Input::Tick, now_ms, ctx).unwrap_or_default()
    }

    /// Validates all events on a copy, then commits them atomically.
    fn commit(&mut self, now_ms: u64, events: Vec<(Actor, EventKind)>) -> Result<Vec<Effect>, EngineError> {
        let ts = now_ms.max(self.state.last_timestamp_ms);
        let mut trial = self.state.clone();
        let mut effects = Vec::new();
        for (actor, kind) in &events {
            trial.apply(ts, *actor, kind).map_err(|reason| EngineError::IllegalEvent {
                kind: kind.name(),
                phase: trial.phase.name().into(),
                reason,
            })?;
            effects.extend(trial.effects_of(kind, ts));
        }
        self.state = trial;
        self.log.extend(events.into_iter().map(|(actor, kind)| SessionEvent { timestamp_ms: ts, actor, kind }));
        Ok(effects)
    }

    fn decide_word(&self, word_index: u32, ctx: EngineContext<'_>) -> Result<EventKind, EngineError> {
        let s = &self.state;
        let mut rng = seed::rng(seed::derive(s.rng_seed, "word", u64::from(word_index)));
        let q = select_question_excluding(ctx.dictionary, ctx.layout, &s.config, &s.used_words, &mut rng)?;
        let hidden_positions = q.hidden_positions();
        let letter_ids = hidden_positions
            .iter()
            .map(|&i| ctx.layout.cell_by_glyph(&q.entry.glyphs[i]).expect("hidden glyphs are on the board").id.clone())
            .collect();
        Ok(EventKind::WordAssigned {
            word_index,
            glyphs: q.entry.glyphs,
            hidden_positions,
            letter_ids,
            questioner: s.questioner,
        })
    }

    fn decide(
        &self,
        actor: Actor,
        input: &Input,
        now_ms: u64,
        ctx: EngineContext<'_>,
    ) -> Result<Vec<(Actor, EventKind)>, String> {
        let s = &self.state;
        let now = now_ms.max(s.last_timestamp_ms);
        let player = |what: &str| actor.slot().map(|_| ()).ok_or_else(|| format!("{what} must come from a player"));
        let system = |what: &str| {
            if actor == Actor::System {
                Ok(())
            } else {
                Err(format!("{what} is a system input"))
            }
        };
        Ok(match input {
            Input::Ready => {
                player("ready")?;
                vec![(actor, EventKind::Ready)]
            }
            Input::TriggerCapture => {
                player("trigger")?;
                let trigger = (actor, EventKind::CaptureTriggered { sample_id: s.next_sample_id() });
                if s.mode == Mode::Standard && s.phase == Phase::AwaitTrigger && s.stimulus.is_none() {
                    let index = s.stimuli_captured;
                    let shown = EventKind::StimulusShown { index, position_mm: s.stimulus_position(index) };
                    vec![(Actor::System, shown), trigger]
                } else {
                    vec![trigger]
                }
            }
            Input::ApproveCapture | Input::RejectCapture => {
                player("approval")?;
                let sample_id = s.pending_sample.clone().ok_or("no capture pending")?;
                let kind = if *input == Input::ApproveCapture {
                    EventKind::CaptureApproved { sample_id }
                } else {
                    EventKind::CaptureRejected { sample_id }
                };
                vec![(actor, kind)]
            }
            Input::Mark { position_mm } => {
                player("mark")?;
                vec![(actor, EventKind::MarkRecorded { position_mm: *position_mm })]
            }
            Input::Answer { text } => {
                player("answer")?;
                let word = s.word.as_ref().ok_or("no word")?.word();
                let correct = answer_matches(text, &word);
                vec![
                    (actor, EventKind::AnswerSubmitted { text: text.clone(), correct }),
                    (Actor::System, EventKind::ResultShown { correct, word, score: s.score + u32::from(correct) }),
                ]
            }
            Input::Proceed => {
                player("proceed")?;
                if !matches!(s.phase, Phase::Reveal { .. }) {
                    return Err("proceed only after reveal".into());
                }
                if s.word_index + 1 < s.config.words_per_game {
                    let mut after = self.clone();
                    let switched = EventKind::RolesSwitched { questioner: s.questioner.other() };
                    after.state.apply(now, actor, &switched)?;
                    let word = after.decide_word(s.word_index + 1, ctx).map_err(|e| e.to_string())?;
                    vec![(actor, switched), (Actor::System, word)]
                } else {
                    vec![(Actor::System, EventKind::Finished { reason: FinishReason::Completed })]
                }
            }
            Input::Tick => {
                system("tick")?;
                self.timer_events(now)
            }
            Input::CaptureResult { sample_id, no_face } => {
                system("capture result")?;
                let mut out = vec![(
                    Actor::System,
                    EventKind::CaptureCompleted { sample_id: sample_id.clone(), no_face: *no_face },
                )];
                if s.mode == Mode::Standard && !*no_face {
                    out.push((Actor::System, EventKind::CaptureApproved { sample_id: sample_id.clone() }));
                    if s.stimuli_captured + 1 == s.config.standard_stimuli_count {
                        out.push((Actor::System, EventKind::Finished { reason: FinishReason::Completed }));
                    }
                }
                out
            }
            Input::Abandon => {
                system("abandon")?;
                vec![(Actor::System, EventKind::Finished { reason: FinishReason::Abandoned })]
            }
        })
    }

    fn timer_events(&self, now: u64) -> Vec<(Actor, EventKind)> {
        let s = &self.state;
        let timeout = |timer| (Actor::System, EventKind::Timeout { timer });
        match s.phase {
            Phase::Conveying { step: ConveyStep::Countdown { deadline_ms }, .. } | Phase::Countdown { deadline_ms }
                if now >= deadline_ms =>
            {
                vec![timeout(TimerKind::Countdown)]
            }
            Phase::Answering { deadline_ms, clue_at_ms, clue_revealed, outcome: None } => {
                let mut out = Vec::new();
                let word = s.word.as_ref().expect("answering has a word");
                if !clue_revealed && now >= clue_at_ms {
                    out.push((Actor::System, EventKind::ClueRevealed { index: 0, glyph: word.glyphs[0].clone() }));
                }
                if now >= deadline_ms {
                    out.push(timeout(TimerKind::Answer));
                    out.push((
                        Actor::System,
                        EventKind::ResultShown { correct: false, word: word.word(), score: s.score },
                    ));
                }
                out
            }
            _ => vec![],
        }
    }
}
