//! Executes engine effects against capture drivers and a session sink.
//!
//! A [`SessionRuntime`] owns one [`GameSession`]. Each call feeds one input
//! to the engine, then carries out the returned effects in order: capture
//! requests run the capture pipeline and feed the result back as
//! `capture_result`, approvals persist the pending capture together with
//! the reference record, and rejections drop it. New events are appended to
//! the sink after every engine call.
//!
//! Storage failures never stop the game. They are logged, kept in
//! [`SessionRuntime::storage_failures`], and retried for events on the next
//! call.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::board_geometry::{BoardLayout, Calibration, CameraCalibration};
use crate::capture::{self, gaze_arrow, side_of, CaptureContext, CaptureOutcome, Drivers, LabelOrigin, PendingCapture};
use crate::dictionary::Dictionary;
use crate::engine::{Actor, Effect, EngineContext, EngineError, FinishReason, GameConfig, GameSession, Input, PlayerSlot};
use crate::eval::EvalRecord;
use crate::ids::{Mode, ParticipantId, SampleId, SessionId};
use crate::normalization::NormalizationParams;
use crate::store::{SessionSink, SessionStatus};

/// Static description of the installation shared by all sessions.
#[derive(Debug, Clone)]
pub struct Installation {
    pub layout: BoardLayout,
    pub dictionary: Dictionary,
    pub calibration: Calibration,
    pub normalization: NormalizationParams,
    pub label_origin: LabelOrigin,
}

impl Installation {
    pub fn engine_context(&self) -> EngineContext<'_> {
        EngineContext { dictionary: &self.dictionary, layout: &self.layout }
    }

    pub fn camera_for(&self, slot: PlayerSlot) -> Option<&CameraCalibration> {
        self.calibration.for_side(side_of(slot))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seat {
    pub participant_id: ParticipantId,
    pub wearing_eyetracker: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionSetup {
    pub session_id: SessionId,
    pub mode: Mode,
    /// Seat `i` plays slot A for `i = 0`, B for `i = 1`.
    pub seats: Vec<Seat>,
    pub config: GameConfig,
    pub rng_seed: u64,
}

/// Source of eye-tracker records at the capture instant.
pub trait ReferenceTracker: Send {
    fn record(&mut self, capture: &PendingCapture, camera: &CameraCalibration) -> Option<EvalRecord>;
}

/// What the players are shown for one capture.
#[derive(Debug, Clone)]
pub struct Preview {
    pub subject: PlayerSlot,
    pub no_face: bool,
    pub normalized_image: Option<GrayImage>,
    /// Estimated gaze as an arrow end point in normalized image coordinates.
    pub arrow: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StorageFailure {
    pub sample_id: Option<SampleId>,
    pub message: String,
}

const PREVIEW_LIMIT: usize = 8;

pub struct SessionRuntime<S: SessionSink> {
    installation: Arc<Installation>,
    setup: SessionSetup,
    session: GameSession,
    drivers: [Option<Drivers>; 2],
    trackers: [Option<Box<dyn ReferenceTracker>>; 2],
    sink: S,
    flushed_events: usize,
    pending: BTreeMap<SampleId, (Box<PendingCapture>, Option<EvalRecord>)>,
    previews: VecDeque<(SampleId, Preview)>,
    failures: Vec<StorageFailure>,
    persisted: usize,
}

impl<S: SessionSink> SessionRuntime<S> {
    /// Starts the session. `drivers[i]` films seat `i`; a missing driver set
    /// makes every capture of that seat report no face.
    pub fn start(
        installation: Arc<Installation>,
        setup: SessionSetup,
        drivers: [Option<Drivers>; 2],
        trackers: [Option<Box<dyn ReferenceTracker>>; 2],
        sink: S,
        now_ms: u64,
    ) -> Result<(Self, Vec<Effect>), EngineError> {
        let players = setup.seats.iter().map(|s| s.participant_id.clone()).collect();
        let (session, effects) = GameSession::start(
            setup.session_id.clone(),
            setup.mode,
            players,
            setup.config.clone(),
            setup.rng_seed,
            now_ms,
            installation.engine_context(),
        )?;
        let mut rt = Self {
            installation,
            setup,
            session,
            drivers,
            trackers,
            sink,
            flushed_events: 0,
            pending: BTreeMap::new(),
            previews: VecDeque::new(),
            failures: Vec::new(),
            persisted: 0,
        };
        let effects = rt.execute(effects, now_ms);
        Ok((rt, effects))
    }

    pub fn session(&self) -> &GameSession {
        &self.session
    }

    pub fn setup(&self) -> &SessionSetup {
        &self.setup
    }

    pub fn installation(&self) -> &Arc<Installation> {
        &self.installation
    }

    pub fn sink(&self) -> &S {
        &self.sink
    }

    pub fn sink_mut(&mut self) -> &mut S {
        &mut self.sink
    }

    pub fn into_sink(self) -> S {
        self.sink
    }

    pub fn storage_failures(&self) -> &[StorageFailure] {
        &self.failures
    }

    /// Samples handed to the sink successfully.
    pub fn persisted_count(&self) -> usize {
        self.persisted
    }

    pub fn preview(&self, sample_id: &SampleId) -> Option<&Preview> {
        self.previews.iter().rev().find(|(id, _)| id == sample_id).map(|(_, p)| p)
    }

    /// One player or system input. The returned effects include those of any
    /// capture results the runtime fed back on its own.
    pub fn handle(&mut self, actor: Actor, input: Input, now_ms: u64) -> Result<Vec<Effect>, EngineError> {
        let effects = self.session.handle(actor, input, now_ms, self.installation.engine_context());
        let effects = match effects {
            Ok(fx) => fx,
            Err(e) => {
                self.flush_events();
                return Err(e);
            }
        };
        Ok(self.execute(effects, now_ms))
    }

    pub fn tick(&mut self, now_ms: u64) -> Vec<Effect> {
        let effects = self.session.advance_time(now_ms, self.installation.engine_context());
        self.execute(effects, now_ms)
    }

    /// Ends the session as abandoned; a no-op once finished.
    pub fn abandon(&mut self, now_ms: u64) -> Vec<Effect> {
        if self.session.phase().is_finished() {
            return Vec::new();
        }
        self.handle(Actor::System, Input::Abandon, now_ms).unwrap_or_default()
    }

    /// Earliest pending engine deadline, for the caller's timer.
    pub fn next_deadline_ms(&self) -> Option<u64> {
        use crate::engine::{ConveyStep, Phase};
        match self.session.phase() {
            Phase::Conveying { step: ConveyStep::Countdown { deadline_ms }, .. } | Phase::Countdown { deadline_ms } => {
                Some(deadline_ms)
            }
            Phase::Answering { deadline_ms, clue_at_ms, clue_revealed, outcome: None } => {
                Some(if clue_revealed { deadline_ms } else { clue_at_ms.min(deadline_ms) })
            }
            _ => None,
        }
    }

    fn execute(&mut self, effects: Vec<Effect>, now_ms: u64) -> Vec<Effect> {
        self.flush_events();
        let mut queue: VecDeque<Effect> = effects.into();
        let mut out = Vec::new();
        while let Some(effect) = queue.pop_front() {
            match &effect {
                Effect::RequestCapture { sample_id, target, subject } => {
                    let no_face = self.run_capture(sample_id, target, *subject, now_ms);
                    let input = Input::CaptureResult { sample_id: sample_id.clone(), no_face };
                    match self.session.handle(Actor::System, input, now_ms, self.installation.engine_context()) {
                        Ok(more) => queue.extend(more),
                        Err(e) => tracing::error!(%sample_id, error = %e, "capture result rejected"),
                    }
                    self.flush_events();
                }
                Effect::PersistSample { sample_id, .. } => self.persist(sample_id, now_ms),
                Effect::DiscardCapture { sample_id } => {
                    self.pending.remove(sample_id);
                }
                Effect::EndSession { reason } => {
                    let status = match reason {
                        FinishReason::Completed => SessionStatus::Completed,
                        FinishReason::Abandoned => SessionStatus::Abandoned,
                    };
                    self.pending.clear();
                    if let Err(e) = self.sink.finish(status, now_ms) {
                        self.fail(None, format!("finishing session: {e}"));
                    }
                }
                _ => {}
            }
            out.push(effect);
        }
        out
    }

    /// Returns the `no_face` flag for the engine.
    fn run_capture(&mut self, sample_id: &SampleId, target: &crate::engine::CaptureTarget, subject: PlayerSlot, now_ms: u64) -> bool {
        let idx = subject.index();
        let inst = Arc::clone(&self.installation);
        let (Some(seat), Some(camera), Some(drivers)) =
            (self.setup.seats.get(idx), inst.camera_for(subject), self.drivers[idx].as_mut())
        else {
            tracing::warn!(%sample_id, ?subject, "no capture drivers for this seat");
            self.remember(sample_id, Preview { subject, no_face: true, normalized_image: None, arrow: None });
            return true;
        };
        let ctx = CaptureContext {
            session_id: &self.setup.session_id,
            participant_id: &seat.participant_id,
            mode: self.setup.mode,
            wearing_eyetracker: seat.wearing_eyetracker,
            layout: &inst.layout,
            camera,
            normalization: &inst.normalization,
            label_origin: inst.label_origin,
        };
        match capture::capture(&ctx, sample_id, target, now_ms, drivers) {
            Ok(CaptureOutcome::Sample(pending)) => {
                let record = match (&mut self.trackers[idx], seat.wearing_eyetracker) {
                    (Some(t), true) => t.record(&pending, camera),
                    _ => None,
                };
                let arrow = pending.estimate.as_ref().map(|e| gaze_arrow(&e.gaze_norm));
                self.remember(
                    sample_id,
                    Preview { subject, no_face: false, normalized_image: Some(pending.normalized_image.clone()), arrow },
                );
                self.pending.insert(sample_id.clone(), (pending, record));
                false
            }
            Ok(CaptureOutcome::NoFace { .. }) => {
                self.remember(sample_id, Preview { subject, no_face: true, normalized_image: None, arrow: None });
                true
            }
            Err(e) => {
                tracing::warn!(%sample_id, error = %e, "capture failed, reported as no face");
                self.remember(sample_id, Preview { subject, no_face: true, normalized_image: None, arrow: None });
                true
            }
        }
    }

    fn remember(&mut self, sample_id: &SampleId, preview: Preview) {
        self.previews.push_back((sample_id.clone(), preview));
        while self.previews.len() > PREVIEW_LIMIT {
            self.previews.pop_front();
        }
    }

    fn persist(&mut self, sample_id: &SampleId, now_ms: u64) {
        let Some((mut pending, record)) = self.pending.remove(sample_id) else {
            self.fail(Some(sample_id.clone()), "approved capture has no pending image".into());
            return;
        };
        pending.sample.approved_at_ms = Some(now_ms);
        match self.sink.persist_capture(&pending.sample, &pending.image, &pending.normalized_image) {
            Ok(_) => self.persisted += 1,
            Err(e) => {
                self.fail(Some(sample_id.clone()), format!("persisting sample: {e}"));
                return;
            }
        }
        if let Some(record) = record {
            if let Err(e) = self.sink.append_eval_record(&record) {
                self.fail(Some(sample_id.clone()), format!("persisting eye-tracker record: {e}"));
            }
        }
    }

    fn flush_events(&mut self) {
        while let Some(event) = self.session.events().get(self.flushed_events) {
            if let Err(e) = self.sink.append_event(event) {
                self.fail(None, format!("appending event: {e}"));
                return;
            }
            self.flushed_events += 1;
        }
    }

    fn fail(&mut self, sample_id: Option<SampleId>, message: String) {
        tracing::error!(sample_id = sample_id.as_ref().map(|s| s.as_str()), "{message}");
        self.failures.push(StorageFailure { sample_id, message });
    }
}
