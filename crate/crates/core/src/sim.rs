//! Synthetic participants and eye trackers for hardware-free runs.
//!
//! [`next_move`] picks a legal input for the current session state, so a
//! loop over it plays complete games. [`SyntheticEyeTracker`] stands in for
//! the wearable tracker: the wearer's actual gaze is the direction to the
//! target perturbed by [`AngularNoise`], the scene camera sits at the eye
//! and looks at the target, and the record holds the projected gaze pixel
//! plus the projected board markers.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::board_geometry::{gaze_label, vector_to_pitchyaw, BoardLayout, CameraCalibration, CameraIntrinsics, CameraPose, Correspondence};
use crate::capture::{build_drivers, image_paths, CaptureError, DriverConfig, GazeSample, PendingCapture};
use crate::engine::{Actor, ConveyStep, EngineError, Input, Phase, PlayerSlot, SessionState};
use crate::eval::{EvalRecord, RecordQuality};
use crate::ids::{LetterId, Mode, ParticipantId, SampleId, SessionId};
use crate::noise::AngularNoise;
use crate::runtime::{Installation, ReferenceTracker, SessionRuntime, SessionSetup};
use crate::seed;
use crate::store::SessionSink;
use crate::{Vec2, Vec3};

/// Board positions of the six markers, two rows of three.
pub const MARKERS_MM: [[f64; 2]; 6] =
    [[-300.0, -150.0], [0.0, -150.0], [300.0, -150.0], [-300.0, 150.0], [0.0, 150.0], [300.0, 150.0]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EyeTrackerModel {
    pub gaze_noise: AngularNoise,
    pub scene_intrinsics: CameraIntrinsics,
    pub markers_mm: Vec<[f64; 2]>,
    /// Standard deviation of marker corner positions, pixels.
    pub corner_noise_px: f64,
}

impl Default for EyeTrackerModel {
    fn default() -> Self {
        Self {
            gaze_noise: AngularNoise::new(2.8),
            scene_intrinsics: CameraIntrinsics::new(766.0, 766.0, 544.0, 540.0, 1088, 1080).expect("valid"),
            markers_mm: MARKERS_MM.to_vec(),
            corner_noise_px: 0.5,
        }
    }
}

pub struct SyntheticEyeTracker {
    model: EyeTrackerModel,
    rng: ChaCha8Rng,
}

impl SyntheticEyeTracker {
    pub fn new(model: EyeTrackerModel, seed_value: u64) -> Self {
        Self { model, rng: seed::rng(seed_value) }
    }

    /// Record for a wearer at `eye_board` looking at `target_board`. `None`
    /// if the perturbed gaze misses the board plane.
    pub fn observe(&mut self, sample_id: &SampleId, eye_board: &Vec3, target_board: &Vec3) -> Option<EvalRecord> {
        let dir = (target_board - eye_board).normalize();
        let actual = self.model.gaze_noise.perturb(&dir, &mut self.rng);
        let t = -eye_board.z / actual.z;
        if !(t > 0.0 && t.is_finite()) {
            return None;
        }
        let gaze_board = eye_board + actual * t;
        let pose = CameraPose::look_at(*eye_board, *target_board, Vec3::new(0.0, 1.0, 0.0)).ok()?;
        let k = &self.model.scene_intrinsics;
        let gaze_px = k.project(&pose.transform(&gaze_board))?;
        let corner = Normal::new(0.0, self.model.corner_noise_px.max(0.0)).expect("finite sd");
        let markers = self
            .model
            .markers_mm
            .iter()
            .filter_map(|&[x, y]| {
                let px = k.project(&pose.transform(&Vec3::new(x, y, 0.0)))?;
                let noisy = px + Vec2::new(corner.sample(&mut self.rng), corner.sample(&mut self.rng));
                Some(Correspondence::new(noisy, Vec2::new(x, y)))
            })
            .collect::<Vec<_>>();
        let degraded = markers.len() < 4;
        Some(EvalRecord {
            sample_id: sample_id.clone(),
            scene_intrinsics: *k,
            gaze_px: [gaze_px.x, gaze_px.y],
            markers,
            gaze_offset_px: None,
            quality: RecordQuality { degraded, note: degraded.then(|| "markers out of view".to_owned()) },
        })
    }
}

impl ReferenceTracker for SyntheticEyeTracker {
    fn record(&mut self, capture: &PendingCapture, camera: &CameraCalibration) -> Option<EvalRecord> {
        let truth = capture.truth.as_ref()?;
        let eye = camera.extrinsics.inverse_transform(&truth.face_center_camera_mm);
        self.observe(&capture.sample.sample_id, &eye, &capture.target_board_mm)
    }
}

/// Behaviour of simulated players.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlayerPolicy {
    pub reject_rate: f64,
    pub correct_rate: f64,
    /// Chance of letting the answer timer run out.
    pub timeout_rate: f64,
    pub min_think_ms: u64,
    pub max_think_ms: u64,
    /// Standard deviation of answerer marks around the letter, mm.
    pub mark_noise_mm: f64,
}

impl Default for PlayerPolicy {
    fn default() -> Self {
        Self {
            reject_rate: 0.0,
            correct_rate: 0.8,
            timeout_rate: 0.0,
            min_think_ms: 300,
            max_think_ms: 2_000,
            mark_noise_mm: 20.0,
        }
    }
}

impl PlayerPolicy {
    /// Exercises every branch: rejections, wrong answers and timeouts.
    pub fn erratic() -> Self {
        Self { reject_rate: 0.25, correct_rate: 0.5, timeout_rate: 0.2, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Move {
    pub at_ms: u64,
    pub actor: Actor,
    pub input: Input,
}

fn think<R: Rng + ?Sized>(policy: &PlayerPolicy, rng: &mut R) -> u64 {
    rng.random_range(policy.min_think_ms..=policy.max_think_ms.max(policy.min_think_ms))
}

/// A legal next input, or `None` when the session waits on the system
/// (capturing) or is finished.
pub fn next_move<R: Rng + ?Sized>(
    state: &SessionState,
    layout: &BoardLayout,
    now_ms: u64,
    policy: &PlayerPolicy,
    rng: &mut R,
) -> Option<Move> {
    let q: Actor = state.questioner.into();
    let a: Actor = state.answerer().into();
    let at = now_ms + think(policy, rng);
    let mv = |at_ms, actor, input| Some(Move { at_ms, actor, input });
    match state.phase {
        Phase::Idle | Phase::Finished { .. } | Phase::RoleSwitch => None,
        Phase::Briefing { ready } => {
            let waiting: Vec<usize> = (0..2).filter(|&i| !ready[i]).collect();
            let slot = if waiting.len() == 2 { waiting[rng.random_range(0..2)] } else { *waiting.first()? };
            let slot = if slot == 0 { PlayerSlot::A } else { PlayerSlot::B };
            mv(at, slot.into(), Input::Ready)
        }
        Phase::AnswererReview => mv(at, a, Input::Ready),
        Phase::Conveying { letter, step } => match step {
            ConveyStep::AwaitCaptureTrigger => mv(at, q, Input::TriggerCapture),
            ConveyStep::Countdown { deadline_ms } => mv(deadline_ms.max(now_ms), Actor::System, Input::Tick),
            ConveyStep::Capturing => None,
            ConveyStep::AwaitApproval => {
                let input = if rng.random_bool(policy.reject_rate) { Input::RejectCapture } else { Input::ApproveCapture };
                mv(at, q, input)
            }
            ConveyStep::AnswererMarking => {
                let id = state.word.as_ref()?.letter_ids.get(letter)?;
                let p = layout.letter_position(id).ok()?;
                let n = Normal::new(0.0, policy.mark_noise_mm.max(0.0)).expect("finite sd");
                let position_mm = [p.x + n.sample(rng), p.y + n.sample(rng)];
                mv(at, a, Input::Mark { position_mm })
            }
        },
        Phase::Answering { deadline_ms, outcome: None, .. } => {
            if rng.random_bool(policy.timeout_rate) || at >= deadline_ms {
                return mv(deadline_ms.max(now_ms), Actor::System, Input::Tick);
            }
            let word = state.word.as_ref()?.word();
            let text = if rng.random_bool(policy.correct_rate) { word } else { format!("{word}ー") };
            mv(at, a, Input::Answer { text })
        }
        Phase::Answering { .. } => None,
        Phase::Reveal { .. } => {
            let actor = if rng.random_bool(0.5) { q } else { a };
            mv(at, actor, Input::Proceed)
        }
        Phase::AwaitTrigger | Phase::Captured => mv(at, Actor::A, Input::TriggerCapture),
        Phase::Countdown { deadline_ms } => mv(deadline_ms.max(now_ms), Actor::System, Input::Tick),
        Phase::Capturing => None,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error("session stalled in {0}")]
    Stalled(String),
}

pub struct SimulatedSession<S: SessionSink> {
    pub runtime: SessionRuntime<S>,
    pub moves: Vec<Move>,
    pub end_ms: u64,
}

pub type SeatDrivers = [Option<crate::capture::Drivers>; 2];
pub type SeatTrackers = [Option<Box<dyn ReferenceTracker>>; 2];

/// Synthetic capture drivers and, for eye-tracker wearers, synthetic
/// trackers for every seat of `setup`.
pub fn synthetic_hardware(
    installation: &Installation,
    setup: &SessionSetup,
    drivers: &DriverConfig,
    tracker: Option<&EyeTrackerModel>,
) -> Result<(SeatDrivers, SeatTrackers), CaptureError> {
    let mut d: SeatDrivers = [None, None];
    let mut t: SeatTrackers = [None, None];
    for (i, seat) in setup.seats.iter().enumerate().take(2) {
        let slot = if i == 0 { PlayerSlot::A } else { PlayerSlot::B };
        let camera = installation.camera_for(slot).ok_or(CaptureError::NoCamera(crate::capture::side_of(slot)))?;
        d[i] = Some(build_drivers(drivers, camera, seed::derive(setup.rng_seed, "drivers", i as u64))?);
        if let (Some(model), true) = (tracker, seat.wearing_eyetracker) {
            t[i] = Some(Box::new(SyntheticEyeTracker::new(model.clone(), seed::derive(setup.rng_seed, "tracker", i as u64))));
        }
    }
    Ok((d, t))
}

/// Plays a whole session with synthetic hardware and simulated players.
pub fn simulate_session<S: SessionSink>(
    installation: Arc<Installation>,
    setup: SessionSetup,
    drivers: &DriverConfig,
    tracker: Option<&EyeTrackerModel>,
    policy: &PlayerPolicy,
    sink: S,
    start_ms: u64,
) -> Result<SimulatedSession<S>, SimError> {
    let (d, t) = synthetic_hardware(&installation, &setup, drivers, tracker)?;
    let mut rng = seed::rng(seed::derive(setup.rng_seed, "players", 0));
    let layout = installation.layout.clone();
    let (mut runtime, _) = SessionRuntime::start(installation, setup, d, t, sink, start_ms)?;
    let mut now = start_ms;
    let mut moves = Vec::new();
    while !runtime.session().phase().is_finished() {
        let state = runtime.session().state();
        let Some(m) = next_move(state, &layout, now, policy, &mut rng) else {
            return Err(SimError::Stalled(state.phase.name().into()));
        };
        now = m.at_ms;
        if m.input == Input::Tick {
            runtime.tick(now);
        } else {
            runtime.handle(m.actor, m.input.clone(), now)?;
        }
        moves.push(m);
    }
    Ok(SimulatedSession { runtime, moves, end_ms: now })
}

/// Labeled samples with matching eye-tracker records, without images, for
/// statistical checks of the evaluation pipeline. Subjects sit at the front
/// camera's default position with head jitter.
pub fn synthetic_condition(
    n: usize,
    participants: usize,
    mode: Mode,
    tracker: &EyeTrackerModel,
    layout: &BoardLayout,
    camera: &CameraCalibration,
    seed_value: u64,
) -> (Vec<GazeSample>, Vec<EvalRecord>) {
    let mut rng = seed::rng(seed::derive(seed_value, "condition", mode as u64));
    let mut et = SyntheticEyeTracker::new(tracker.clone(), seed::derive(seed_value, "condition-tracker", mode as u64));
    let jitter = Normal::new(0.0, 15.0).expect("finite sd");
    let session = SessionId::new(format!("sim-{mode}"));
    let mut samples = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    while samples.len() < n {
        let i = samples.len();
        let sample_id = SampleId::new(format!("{session}-{i:04}"));
        let eye = Vec3::new(jitter.sample(&mut rng), -120.0 + jitter.sample(&mut rng), 500.0 + jitter.sample(&mut rng));
        let (letter_id, stimulus, target) = match mode {
            Mode::Gamified => {
                let cell = &layout.cells()[rng.random_range(0..layout.cells().len())];
                let id: LetterId = cell.id.clone();
                let p = layout.letter_position(&id).expect("cell on board");
                (Some(id), None, p)
            }
            Mode::Standard => {
                let p = [rng.random_range(-300.0..300.0), rng.random_range(-150.0..150.0)];
                (None, Some(p), Vec3::new(p[0], p[1], 0.0))
            }
        };
        let Some(record) = et.observe(&sample_id, &eye, &target) else { continue };
        let eye_cam = camera.extrinsics.transform(&eye);
        let label = gaze_label(&camera.extrinsics, &eye_cam, &target).expect("finite geometry");
        let (pitch, yaw) = vector_to_pitchyaw(&label);
        let (image_path, normalized_image_path) = image_paths(&sample_id);
        samples.push(GazeSample {
            sample_id,
            session_id: session.clone(),
            participant_id: ParticipantId::new(format!("sim{:03}", i % participants.max(1))),
            mode,
            letter_id,
            stimulus_xy_mm: stimulus,
            label_pitch_rad: pitch,
            label_yaw_rad: yaw,
            label_vec_xyz: [label.x, label.y, label.z],
            estimator_vec_xyz: None,
            wearing_eyetracker: true,
            image_path,
            normalized_image_path,
            captured_at_ms: i as u64,
            approved_at_ms: Some(i as u64),
        });
        records.push(record);
    }
    (samples, records)
}
