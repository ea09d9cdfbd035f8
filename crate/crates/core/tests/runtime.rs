use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use gazeboard_core::board_geometry::{BoardLayout, Calibration};
use gazeboard_core::capture::{DriverConfig, GazeSample, LabelOrigin};
use gazeboard_core::dictionary::Dictionary;
use gazeboard_core::engine::{CaptureTarget, EventKind, GameConfig, SessionEvent};
use gazeboard_core::eval::EvalRecord;
use gazeboard_core::ids::{Mode, ParticipantId, SampleId, SessionId};
use gazeboard_core::normalization::NormalizationParams;
use gazeboard_core::runtime::{Installation, Seat, SessionSetup};
use gazeboard_core::sim::{simulate_session, EyeTrackerModel, PlayerPolicy};
use gazeboard_core::store::{AppendOutcome, MemorySink, SessionSink, SessionStatus, StoreError};
use image::GrayImage;

fn installation() -> Arc<Installation> {
    Arc::new(Installation {
        layout: BoardLayout::gojuon(),
        dictionary: Dictionary::builtin(),
        calibration: Calibration::default_installation(),
        normalization: NormalizationParams::default(),
        label_origin: LabelOrigin::FaceCenter,
    })
}

fn setup(mode: Mode, seed: u64, wearing: [bool; 2]) -> SessionSetup {
    let n = if mode == Mode::Gamified { 2 } else { 1 };
    SessionSetup {
        session_id: SessionId::new(format!("s{seed}")),
        mode,
        seats: (0..n)
            .map(|i| Seat { participant_id: ParticipantId::new(format!("p{seed}-{i}")), wearing_eyetracker: wearing[i] })
            .collect(),
        config: GameConfig::default(),
        rng_seed: seed,
    }
}

fn approvals(events: &[SessionEvent]) -> BTreeSet<SampleId> {
    events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::CaptureApproved { sample_id } => Some(sample_id.clone()),
            _ => None,
        })
        .collect()
}

#[test]
fn gamified_session_persists_one_sample_per_hidden_letter() {
    for (seed, policy) in [(1, PlayerPolicy::default()), (2, PlayerPolicy::erratic()), (3, PlayerPolicy::erratic())] {
        let sim = simulate_session(
            installation(),
            setup(Mode::Gamified, seed, [true, false]),
            &DriverConfig::default(),
            Some(&EyeTrackerModel::default()),
            &policy,
            MemorySink::default(),
            0,
        )
        .unwrap();
        let rt = &sim.runtime;
        let state = rt.session().state();
        assert!(rt.storage_failures().is_empty());
        let sink = rt.sink();
        assert_eq!(sink.status, Some(SessionStatus::Completed));
        assert_eq!(sink.events, rt.session().events());

        let mut per_word: BTreeMap<u32, BTreeSet<usize>> = BTreeMap::new();
        for a in &state.approved {
            let CaptureTarget::Letter { word_index, letter_index, .. } = &a.target else { panic!() };
            assert!(per_word.entry(*word_index).or_default().insert(*letter_index));
        }
        assert_eq!(per_word.len(), 2);
        assert!(per_word.values().all(|l| l.len() == 3));

        let approved = approvals(&sink.events);
        assert_eq!(sink.samples.len(), 6);
        for s in &sink.samples {
            assert!(approved.contains(&s.sample_id), "{} persisted without approval", s.sample_id);
            assert!(s.approved_at_ms.is_some());
            s.validate().unwrap();
        }
        // only the wearer's captures carry eye-tracker records
        let wearer = &rt.setup().seats[0].participant_id;
        let wearer_samples: BTreeSet<_> =
            sink.samples.iter().filter(|s| &s.participant_id == wearer).map(|s| s.sample_id.clone()).collect();
        let recorded: BTreeSet<_> = sink.eval_records.iter().map(|r| r.sample_id.clone()).collect();
        assert_eq!(recorded, wearer_samples);
        assert_eq!(wearer_samples.len(), 3);
    }
}

#[test]
fn standard_session_collects_every_stimulus() {
    let sim = simulate_session(
        installation(),
        setup(Mode::Standard, 7, [true, false]),
        &DriverConfig::default(),
        Some(&EyeTrackerModel::default()),
        &PlayerPolicy::default(),
        MemorySink::default(),
        0,
    )
    .unwrap();
    let sink = sim.runtime.sink();
    assert_eq!(sink.samples.len(), 50);
    assert_eq!(sink.eval_records.len(), 50);
    assert!(sink.samples.iter().all(|s| s.mode == Mode::Standard && s.stimulus_xy_mm.is_some()));
}

#[test]
fn same_seed_same_log_and_samples() {
    let run = || {
        simulate_session(
            installation(),
            setup(Mode::Gamified, 11, [false, true]),
            &DriverConfig::default(),
            None,
            &PlayerPolicy::erratic(),
            MemorySink::default(),
            1_000,
        )
        .unwrap()
        .runtime
        .into_sink()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.events, b.events);
    assert_eq!(a.samples, b.samples);
}

/// Fails the `fail_at`-th sample write (0-based) and every event write
/// listed in `fail_events`.
#[derive(Default)]
struct FlakySink {
    inner: MemorySink,
    fail_at: Option<usize>,
    fail_events: BTreeSet<usize>,
    persist_calls: usize,
    event_calls: usize,
}

impl SessionSink for FlakySink {
    fn append_event(&mut self, event: &SessionEvent) -> Result<(), StoreError> {
        self.event_calls += 1;
        if self.fail_events.contains(&(self.event_calls - 1)) {
            return Err(StoreError::Validation("disk full".into()));
        }
        self.inner.append_event(event)
    }

    fn persist_capture(&mut self, s: &GazeSample, i: &GrayImage, n: &GrayImage) -> Result<AppendOutcome, StoreError> {
        self.persist_calls += 1;
        if self.fail_at == Some(self.persist_calls - 1) {
            return Err(StoreError::Validation("disk full".into()));
        }
        self.inner.persist_capture(s, i, n)
    }

    fn append_eval_record(&mut self, r: &EvalRecord) -> Result<(), StoreError> {
        self.inner.append_eval_record(r)
    }

    fn finish(&mut self, status: SessionStatus, now_ms: u64) -> Result<(), StoreError> {
        self.inner.finish(status, now_ms)
    }
}

#[test]
fn storage_failure_flags_sample_and_game_continues() {
    let sink = FlakySink { fail_at: Some(1), fail_events: [4, 5].into(), ..Default::default() };
    let sim = simulate_session(
        installation(),
        setup(Mode::Gamified, 5, [true, true]),
        &DriverConfig::default(),
        Some(&EyeTrackerModel::default()),
        &PlayerPolicy::default(),
        sink,
        0,
    )
    .unwrap();
    let rt = &sim.runtime;
    assert!(rt.session().phase().is_finished());
    let failures = rt.storage_failures();
    let lost: Vec<_> = failures.iter().filter_map(|f| f.sample_id.clone()).collect();
    assert_eq!(lost.len(), 1);
    assert_eq!(failures.len(), 3);
    assert_eq!(rt.persisted_count(), 5);
    let sink = &rt.sink().inner;
    assert_eq!(sink.samples.len(), 5);
    assert!(!sink.samples.iter().any(|s| s.sample_id == lost[0]));
    assert!(!sink.eval_records.iter().any(|r| r.sample_id == lost[0]));
    // failed event writes are retried, so the stored log is still complete
    assert_eq!(sink.events, rt.session().events());
}

#[test]
fn abandon_finishes_once() {
    use gazeboard_core::runtime::SessionRuntime;
    let inst = installation();
    let (mut rt, _) =
        SessionRuntime::start(inst, setup(Mode::Gamified, 9, [false, false]), [None, None], [None, None], MemorySink::default(), 0)
            .unwrap();
    assert_eq!(rt.abandon(10).len(), 1);
    assert!(rt.abandon(20).is_empty());
    assert_eq!(rt.sink().status, Some(SessionStatus::Abandoned));
    assert_eq!(rt.sink().events.len(), rt.session().events().len());
}
