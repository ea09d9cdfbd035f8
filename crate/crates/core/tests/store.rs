use std::collections::BTreeSet;
use std::path::Path;

use gazeboard_core::board_geometry::BoardLayout;
use gazeboard_core::capture::{image_paths, GazeSample};
use gazeboard_core::engine::{Actor, EventKind, SessionEvent};
use gazeboard_core::ids::{LetterId, Mode, ParticipantId, SampleId, SessionId};
use gazeboard_core::normalization::NormalizationParams;
use gazeboard_core::store::{
    export_dataset, fine_tune_draws, import_dataset, make_fold_split, read_manifest, AppendOutcome, ExportFilter,
    SessionSink, SessionStatus, Store, StoreError, StoreOptions,
};
use gazeboard_core::seed;
use image::GrayImage;
use rand::Rng;

fn options() -> StoreOptions {
    StoreOptions { sync: false, id_salt: Some(42) }
}

fn new_store(root: &Path) -> Store {
    Store::create(root, &BoardLayout::gojuon(), &NormalizationParams::default(), options()).unwrap()
}

fn sample(session: &SessionId, participant: &ParticipantId, seq: u32, wearing: bool) -> GazeSample {
    let id = SampleId::new(format!("{session}-{seq:03}"));
    let (image_path, normalized_image_path) = image_paths(&id);
    GazeSample {
        sample_id: id,
        session_id: session.clone(),
        participant_id: participant.clone(),
        mode: Mode::Gamified,
        letter_id: Some(LetterId::new(format!("r{}c{}", seq % 5, seq % 10))),
        stimulus_xy_mm: None,
        label_pitch_rad: 0.01 * seq as f64,
        label_yaw_rad: -0.02,
        label_vec_xyz: [0.0, 0.6, -0.8],
        estimator_vec_xyz: Some([0.0, 0.0, -1.0]),
        wearing_eyetracker: wearing,
        image_path,
        normalized_image_path,
        captured_at_ms: 1000 + u64::from(seq),
        approved_at_ms: Some(1500 + u64::from(seq)),
    }
}

fn tiny(v: u8) -> GrayImage {
    GrayImage::from_pixel(4, 3, image::Luma([v]))
}

#[test]
fn append_sample_rules() {
    let dir = tempfile::tempdir().unwrap();
    let store = new_store(dir.path());
    let p = store.register_participant(false, false, 0).unwrap();
    let sid = SessionId::new("s1");
    let mut w = store.open_session(&sid, Mode::Gamified, std::slice::from_ref(&p), 0).unwrap();
    let s = sample(&sid, &p, 1, false);
    // images not written yet
    assert!(matches!(w.append_sample(&s), Err(StoreError::Validation(_))));
    assert_eq!(w.persist_capture(&s, &tiny(1), &tiny(2)).unwrap(), AppendOutcome::Appended);
    assert_eq!(w.persist_capture(&s, &tiny(1), &tiny(2)).unwrap(), AppendOutcome::Duplicate);
    assert_eq!(store.read_samples(&sid).unwrap(), std::slice::from_ref(&s));
    let mut bad = sample(&sid, &p, 2, false);
    bad.label_vec_xyz = [0.0, 0.0, 2.0];
    assert!(matches!(w.persist_capture(&bad, &tiny(1), &tiny(2)), Err(StoreError::Validation(_))));
    let mut wrong_mode = sample(&sid, &p, 3, false);
    wrong_mode.stimulus_xy_mm = Some([0.0, 0.0]);
    assert!(matches!(w.persist_capture(&wrong_mode, &tiny(1), &tiny(2)), Err(StoreError::Validation(_))));

    assert!(matches!(store.open_session(&sid, Mode::Gamified, std::slice::from_ref(&p), 0), Err(StoreError::SessionExists(_))));
    assert!(matches!(store.resume_session(&sid), Err(StoreError::SessionExists(_))));
    assert!(matches!(
        store.open_session(&"s2".into(), Mode::Gamified, &["ghost".into()], 0),
        Err(StoreError::UnknownParticipant(_))
    ));
    w.finish(SessionStatus::Completed, 9).unwrap();
    drop(w);

    // reopen from disk
    let again = Store::open(dir.path(), options()).unwrap();
    assert_eq!(again.session(&sid).unwrap().status, SessionStatus::Completed);
    assert_eq!(again.participants().len(), 1);
    let mut w = again.resume_session(&sid).unwrap();
    assert_eq!(w.sample_count(), 1);
    assert_eq!(w.persist_capture(&s, &tiny(1), &tiny(2)).unwrap(), AppendOutcome::Duplicate);
    let img = image::open(again.resolve(&sid, &s.normalized_image_path)).unwrap().to_luma8();
    assert_eq!(img, tiny(2));
}

#[test]
fn participant_tokens_are_opaque_and_unique() {
    let dir = tempfile::tempdir().unwrap();
    let store = new_store(dir.path());
    let ids: BTreeSet<ParticipantId> = (0..200).map(|_| store.register_participant(false, false, 0).unwrap()).collect();
    assert_eq!(ids.len(), 200);
    assert!(ids.iter().all(|p| p.as_str().len() == 13 && p.as_str().starts_with('p')));
}

fn event(i: u64) -> SessionEvent {
    SessionEvent { timestamp_ms: i * 10, actor: Actor::A, kind: EventKind::MarkRecorded { position_mm: [i as f64, 0.5] } }
}

#[test]
fn crash_prefix_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let store = new_store(dir.path());
    let p = store.register_participant(false, false, 0).unwrap();
    let sid = SessionId::new("crash");
    let mut w = store.open_session(&sid, Mode::Gamified, std::slice::from_ref(&p), 0).unwrap();
    let n = 25;
    for i in 0..n {
        w.append_event(&event(i)).unwrap();
        w.persist_capture(&sample(&sid, &p, i as u32 + 1, false), &tiny(1), &tiny(2)).unwrap();
    }
    drop(w);
    let events_path = store.session_dir(&sid).join("events.jsonl");
    let samples_path = store.session_dir(&sid).join("samples.jsonl");
    let full_events = std::fs::read(&events_path).unwrap();
    let full_samples = std::fs::read(&samples_path).unwrap();
    let line_ends = |b: &[u8]| b.iter().enumerate().filter(|(_, &c)| c == b'\n').map(|(i, _)| i + 1).collect::<Vec<_>>();
    let (ev_ends, sa_ends) = (line_ends(&full_events), line_ends(&full_samples));

    let mut rng = seed::rng(3);
    for _ in 0..60 {
        let cut_e = rng.random_range(0..=full_events.len());
        let cut_s = rng.random_range(0..=full_samples.len());
        std::fs::write(&events_path, &full_events[..cut_e]).unwrap();
        std::fs::write(&samples_path, &full_samples[..cut_s]).unwrap();
        let reopened = Store::open(dir.path(), options()).unwrap();
        let events = reopened.read_events(&sid).unwrap();
        let samples = reopened.read_samples(&sid).unwrap();
        let whole_e = ev_ends.iter().filter(|&&e| e <= cut_e).count();
        let whole_s = sa_ends.iter().filter(|&&e| e <= cut_s).count();
        assert_eq!(events, (0..whole_e as u64).map(event).collect::<Vec<_>>());
        assert_eq!(samples.len(), whole_s);
        for (i, s) in samples.iter().enumerate() {
            assert_eq!(s, &sample(&sid, &p, i as u32 + 1, false));
        }
        // a writer continues cleanly after the torn tail
        let mut w = reopened.resume_session(&sid).unwrap();
        w.append_event(&event(99)).unwrap();
        drop(w);
        let events = reopened.read_events(&sid).unwrap();
        assert_eq!(events.len(), whole_e + 1);
        assert_eq!(events.last().unwrap(), &event(99));
    }
}

/// One session per pair; `wearers` of the `n` participants wear the eye tracker.
fn populated_store(root: &Path, n: usize, wearers: usize) -> (Store, ParticipantId) {
    let store = new_store(root);
    let people: Vec<ParticipantId> = (0..n).map(|i| store.register_participant(i < wearers, false, 0).unwrap()).collect();
    let staff = store.register_participant(false, true, 0).unwrap();
    for (pair, chunk) in people.chunks(2).enumerate() {
        let partner = chunk.get(1).unwrap_or(&staff);
        let players = [chunk[0].clone(), partner.clone()];
        let sid = SessionId::new(format!("g{pair:02}"));
        let mut w = store.open_session(&sid, Mode::Gamified, &players, 0).unwrap();
        let mut seq = 0;
        for player in &players {
            let wearing = store.participant(player).unwrap().wearing_eyetracker;
            for _ in 0..3 {
                seq += 1;
                w.persist_capture(&sample(&sid, player, seq, wearing), &tiny(seq as u8), &tiny(100 + seq as u8)).unwrap();
            }
        }
        w.finish(SessionStatus::Completed, 10).unwrap();
    }
    (store, staff)
}

#[test]
fn export_filters_and_staff_exclusion() {
    let dir = tempfile::tempdir().unwrap();
    let (store, staff) = populated_store(&dir.path().join("store"), 7, 3);
    let all = export_dataset(&store, &ExportFilter::all(), &dir.path().join("all"), "d", 0).unwrap();
    assert_eq!(all.samples.len(), 21);
    assert!(all.samples.iter().all(|s| s.participant_id != staff));
    assert_eq!(all.participants.len(), 7);
    let default = export_dataset(&store, &ExportFilter::default(), &dir.path().join("train"), "d", 0).unwrap();
    assert_eq!(default.samples.len(), 12);
    let et = export_dataset(&store, &ExportFilter::eyetracker_only(), &dir.path().join("et"), "d", 0).unwrap();
    assert_eq!(et.samples.len(), 9);
    assert_eq!(et.eyetracker_sample_count(), 9);

    // every image path resolves inside the export
    for s in &all.samples {
        assert!(dir.path().join("all").join(&s.normalized_image_path).is_file());
        assert!(dir.path().join("all").join(&s.image_path).is_file());
    }
    let csv = std::fs::read_to_string(dir.path().join("all/labels.csv")).unwrap();
    assert_eq!(csv.lines().count(), 22);
    assert!(csv.starts_with("sample_id,session_id,participant_id,mode,letter_id,"));

    let standard_only = ExportFilter { mode: Some(Mode::Standard), ..ExportFilter::all() };
    assert!(matches!(export_dataset(&store, &standard_only, &dir.path().join("none"), "d", 0), Err(StoreError::EmptyExport)));
}

#[test]
fn export_import_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (store, _) = populated_store(&dir.path().join("store"), 6, 2);
    let first = dir.path().join("export1");
    export_dataset(&store, &ExportFilter::all(), &first, "ds", 123).unwrap();
    let imported = import_dataset(&first, &dir.path().join("imported"), options()).unwrap();
    let second = dir.path().join("export2");
    export_dataset(&imported, &ExportFilter::all(), &second, "ds", 123).unwrap();
    let a = std::fs::read(first.join("manifest.json")).unwrap();
    let b = std::fs::read(second.join("manifest.json")).unwrap();
    assert_eq!(a, b);
    assert_eq!(std::fs::read(first.join("labels.csv")).unwrap(), std::fs::read(second.join("labels.csv")).unwrap());
    let m = read_manifest(&second).unwrap();
    for s in &m.samples {
        let x = image::open(first.join(&s.image_path)).unwrap().to_luma8();
        let y = image::open(second.join(&s.image_path)).unwrap().to_luma8();
        assert_eq!(x, y);
    }
}

#[test]
fn folds_and_draws_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (store, _) = populated_store(&dir.path().join("store"), 12, 5);
    let m = export_dataset(&store, &ExportFilter::all(), &dir.path().join("x"), "d", 0).unwrap();
    let split = make_fold_split(&m.participants, 3, 8).unwrap();
    let mut counts = split.eyetracker_counts(&m.participants);
    counts.sort();
    assert_eq!(counts, [1, 2, 2]);
    let draws = fine_tune_draws(&split, &m.samples, 5);
    assert_eq!(draws.len(), 3);
    for (fold, d) in draws.iter().enumerate() {
        assert_eq!(d.len(), 5);
        for id in d {
            let s = m.samples.iter().find(|s| &s.sample_id == id).unwrap();
            assert_eq!(split.fold_of(&s.participant_id), Some(fold));
        }
    }
    assert_eq!(draws, fine_tune_draws(&split, &m.samples, 5));
    // fewer samples than requested: take them all
    assert_eq!(fine_tune_draws(&split, &m.samples, 100)[0].len(), split.members(0).len() * 3);
}
