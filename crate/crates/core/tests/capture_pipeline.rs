use gazeboard_core::board_geometry::{
    angular_error_deg, BoardLayout, BoardSide, CameraCalibration, CameraIntrinsics, CameraPose, Calibration,
};
use gazeboard_core::capture::{
    build_drivers, capture, CaptureContext, CaptureError, CaptureOutcome, DriverConfig, Drivers, EstimatorInput,
    Frame, GazeEstimate, GazeEstimator, LabelOrigin, SyntheticDetector, SyntheticEstimator, SyntheticFrameSource,
    SyntheticScene, SyntheticTruth,
};
use gazeboard_core::engine::CaptureTarget;
use gazeboard_core::ids::{LetterId, Mode, ParticipantId, SampleId, SessionId};
use gazeboard_core::normalization::{normalize_sample, NormalizationParams};
use gazeboard_core::{seed, Mat3, Vec3};
use rand::Rng;

fn fronto_parallel_camera() -> CameraCalibration {
    CameraCalibration {
        id: "front".into(),
        side: BoardSide::Front,
        intrinsics: CameraIntrinsics::centered(600.0, 640, 480).unwrap(),
        extrinsics: CameraPose::new(Mat3::identity(), Vec3::new(0.0, 0.0, 600.0)).unwrap(),
    }
}

fn still_scene() -> SyntheticScene {
    SyntheticScene { face_center_board_mm: [0.0, 0.0, 500.0], head_jitter_mm: 0.0, ..Default::default() }
}

struct Fixture {
    session: SessionId,
    participant: ParticipantId,
    layout: BoardLayout,
    camera: CameraCalibration,
    params: NormalizationParams,
}

impl Fixture {
    fn new(camera: CameraCalibration) -> Self {
        Self {
            session: "s1".into(),
            participant: "p1".into(),
            layout: BoardLayout::gojuon(),
            camera,
            params: NormalizationParams::default(),
        }
    }

    fn ctx(&self, mode: Mode, origin: LabelOrigin) -> CaptureContext<'_> {
        CaptureContext {
            session_id: &self.session,
            participant_id: &self.participant,
            mode,
            wearing_eyetracker: false,
            layout: &self.layout,
            camera: &self.camera,
            normalization: &self.params,
            label_origin: origin,
        }
    }

    fn drivers(&self, scene: SyntheticScene, noise_deg: f64, seed: u64) -> Drivers {
        let config = DriverConfig { scene, estimator_noise_deg: noise_deg, ..Default::default() };
        build_drivers(&config, &self.camera, seed).unwrap()
    }
}

fn center_letter() -> CaptureTarget {
    // r2c4 sits at x = -30; the board center lies between two cells, so use a stimulus at the origin
    CaptureTarget::Stimulus { index: 0, position_mm: [0.0, 0.0] }
}

fn sample(outcome: CaptureOutcome) -> Box<gazeboard_core::capture::PendingCapture> {
    match outcome {
        CaptureOutcome::Sample(s) => s,
        CaptureOutcome::NoFace { .. } => panic!("expected a face"),
    }
}

#[test]
fn board_center_label_directions() {
    let f = Fixture::new(fronto_parallel_camera());
    let mut d = f.drivers(still_scene(), 2.0, 1);
    let cam = sample(capture(&f.ctx(Mode::Standard, LabelOrigin::Camera), &"s1-001".into(), &center_letter(), 10, &mut d).unwrap());
    assert_eq!(cam.sample.label_vec(), Vec3::new(0.0, 0.0, 1.0));

    let face = sample(capture(&f.ctx(Mode::Standard, LabelOrigin::FaceCenter), &"s1-002".into(), &center_letter(), 10, &mut d).unwrap());
    assert_eq!(face.sample.label_vec(), Vec3::new(0.0, 0.0, -1.0));
    assert_eq!((face.sample.label_pitch_rad, face.sample.label_yaw_rad), (0.0, 0.0));
    let est = face.sample.estimator_vec().unwrap();
    let err = angular_error_deg(&est, &face.sample.label_vec()).unwrap();
    assert!(err < 10.0, "{err}");
    assert_eq!(face.sample.stimulus_xy_mm, Some([0.0, 0.0]));
    assert_eq!(face.sample.letter_id, None);
    assert_eq!(face.sample.approved_at_ms, None);
}

#[test]
fn absent_face_gives_no_face_outcome() {
    let f = Fixture::new(fronto_parallel_camera());
    let scene = SyntheticScene { absent_at: [0].into(), ..still_scene() };
    let mut d = f.drivers(scene, 2.0, 1);
    let target = CaptureTarget::Letter { letter_id: LetterId::new("r0c0"), word_index: 0, letter_index: 0 };
    let out = capture(&f.ctx(Mode::Gamified, LabelOrigin::FaceCenter), &"s1-001".into(), &target, 0, &mut d).unwrap();
    assert!(matches!(out, CaptureOutcome::NoFace { .. }));
    // the next grab has a face again
    let out = capture(&f.ctx(Mode::Gamified, LabelOrigin::FaceCenter), &"s1-002".into(), &target, 0, &mut d).unwrap();
    let s = sample(out);
    assert_eq!(s.sample.letter_id, Some(LetterId::new("r0c0")));
    assert_eq!(s.sample.stimulus_xy_mm, None);
}

#[test]
fn blink_frames_still_detected() {
    let f = Fixture::new(fronto_parallel_camera());
    let scene = SyntheticScene { blink_at: [0].into(), ..still_scene() };
    let mut d = f.drivers(scene, 2.0, 1);
    let s = sample(capture(&f.ctx(Mode::Standard, LabelOrigin::FaceCenter), &"s1-001".into(), &center_letter(), 0, &mut d).unwrap());
    assert!(s.truth.as_ref().unwrap().blink);
}

#[test]
fn zero_noise_labels_match_true_gaze() {
    let calib = Calibration::default_installation();
    for cam in calib.cameras {
        let f = Fixture::new(cam);
        let mut d = f.drivers(SyntheticScene::default(), 0.0, 3);
        let mut rng = seed::rng(4);
        for i in 0..60 {
            let cell = &f.layout.cells()[rng.random_range(0..f.layout.cells().len())];
            let target = CaptureTarget::Letter { letter_id: cell.id.clone(), word_index: 0, letter_index: 0 };
            let id = SampleId::new(format!("s1-{i:03}"));
            let s = sample(capture(&f.ctx(Mode::Gamified, LabelOrigin::FaceCenter), &id, &target, 0, &mut d).unwrap());
            let truth = s.truth.as_ref().unwrap();
            assert!(angular_error_deg(&s.sample.label_vec(), &truth.true_gaze_camera).unwrap() < 1e-9);
            assert!((s.sample.label_vec().norm() - 1.0).abs() < 1e-12);
            // estimator has no noise either
            let est = s.sample.estimator_vec().unwrap();
            assert!(angular_error_deg(&est, &truth.true_gaze_camera).unwrap() < 1e-6);
        }
    }
}

#[test]
fn normalized_image_is_centered_on_face() {
    let f = Fixture::new(Calibration::default_installation().cameras[0].clone());
    let mut d = f.drivers(SyntheticScene { pixel_noise: 0.0, ..Default::default() }, 0.0, 9);
    let target = CaptureTarget::Letter { letter_id: LetterId::new("r2c5"), word_index: 0, letter_index: 0 };
    let s = sample(capture(&f.ctx(Mode::Gamified, LabelOrigin::FaceCenter), &"s1-001".into(), &target, 0, &mut d).unwrap());
    let n = f.params.size_norm;
    assert_eq!(s.normalized_image.dimensions(), (n, n));
    // skin just below the normalized center, background in the corner
    let below = s.normalized_image.get_pixel(n / 2, n / 2 + 30)[0];
    assert_eq!(below, 170);
    assert_eq!(s.normalized_image.get_pixel(2, 2)[0], 30);
}

struct Failing;

impl GazeEstimator for Failing {
    fn estimate(&mut self, _: &EstimatorInput<'_>) -> Result<GazeEstimate, CaptureError> {
        Err(CaptureError::Estimator("model not loaded".into()))
    }
}

#[test]
fn estimator_failure_keeps_sample() {
    let f = Fixture::new(fronto_parallel_camera());
    let mut d = Drivers {
        frame_source: Box::new(SyntheticFrameSource::new(still_scene(), f.camera.clone(), 0)),
        detector: Box::new(SyntheticDetector::new(f.camera.intrinsics)),
        estimator: Some(Box::new(Failing)),
    };
    let s = sample(capture(&f.ctx(Mode::Standard, LabelOrigin::FaceCenter), &"s1-001".into(), &center_letter(), 0, &mut d).unwrap());
    assert_eq!(s.sample.estimator_vec_xyz, None);
    s.sample.validate().unwrap();
}

#[test]
fn unknown_driver_rejected() {
    let f = Fixture::new(fronto_parallel_camera());
    let config = DriverConfig { frame_source: "usb0".into(), ..Default::default() };
    assert!(matches!(build_drivers(&config, &f.camera, 0), Err(CaptureError::UnknownDriver(_))));
}

#[test]
fn estimator_noise_calibration() {
    // 10,000 estimates at 5 degrees: mean angular error must lie in [4, 6]
    let k = CameraIntrinsics::centered(600.0, 8, 8).unwrap();
    let params = NormalizationParams::default();
    let mut est = SyntheticEstimator::new(5.0, 0.0, 2024);
    let mut rng = seed::rng(5);
    let img = image::GrayImage::new(8, 8);
    let mut total = 0.0;
    let n = 10_000;
    for i in 0..n {
        let face = Vec3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(400.0..800.0));
        let gaze = (Vec3::new(rng.random_range(-200.0..200.0), rng.random_range(-200.0..200.0), 0.0) - face).normalize();
        let geometry = normalize_sample(&k, &params, &face, &gaze).unwrap();
        let truth = SyntheticTruth {
            face_present: true,
            blink: false,
            face_center_camera_mm: face,
            true_gaze_camera: gaze,
            grab_index: i,
        };
        let frame = Frame { camera_id: "c".into(), timestamp_ms: 0, image: img.clone(), truth: Some(truth) };
        let id = SampleId::new(format!("x-{i}"));
        let e = est
            .estimate(&EstimatorInput { sample_id: &id, frame: &frame, normalized_image: &img, geometry: &geometry })
            .unwrap();
        total += angular_error_deg(&e.gaze_norm, &geometry.gaze_norm).unwrap();
    }
    let mean = total / n as f64;
    assert!((4.0..=6.0).contains(&mean), "{mean}");
}

#[test]
fn outliers_come_from_frontal_hemisphere() {
    let k = CameraIntrinsics::centered(600.0, 8, 8).unwrap();
    let params = NormalizationParams::default();
    let mut est = SyntheticEstimator::new(1.0, 1.0, 7);
    let img = image::GrayImage::new(8, 8);
    let face = Vec3::new(0.0, 0.0, 600.0);
    let gaze = Vec3::new(0.0, 0.0, -1.0);
    let geometry = normalize_sample(&k, &params, &face, &gaze).unwrap();
    let truth = SyntheticTruth { face_present: true, blink: false, face_center_camera_mm: face, true_gaze_camera: gaze, grab_index: 0 };
    let frame = Frame { camera_id: "c".into(), timestamp_ms: 0, image: img.clone(), truth: Some(truth) };
    let mut large = 0;
    for i in 0..500 {
        let id = SampleId::new(format!("o-{i}"));
        let e = est.estimate(&EstimatorInput { sample_id: &id, frame: &frame, normalized_image: &img, geometry: &geometry }).unwrap();
        assert!(e.gaze_norm.z <= 0.0);
        if angular_error_deg(&e.gaze_norm, &gaze).unwrap() > 20.0 {
            large += 1;
        }
    }
    assert!(large > 400, "{large}");
}
