//! Capture at the end of a countdown: frame grab, face detection, gaze
//! label, normalization and optional estimator feedback.
//!
//! Drivers are trait objects so real devices can be added later; the
//! [`synthetic`] drivers make the whole system run without hardware.

pub mod synthetic;

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::board_geometry::{
    gaze_label, vector_to_pitchyaw, BoardLayout, BoardSide, CameraCalibration, GeometryError,
};
use crate::engine::{CaptureTarget, PlayerSlot};
use crate::ids::{LetterId, Mode, ParticipantId, SampleId, SessionId};
use crate::normalization::{normalize_sample, warp_image, NormalizationError, NormalizationParams, NormalizedSampleGeometry};
use crate::{Vec2, Vec3};

pub use synthetic::{SyntheticDetector, SyntheticEstimator, SyntheticFrameSource, SyntheticScene, SyntheticTruth};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CaptureError {
    #[error("frame source `{camera_id}` did not deliver within {deadline_ms} ms")]
    DriverTimeout { camera_id: String, deadline_ms: u64 },
    #[error("estimator failed: {0}")]
    Estimator(String),
    #[error("no camera calibrated for the {0:?} side")]
    NoCamera(BoardSide),
    #[error("unknown driver `{0}`")]
    UnknownDriver(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Normalization(#[from] NormalizationError),
    #[error("invalid sample: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSourceDescriptor {
    pub camera_id: String,
    pub width: u32,
    pub height: u32,
    pub deadline_ms: u64,
    /// Whether one instance may serve several sessions at once.
    pub reentrant: bool,
}

/// What the system expects the subject to look at. Real sources ignore it;
/// synthetic ones render it.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureCue {
    pub sample_id: SampleId,
    pub target_camera_mm: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub camera_id: String,
    pub timestamp_ms: u64,
    pub image: GrayImage,
    /// Ground truth attached by synthetic sources.
    pub truth: Option<SyntheticTruth>,
}

pub trait FrameSource: Send {
    fn descriptor(&self) -> FrameSourceDescriptor;
    fn grab(&mut self, cue: &CaptureCue, now_ms: u64) -> Result<Frame, CaptureError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceObservation {
    pub face_center_camera_mm: Vec3,
    pub face_distance_mm: f64,
    pub landmarks_px: Option<Vec<Vec2>>,
}

pub trait FaceDetector: Send {
    /// At most one primary face.
    fn detect(&mut self, frame: &Frame) -> Option<FaceObservation>;
}

pub struct EstimatorInput<'a> {
    pub sample_id: &'a SampleId,
    pub frame: &'a Frame,
    pub normalized_image: &'a GrayImage,
    pub geometry: &'a NormalizedSampleGeometry,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeEstimate {
    /// Unit vector in the normalized camera frame.
    pub gaze_norm: Vec3,
    pub confidence: f64,
}

pub trait GazeEstimator: Send {
    fn estimate(&mut self, input: &EstimatorInput<'_>) -> Result<GazeEstimate, CaptureError>;
}

/// Drivers for one camera.
pub struct Drivers {
    pub frame_source: Box<dyn FrameSource>,
    pub detector: Box<dyn FaceDetector>,
    pub estimator: Option<Box<dyn GazeEstimator>>,
}

/// Point the gaze label starts from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelOrigin {
    /// Detected face center.
    #[default]
    FaceCenter,
    /// Camera center, `(0, 0, 0)` in the camera frame.
    Camera,
}

/// One labeled capture, as stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub sample_id: SampleId,
    pub session_id: SessionId,
    pub participant_id: ParticipantId,
    pub mode: Mode,
    pub letter_id: Option<LetterId>,
    pub stimulus_xy_mm: Option<[f64; 2]>,
    /// Pitch/yaw of the label in the normalized frame.
    pub label_pitch_rad: f64,
    pub label_yaw_rad: f64,
    /// Unit label vector in the capturing camera's frame.
    pub label_vec_xyz: [f64; 3],
    /// Estimator output in the camera frame, if the estimator ran.
    pub estimator_vec_xyz: Option<[f64; 3]>,
    pub wearing_eyetracker: bool,
    /// Paths relative to the session directory.
    pub image_path: String,
    pub normalized_image_path: String,
    pub captured_at_ms: u64,
    pub approved_at_ms: Option<u64>,
}

impl GazeSample {
    pub fn label_vec(&self) -> Vec3 {
        Vec3::from(self.label_vec_xyz)
    }

    pub fn estimator_vec(&self) -> Option<Vec3> {
        self.estimator_vec_xyz.map(Vec3::from)
    }

    pub fn validate(&self) -> Result<(), CaptureError> {
        let fail = |m: &str| Err(CaptureError::Validation(format!("{}: {m}", self.sample_id)));
        if (self.label_vec().norm() - 1.0).abs() > 1e-9 {
            return fail("label vector is not unit length");
        }
        match (self.mode, &self.letter_id, &self.stimulus_xy_mm) {
            (Mode::Gamified, Some(_), None) | (Mode::Standard, None, Some(_)) => {}
            _ => return fail("exactly one of letter_id / stimulus_xy_mm must match the mode"),
        }
        if !(self.label_pitch_rad.is_finite() && self.label_yaw_rad.is_finite()) {
            return fail("non-finite pitch/yaw");
        }
        if let Some(e) = self.estimator_vec() {
            if (e.norm() - 1.0).abs() > 1e-6 {
                return fail("estimator vector is not unit length");
            }
        }
        if self.image_path.is_empty() || self.normalized_image_path.is_empty() {
            return fail("missing image path");
        }
        Ok(())
    }
}

/// A capture waiting for the questioner's decision; nothing is stored yet.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingCapture {
    pub sample: GazeSample,
    pub image: GrayImage,
    pub normalized_image: GrayImage,
    pub geometry: NormalizedSampleGeometry,
    pub estimate: Option<GazeEstimate>,
    /// Board-frame target the label points at.
    pub target_board_mm: Vec3,
    pub truth: Option<SyntheticTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CaptureOutcome {
    Sample(Box<PendingCapture>),
    NoFace { frame: Frame },
}

/// Session-level facts a capture needs.
pub struct CaptureContext<'a> {
    pub session_id: &'a SessionId,
    pub participant_id: &'a ParticipantId,
    pub mode: Mode,
    pub wearing_eyetracker: bool,
    pub layout: &'a BoardLayout,
    pub camera: &'a CameraCalibration,
    pub normalization: &'a NormalizationParams,
    pub label_origin: LabelOrigin,
}

pub fn side_of(slot: PlayerSlot) -> BoardSide {
    match slot {
        PlayerSlot::A => BoardSide::Front,
        PlayerSlot::B => BoardSide::Back,
    }
}

pub fn image_paths(sample_id: &SampleId) -> (String, String) {
    (format!("images/{sample_id}.png"), format!("images/{sample_id}_norm.png"))
}

pub fn target_board_mm(layout: &BoardLayout, target: &CaptureTarget) -> Result<Vec3, GeometryError> {
    match target {
        CaptureTarget::Letter { letter_id, .. } => layout.letter_position(letter_id),
        CaptureTarget::Stimulus { position_mm, .. } => Ok(BoardLayout::lift(Vec2::from(*position_mm))),
    }
}

/// Endpoint of the on-image gaze arrow in normalized image coordinates
/// (`[0, 1]²`, starting at the center).
pub fn gaze_arrow(gaze_norm: &Vec3) -> [f64; 2] {
    [0.5 + 0.4 * gaze_norm.x, 0.5 + 0.4 * gaze_norm.y]
}

/// Grabs a frame and builds a labeled sample, or reports that no face was
/// found. An estimator failure keeps the sample without estimator output.
pub fn capture(
    ctx: &CaptureContext<'_>,
    sample_id: &SampleId,
    target: &CaptureTarget,
    now_ms: u64,
    drivers: &mut Drivers,
) -> Result<CaptureOutcome, CaptureError> {
    let target_board = target_board_mm(ctx.layout, target)?;
    let pose = &ctx.camera.extrinsics;
    let cue = CaptureCue { sample_id: sample_id.clone(), target_camera_mm: pose.transform(&target_board) };
    let frame = drivers.frame_source.grab(&cue, now_ms)?;
    let Some(face) = drivers.detector.detect(&frame) else {
        return Ok(CaptureOutcome::NoFace { frame });
    };

    let origin = match ctx.label_origin {
        LabelOrigin::FaceCenter => face.face_center_camera_mm,
        LabelOrigin::Camera => Vec3::zeros(),
    };
    let label = gaze_label(pose, &origin, &target_board)?;
    let geometry = normalize_sample(&ctx.camera.intrinsics, ctx.normalization, &face.face_center_camera_mm, &label)?;
    let size = ctx.normalization.size_norm;
    let normalized_image = warp_image(&frame.image, &geometry.warp, size, size);

    let estimate = match drivers.estimator.as_mut() {
        Some(est) => {
            let input = EstimatorInput { sample_id, frame: &frame, normalized_image: &normalized_image, geometry: &geometry };
            match est.estimate(&input) {
                Ok(e) => Some(e),
                Err(err) => {
                    tracing::warn!(%sample_id, %err, "estimator failed; keeping sample without estimate");
                    None
                }
            }
        }
        None => None,
    };
    let estimator_vec_xyz = estimate.map(|e| {
        let v = (geometry.rotation.transpose() * e.gaze_norm).normalize();
        [v.x, v.y, v.z]
    });

    let (pitch, yaw) = vector_to_pitchyaw(&geometry.gaze_norm);
    let (letter_id, stimulus_xy_mm) = match target {
        CaptureTarget::Letter { letter_id, .. } => (Some(letter_id.clone()), None),
        CaptureTarget::Stimulus { position_mm, .. } => (None, Some(*position_mm)),
    };
    let (image_path, normalized_image_path) = image_paths(sample_id);
    let sample = GazeSample {
        sample_id: sample_id.clone(),
        session_id: ctx.session_id.clone(),
        participant_id: ctx.participant_id.clone(),
        mode: ctx.mode,
        letter_id,
        stimulus_xy_mm,
        label_pitch_rad: pitch,
        label_yaw_rad: yaw,
        label_vec_xyz: [label.x, label.y, label.z],
        estimator_vec_xyz,
        wearing_eyetracker: ctx.wearing_eyetracker,
        image_path,
        normalized_image_path,
        captured_at_ms: frame.timestamp_ms,
        approved_at_ms: None,
    };
    sample.validate()?;
    Ok(CaptureOutcome::Sample(Box::new(PendingCapture {
        sample,
        image: frame.image,
        normalized_image,
        geometry,
        estimate,
        target_board_mm: target_board,
        truth: frame.truth,
    })))
}

/// Driver names accepted in configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriverConfig {
    pub frame_source: String,
    pub detector: String,
    pub estimator: String,
    pub scene: SyntheticScene,
    pub estimator_noise_deg: f64,
    pub estimator_outlier_rate: f64,
}

impl Default for DriverConfig {
    fn default() -> Self {
        Self {
            frame_source: "synthetic".into(),
            detector: "synthetic".into(),
            estimator: "synthetic".into(),
            scene: SyntheticScene::default(),
            estimator_noise_deg: 5.0,
            estimator_outlier_rate: 0.0,
        }
    }
}

/// Instantiates the configured drivers for one camera.
pub fn build_drivers(config: &DriverConfig, camera: &CameraCalibration, seed: u64) -> Result<Drivers, CaptureError> {
    let frame_source: Box<dyn FrameSource> = match config.frame_source.as_str() {
        "synthetic" => Box::new(SyntheticFrameSource::new(config.scene.clone(), camera.clone(), seed)),
        other => return Err(CaptureError::UnknownDriver(other.into())),
    };
    let detector: Box<dyn FaceDetector> = match config.detector.as_str() {
        "synthetic" => Box::new(SyntheticDetector::new(camera.intrinsics)),
        other => return Err(CaptureError::UnknownDriver(other.into())),
    };
    let estimator: Option<Box<dyn GazeEstimator>> = match config.estimator.as_str() {
        "synthetic" => Some(Box::new(SyntheticEstimator::new(
            config.estimator_noise_deg,
            config.estimator_outlier_rate,
            seed,
        ))),
        "none" => None,
        other => return Err(CaptureError::UnknownDriver(other.into())),
    };
    Ok(Drivers { frame_source, detector, estimator })
}
