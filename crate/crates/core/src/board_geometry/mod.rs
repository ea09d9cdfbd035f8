//! Letter board geometry.
//!
//! The board frame has its origin at the board center, `x` to the front
//! player's right, `y` downward and `z` along the board normal toward the
//! front player. All letter cells lie in the `z = 0` plane. Units are
//! millimeters throughout; image coordinates are pixels and assumed to be
//! already undistorted.

mod camera;
mod gaze;
mod homography;
mod layout;

pub use camera::{CameraCalibration, CameraIntrinsics, CameraPose, Calibration};
pub use gaze::{angular_error_deg, gaze_label, pitchyaw_to_vector, vector_to_pitchyaw};
pub use homography::{
    estimate_homography, map_gaze_to_board, pose_from_homography, BoardHit, Correspondence,
    Homography,
};
pub use layout::{BoardLayout, BoardSide, LetterCell};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("unknown letter `{0}`")]
    NotFound(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),
    #[error("insufficient data: need at least {needed} correspondences, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("point maps to infinity")]
    PointAtInfinity,
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("parse error: {0}")]
    Parse(String),
}
