use super::{EvalError, EvalRecord};
use crate::board_geometry::{
    angular_error_deg, estimate_homography, map_gaze_to_board, pose_from_homography, BoardLayout,
};
use crate::{Vec2, Vec3};

/// Eye-tracker measurement for one sample, in board coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceMeasurement {
    pub error_deg: f64,
    pub gaze_board_mm: Vec2,
    /// Scene camera center recovered from the markers.
    pub camera_origin_board_mm: Vec3,
    pub out_of_bounds: bool,
}

/// Angle between the measured gaze point and the target, both seen from
/// the scene camera center recovered from the markers.
pub fn reference_error(record: &EvalRecord, target_board_mm: &Vec2) -> Result<ReferenceMeasurement, EvalError> {
    record.validate()?;
    let h = estimate_homography(&record.markers)?;
    let hit = map_gaze_to_board(&record.corrected_gaze_px(), &h, Some(&record.scene_intrinsics))?;
    let pose = pose_from_homography(&h, &record.scene_intrinsics)?;
    let origin = pose.camera_origin_board();
    let gaze = BoardLayout::lift(hit.board_mm) - origin;
    let target = BoardLayout::lift(*target_board_mm) - origin;
    Ok(ReferenceMeasurement {
        error_deg: angular_error_deg(&gaze, &target)?,
        gaze_board_mm: hit.board_mm,
        camera_origin_board_mm: origin,
        out_of_bounds: hit.out_of_bounds,
    })
}
