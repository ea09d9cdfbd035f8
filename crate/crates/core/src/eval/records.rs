use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::board_geometry::{CameraIntrinsics, Correspondence};
use crate::ids::SampleId;
use crate::jsonl;
use crate::Vec2;

/// Eye-tracker evidence for one captured sample.
///
/// Pixel values are scene-camera pixels, assumed undistorted; board values
/// are millimeters in the board frame. One JSON object per line:
///
/// ```text
/// {"sample_id":"s1-001",
///  "scene_intrinsics":{"fx":766.0,"fy":766.0,"cx":544.0,"cy":540.0,"image_w":1088,"image_h":1080},
///  "gaze_px":[512.3,498.0],
///  "markers":[{"image_px":[100.0,200.0],"board_mm":[-300.0,-150.0]}, ...],
///  "gaze_offset_px":[0.0,0.0],
///  "quality":{"degraded":false}}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: SampleId,
    pub scene_intrinsics: CameraIntrinsics,
    pub gaze_px: [f64; 2],
    pub markers: Vec<Correspondence>,
    /// Constant per-participant correction added to `gaze_px`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaze_offset_px: Option<[f64; 2]>,
    #[serde(default)]
    pub quality: RecordQuality,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordQuality {
    /// Recording unusable (e.g. markers occluded or motion blur).
    #[serde(default)]
    pub degraded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl EvalRecord {
    /// Gaze pixel with the offset applied.
    pub fn corrected_gaze_px(&self) -> Vec2 {
        let [ox, oy] = self.gaze_offset_px.unwrap_or([0.0, 0.0]);
        Vec2::new(self.gaze_px[0] + ox, self.gaze_px[1] + oy)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.markers.len() < 4 {
            return Err(EvalError::InsufficientData(format!(
                "{}: {} marker correspondences, need 4",
                self.sample_id,
                self.markers.len()
            )));
        }
        if !self.corrected_gaze_px().iter().all(|v| v.is_finite()) {
            return Err(EvalError::DegenerateInput(format!("{}: non-finite gaze pixel", self.sample_id)));
        }
        Ok(())
    }
}

pub fn read_eval_records(path: &Path) -> Result<Vec<EvalRecord>, EvalError> {
    Ok(jsonl::read(path)?)
}

pub fn write_eval_records(path: &Path, records: &[EvalRecord]) -> Result<(), EvalError> {
    Ok(jsonl::write_all(path, records)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_shape() {
        let line = r#"{"sample_id":"s1-001","scene_intrinsics":{"fx":766.0,"fy":766.0,"cx":544.0,"cy":540.0,"image_w":1088,"image_h":1080},"gaze_px":[512.3,498.0],"markers":[{"image_px":[100.0,200.0],"board_mm":[-300.0,-150.0]}]}"#;
        let r: EvalRecord = serde_json::from_str(line).unwrap();
        assert_eq!(r.markers[0].board_mm, Vec2::new(-300.0, -150.0));
        assert!(!r.quality.degraded);
        assert!(matches!(r.validate(), Err(EvalError::InsufficientData(_))));
        let back = serde_json::to_string(&r).unwrap();
        assert_eq!(back, line.replace("}]}", "}],\"quality\":{\"degraded\":false}}"));
    }

    #[test]
    fn offset_applied() {
        let mut r: EvalRecord = serde_json::from_str(
            r#"{"sample_id":"a","scene_intrinsics":{"fx":1.0,"fy":1.0,"cx":0.5,"cy":0.5,"image_w":1,"image_h":1},"gaze_px":[1.0,2.0],"markers":[]}"#,
        )
        .unwrap();
        r.gaze_offset_px = Some([0.5, -1.0]);
        assert_eq!(r.corrected_gaze_px(), Vec2::new(1.5, 1.0));
    }
}
