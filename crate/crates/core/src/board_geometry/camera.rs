use serde::{Deserialize, Serialize};

use super::{BoardSide, GeometryError};
use crate::{Mat3, Vec2, Vec3};

/// Pinhole intrinsics, pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawIntrinsics")]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub image_w: u32,
    pub image_h: u32,
}

#[derive(Deserialize)]
struct RawIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    image_w: u32,
    image_h: u32,
}

impl TryFrom<RawIntrinsics> for CameraIntrinsics {
    type Error = GeometryError;

    fn try_from(r: RawIntrinsics) -> Result<Self, Self::Error> {
        CameraIntrinsics::new(r.fx, r.fy, r.cx, r.cy, r.image_w, r.image_h)
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, image_w: u32, image_h: u32) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy, image_w, image_h };
        k.validate()?;
        Ok(k)
    }

    /// Intrinsics with the principal point at the image center.
    pub fn centered(focal: f64, image_w: u32, image_h: u32) -> Result<Self, GeometryError> {
        Self::new(focal, focal, image_w as f64 / 2.0, image_h as f64 / 2.0, image_w, image_h)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive and finite (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(0.0..self.image_w as f64).contains(&self.cx) || !(0.0..self.image_h as f64).contains(&self.cy) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.image_w, self.image_h
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Mat3 {
        Mat3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Projects a camera-frame point; `None` when it is not in front of the camera.
    pub fn project(&self, p: &Vec3) -> Option<Vec2> {
        if p.z <= 0.0 {
            return None;
        }
        Some(Vec2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Camera-frame ray direction (not normalized, `z = 1`) through a pixel.
    pub fn back_project(&self, px: &Vec2) -> Vec3 {
        Vec3::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy, 1.0)
    }

    pub fn contains(&self, px: &Vec2) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.image_w as f64 && px.y < self.image_h as f64
    }
}

/// Rigid transform from the board frame into a camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPose", into = "RawPose")]
pub struct CameraPose {
    rotation: Mat3,
    translation_mm: Vec3,
}

/// Row-major matrices in files.
#[derive(Serialize, Deserialize)]
struct RawPose {
    rotation: [[f64; 3]; 3],
    translation_mm: [f64; 3],
}

impl TryFrom<RawPose> for CameraPose {
    type Error = GeometryError;

    fn try_from(r: RawPose) -> Result<Self, Self::Error> {
        let m = r.rotation;
        let rot = Mat3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        );
        CameraPose::new(rot, Vec3::from(r.translation_mm))
    }
}

impl From<CameraPose> for RawPose {
    fn from(p: CameraPose) -> Self {
        let r = p.rotation;
        RawPose {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation_mm: [p.translation_mm.x, p.translation_mm.y, p.translation_mm.z],
        }
    }
}

const ORTHONORMAL_TOL: f64 = 1e-9;

impl CameraPose {
    /// Validates that `rotation` is a proper rotation (tolerance 1e-9).
    pub fn new(rotation: Mat3, translation_mm: Vec3) -> Result<Self, GeometryError> {
        if !rotation.iter().chain(translation_mm.iter()).all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidPose("non-finite entries".into()));
        }
        let dev = (rotation.transpose() * rotation - Mat3::identity()).norm();
        if dev > ORTHONORMAL_TOL {
            return Err(GeometryError::InvalidPose(format!("rotation not orthonormal (deviation {dev:e})")));
        }
        if (rotation.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(GeometryError::InvalidPose("rotation determinant is not +1".into()));
        }
        Ok(Self { rotation, translation_mm })
    }

    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation_mm: Vec3::zeros() }
    }

    /// Pose of a camera at `eye` (board frame) looking at `target`, with the
    /// image `y` axis as close as possible to `down`.
    pub fn look_at(eye: Vec3, target: Vec3, down: Vec3) -> Result<Self, GeometryError> {
        let z = target - eye;
        if z.norm() == 0.0 {
            return Err(GeometryError::DegenerateGeometry("eye coincides with target"));
        }
        let z = z.normalize();
        let x = down.cross(&z);
        if x.norm() < 1e-12 {
            return Err(GeometryError::DegenerateGeometry("viewing direction parallel to down vector"));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Ok(Self { rotation, translation_mm: -(rotation * eye) })
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation_mm(&self) -> &Vec3 {
        &self.translation_mm
    }

    /// Board frame → camera frame.
    pub fn transform(&self, p_board: &Vec3) -> Vec3 {
        self.rotation * p_board + self.translation_mm
    }

    /// Camera frame → board frame.
    pub fn inverse_transform(&self, p_cam: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p_cam - self.translation_mm)
    }

    /// Camera center expressed in the board frame, `-Rᵀt`.
    pub fn camera_origin_board(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation_mm)
    }
}

/// One camera of the installation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraCalibration {
    pub id: String,
    /// Side of the board whose player this camera films.
    pub side: BoardSide,
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraPose,
}

/// Calibration file: intrinsics and board→camera extrinsics per camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub cameras: Vec<CameraCalibration>,
}

impl Calibration {
    pub fn from_toml_str(text: &str) -> Result<Self, GeometryError> {
        toml::from_str(text).map_err(|e| GeometryError::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("calibration serializes")
    }

    pub fn for_side(&self, side: BoardSide) -> Option<&CameraCalibration> {
        self.cameras.iter().find(|c| c.side == side)
    }

    /// Two webcams 640×480, each 150 mm behind the board and 200 mm above its
    /// center, looking through the board at a face 500 mm in front of it.
    pub fn default_installation() -> Self {
        let k = CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480).expect("valid");
        let down = Vec3::new(0.0, 1.0, 0.0);
        let cam = |id: &str, side: BoardSide, z_sign: f64| CameraCalibration {
            id: id.to_owned(),
            side,
            intrinsics: k,
            extrinsics: CameraPose::look_at(
                Vec3::new(0.0, -200.0, -150.0 * z_sign),
                Vec3::new(0.0, -120.0, 500.0 * z_sign),
                down,
            )
            .expect("valid"),
        };
        Self {
            cameras: vec![cam("front", BoardSide::Front, 1.0), cam("back", BoardSide::Back, -1.0)],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 10, 10).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 10.0, 1.0, 10, 10).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 9.9, 0.0, 10, 10).is_ok());
    }

    #[test]
    fn pose_rejects_non_rotation() {
        let m = Mat3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(CameraPose::new(m, Vec3::zeros()).is_err());
        let s = Mat3::identity() * 1.0001;
        assert!(CameraPose::new(s, Vec3::zeros()).is_err());
    }

    #[test]
    fn look_at_points_optical_axis_at_target() {
        let eye = Vec3::new(100.0, -50.0, 700.0);
        let target = Vec3::new(-30.0, 20.0, 0.0);
        let pose = CameraPose::look_at(eye, target, Vec3::y()).unwrap();
        let t = pose.transform(&target);
        assert!(t.x.abs() < 1e-9 && t.y.abs() < 1e-9 && t.z > 0.0);
        assert!((pose.camera_origin_board() - eye).norm() < 1e-9);
        let back = pose.inverse_transform(&pose.transform(&eye));
        assert!((back - eye).norm() < 1e-9);
    }

    #[test]
    fn calibration_file_is_row_major() {
        let calib = Calibration::default_installation();
        let text = calib.to_toml_string();
        let back = Calibration::from_toml_str(&text).unwrap();
        assert_eq!(back.cameras.len(), 2);
        for (a, b) in calib.cameras.iter().zip(&back.cameras) {
            assert!((a.extrinsics.rotation() - b.extrinsics.rotation()).norm() < 1e-12);
        }
        let pose = CameraPose::new(
            Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
            Vec3::new(1.0, 2.0, 3.0),
        )
        .unwrap();
        let json = serde_json::to_string(&pose).unwrap();
        assert_eq!(json, r#"{"rotation":[[0.0,-1.0,0.0],[1.0,0.0,0.0],[0.0,0.0,1.0]],"translation_mm":[1.0,2.0,3.0]}"#);
    }

    #[test]
    fn default_installation_sees_board_and_face() {
        let calib = Calibration::default_installation();
        for cam in &calib.cameras {
            let z_sign = if cam.side == BoardSide::Front { 1.0 } else { -1.0 };
            let board_center = cam.extrinsics.transform(&Vec3::zeros());
            assert!(board_center.z > 0.0);
            let face = cam.extrinsics.transform(&Vec3::new(0.0, -120.0, 500.0 * z_sign));
            let px = cam.intrinsics.project(&face).unwrap();
            assert!(cam.intrinsics.contains(&px));
        }
    }
}
