//! Data normalization for appearance-based gaze estimation.
//!
//! Each capture is re-expressed in a virtual camera that looks straight at
//! the face center from a fixed distance with a fixed focal length: a
//! rotation `R` aligns the camera `z` axis with the face center and cancels
//! roll, and the image is warped by `K_norm · S · R · K_real⁻¹` with
//! `S = diag(1, 1, distance_norm / face_distance)`. Gaze vectors only take
//! the rotation.
//!
//! Roll is cancelled against the original camera `y` axis: the normalized
//! `x` axis is `normalize(ŷ × z_n)`.

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::board_geometry::CameraIntrinsics;
use crate::{Mat3, Vec3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NormalizationError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid normalization parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizationParams {
    /// Focal length of the virtual camera, pixels.
    pub focal_norm: f64,
    /// Distance of the virtual camera from the face center, millimeters.
    pub distance_norm: f64,
    /// Side of the square normalized image, pixels.
    pub size_norm: u32,
}

impl Default for NormalizationParams {
    fn default() -> Self {
        Self { focal_norm: 960.0, distance_norm: 600.0, size_norm: 224 }
    }
}

impl NormalizationParams {
    pub fn validate(&self) -> Result<(), NormalizationError> {
        if !(self.focal_norm > 0.0 && self.distance_norm > 0.0 && self.size_norm > 0) {
            return Err(NormalizationError::InvalidParams(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn camera_matrix(&self) -> Mat3 {
        let c = self.size_norm as f64 / 2.0;
        Mat3::new(self.focal_norm, 0.0, c, 0.0, self.focal_norm, c, 0.0, 0.0, 1.0)
    }
}

/// Per-sample normalization result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedSampleGeometry {
    /// Camera → normalized camera rotation.
    pub rotation: Mat3,
    /// Original image pixels → normalized image pixels.
    pub warp: Mat3,
    /// Gaze label in the normalized frame.
    pub gaze_norm: Vec3,
}

/// Rotation taking the face-center direction to `(0, 0, 1)`.
pub fn normalization_rotation(face_center_camera_mm: &Vec3) -> Result<Mat3, NormalizationError> {
    let n = face_center_camera_mm.norm();
    if !(n.is_finite() && n > 0.0) {
        return Err(NormalizationError::DegenerateGeometry("face center at camera origin"));
    }
    let z = face_center_camera_mm / n;
    let x = Vec3::y().cross(&z);
    let xn = x.norm();
    if xn < 1e-12 {
        return Err(NormalizationError::DegenerateGeometry("face center on the camera y axis"));
    }
    let x = x / xn;
    let y = z.cross(&x);
    Ok(Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]))
}

pub fn normalize_gaze(rotation: &Mat3, gaze_camera: &Vec3) -> Vec3 {
    (rotation * gaze_camera).normalize()
}

/// Image transform `K_norm · S · R · K_real⁻¹`.
pub fn normalization_warp(
    k_real: &CameraIntrinsics,
    params: &NormalizationParams,
    rotation: &Mat3,
    face_distance_mm: f64,
) -> Result<Mat3, NormalizationError> {
    params.validate()?;
    if !(face_distance_mm.is_finite() && face_distance_mm > 0.0) {
        return Err(NormalizationError::DegenerateGeometry("face distance must be positive"));
    }
    let k_inv = k_real
        .matrix()
        .try_inverse()
        .filter(|_| k_real.validate().is_ok())
        .ok_or_else(|| NormalizationError::InvalidIntrinsics(format!("{k_real:?}")))?;
    let s = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, params.distance_norm / face_distance_mm));
    Ok(params.camera_matrix() * s * rotation * k_inv)
}

/// Full normalization of one capture.
pub fn normalize_sample(
    k_real: &CameraIntrinsics,
    params: &NormalizationParams,
    face_center_camera_mm: &Vec3,
    gaze_camera: &Vec3,
) -> Result<NormalizedSampleGeometry, NormalizationError> {
    let rotation = normalization_rotation(face_center_camera_mm)?;
    let warp = normalization_warp(k_real, params, &rotation, face_center_camera_mm.norm())?;
    Ok(NormalizedSampleGeometry { rotation, warp, gaze_norm: normalize_gaze(&rotation, gaze_camera) })
}

/// Inverse-mapping resampler with bilinear interpolation.
///
/// Output pixel `(u, v)` samples the source at `transform⁻¹ · (u, v, 1)`;
/// samples outside the source image are 0. A non-invertible transform yields
/// a black image.
pub fn warp_image(image: &GrayImage, transform: &Mat3, out_w: u32, out_h: u32) -> GrayImage {
    let mut out = GrayImage::new(out_w, out_h);
    let Some(inv) = transform.try_inverse() else {
        return out;
    };
    let (w, h) = (image.width() as f64, image.height() as f64);
    for v in 0..out_h {
        for u in 0..out_w {
            let p = inv * Vec3::new(u as f64, v as f64, 1.0);
            if p.z.abs() < 1e-12 {
                continue;
            }
            let (x, y) = (p.x / p.z, p.y / p.z);
            if !(x >= 0.0 && y >= 0.0 && x <= w - 1.0 && y <= h - 1.0) {
                continue;
            }
            out.put_pixel(u, v, image::Luma([bilinear(image, x, y)]));
        }
    }
    out
}

fn bilinear(image: &GrayImage, x: f64, y: f64) -> u8 {
    let x0 = x.floor();
    let y0 = y.floor();
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as u32, y0 as u32);
    let x1 = (x0 + 1).min(image.width() - 1);
    let y1 = (y0 + 1).min(image.height() - 1);
    let px = |x: u32, y: u32| f64::from(image.get_pixel(x, y)[0]);
    let top = px(x0, y0) * (1.0 - fx) + px(x1, y0) * fx;
    let bottom = px(x0, y1) * (1.0 - fx) + px(x1, y1) * fx;
    (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8
}
