//! Hardware-free drivers.
//!
//! The frame source renders a flat parametric face (ellipse head, two eyes
//! with iris dots shifted along the true gaze) and attaches the ground truth
//! to the frame. The detector checks the pixels for a face and reads the
//! face geometry from that truth. The estimator perturbs the true gaze.

use std::collections::BTreeSet;

use image::GrayImage;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    CaptureCue, CaptureError, EstimatorInput, FaceDetector, FaceObservation, Frame, FrameSource,
    FrameSourceDescriptor, GazeEstimate, GazeEstimator,
};
use crate::board_geometry::{BoardSide, CameraCalibration, CameraIntrinsics};
use crate::noise::{uniform_frontal, AngularNoise};
use crate::{seed, Vec2, Vec3};

const BACKGROUND: f64 = 30.0;
const SKIN: f64 = 170.0;
const SCLERA: f64 = 235.0;
const IRIS: f64 = 20.0;
const PRESENCE_THRESHOLD: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticScene {
    /// Mean face center in the board frame for a front-side subject; a
    /// back-side subject sits at the mirrored `z`.
    pub face_center_board_mm: [f64; 3],
    /// Per-axis standard deviation of head position.
    pub head_jitter_mm: f64,
    pub face_radius_mm: f64,
    pub blink_rate: f64,
    pub absent_rate: f64,
    /// Grab indices (0-based) that always show a blink / no face.
    pub blink_at: BTreeSet<u64>,
    pub absent_at: BTreeSet<u64>,
    /// Uniform pixel noise amplitude.
    pub pixel_noise: f64,
}

impl Default for SyntheticScene {
    fn default() -> Self {
        Self {
            face_center_board_mm: [0.0, -120.0, 500.0],
            head_jitter_mm: 15.0,
            face_radius_mm: 90.0,
            blink_rate: 0.0,
            absent_rate: 0.0,
            blink_at: BTreeSet::new(),
            absent_at: BTreeSet::new(),
            pixel_noise: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub face_present: bool,
    pub blink: bool,
    pub face_center_camera_mm: Vec3,
    /// Unit gaze from the face center toward the cued target, camera frame.
    pub true_gaze_camera: Vec3,
    pub grab_index: u64,
}

pub struct SyntheticFrameSource {
    scene: SyntheticScene,
    camera: CameraCalibration,
    seed: u64,
    grabs: u64,
}

impl SyntheticFrameSource {
    pub fn new(scene: SyntheticScene, camera: CameraCalibration, seed: u64) -> Self {
        Self { scene, camera, seed, grabs: 0 }
    }

    fn face_center_board(&self, rng: &mut impl Rng) -> Vec3 {
        let [x, y, z] = self.scene.face_center_board_mm;
        let z = match self.camera.side {
            BoardSide::Front => z,
            BoardSide::Back => -z,
        };
        let jitter = Normal::new(0.0, self.scene.head_jitter_mm.max(0.0)).expect("finite jitter");
        Vec3::new(x + jitter.sample(rng), y + jitter.sample(rng), z + jitter.sample(rng))
    }
}

impl FrameSource for SyntheticFrameSource {
    fn descriptor(&self) -> FrameSourceDescriptor {
        FrameSourceDescriptor {
            camera_id: self.camera.id.clone(),
            width: self.camera.intrinsics.image_w,
            height: self.camera.intrinsics.image_h,
            deadline_ms: 500,
            reentrant: true,
        }
    }

    fn grab(&mut self, cue: &CaptureCue, now_ms: u64) -> Result<Frame, CaptureError> {
        let index = self.grabs;
        self.grabs += 1;
        let mut rng = seed::rng(seed::derive(self.seed, "frame", index));
        let absent = self.scene.absent_at.contains(&index) || rng.random_bool(self.scene.absent_rate.clamp(0.0, 1.0));
        let blink = self.scene.blink_at.contains(&index) || rng.random_bool(self.scene.blink_rate.clamp(0.0, 1.0));
        let face = self.camera.extrinsics.transform(&self.face_center_board(&mut rng));
        let to_target = cue.target_camera_mm - face;
        let true_gaze = if to_target.norm() > 0.0 { to_target.normalize() } else { Vec3::new(0.0, 0.0, -1.0) };
        let truth = SyntheticTruth {
            face_present: !absent,
            blink,
            face_center_camera_mm: face,
            true_gaze_camera: true_gaze,
            grab_index: index,
        };
        let image = render(&self.camera.intrinsics, &self.scene, &truth, &mut rng);
        Ok(Frame { camera_id: self.camera.id.clone(), timestamp_ms: now_ms, image, truth: Some(truth) })
    }
}

struct Disc {
    center: Vec2,
    rx: f64,
    ry: f64,
    value: f64,
}

impl Disc {
    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = (x - self.center.x) / self.rx;
        let dy = (y - self.center.y) / self.ry;
        dx * dx + dy * dy <= 1.0
    }
}

fn render(k: &CameraIntrinsics, scene: &SyntheticScene, truth: &SyntheticTruth, rng: &mut impl Rng) -> GrayImage {
    let mut discs = Vec::new();
    let face = truth.face_center_camera_mm;
    if truth.face_present && face.z > 0.0 {
        let scale = k.fx / face.z;
        if let Some(c) = k.project(&face) {
            let r = scene.face_radius_mm * scale;
            discs.push(Disc { center: c, rx: 0.8 * r, ry: r, value: SKIN });
        }
        for side in [-1.0, 1.0] {
            let eye = face + Vec3::new(side * 32.0, -15.0, 0.0);
            let Some(c) = k.project(&eye) else { continue };
            if truth.blink {
                discs.push(Disc { center: c, rx: 12.0 * scale, ry: 1.5 * scale, value: IRIS });
                continue;
            }
            discs.push(Disc { center: c, rx: 11.0 * scale, ry: 7.0 * scale, value: SCLERA });
            if let Some(ic) = k.project(&(eye + truth.true_gaze_camera * 9.0)) {
                discs.push(Disc { center: ic, rx: 4.5 * scale, ry: 4.5 * scale, value: IRIS });
            }
        }
    }
    let noise = scene.pixel_noise.max(0.0);
    let (w, h) = (k.image_w as usize, k.image_h as usize);
    // one noise byte per pixel, mapped onto [-noise, noise]
    let mut buf = vec![0u8; w * h];
    if noise > 0.0 {
        rng.fill(&mut buf[..]);
    }
    // pixel value for every (intensity level, noise byte) pair; level 0 is the background
    let table = |base: f64| -> [u8; 256] {
        std::array::from_fn(|b| {
            let n = if noise > 0.0 { (b as f64 / 127.5 - 1.0) * noise } else { 0.0 };
            (base + n).round().clamp(0.0, 255.0) as u8
        })
    };
    let tables: Vec<[u8; 256]> = std::iter::once(BACKGROUND).chain(discs.iter().map(|d| d.value)).map(table).collect();
    for (y, row) in buf.chunks_mut(w.max(1)).enumerate() {
        let py = y as f64 + 0.5;
        let active: Vec<usize> = (0..discs.len()).rev().filter(|&i| (py - discs[i].center.y).abs() <= discs[i].ry).collect();
        for (x, px) in row.iter_mut().enumerate() {
            let level = active.iter().find(|&&i| discs[i].contains(x as f64 + 0.5, py)).map_or(0, |&i| i + 1);
            *px = tables[level][usize::from(*px)];
        }
    }
    GrayImage::from_raw(k.image_w, k.image_h, buf).expect("buffer matches frame size")
}

/// Looks for skin-level intensity around the true face center.
pub struct SyntheticDetector {
    intrinsics: CameraIntrinsics,
}

impl SyntheticDetector {
    pub fn new(intrinsics: CameraIntrinsics) -> Self {
        Self { intrinsics }
    }
}

impl FaceDetector for SyntheticDetector {
    fn detect(&mut self, frame: &Frame) -> Option<FaceObservation> {
        let truth = frame.truth.as_ref()?;
        let face = truth.face_center_camera_mm;
        let c = self.intrinsics.project(&face)?;
        // patch below the eyes, on the cheeks/nose
        let cx = c.x.round() as i64;
        let cy = (c.y + 20.0 * self.intrinsics.fy / face.z).round() as i64;
        let (mut sum, mut n) = (0.0, 0.0);
        for y in cy - 3..=cy + 3 {
            for x in cx - 3..=cx + 3 {
                if x >= 0 && y >= 0 && (x as u32) < frame.image.width() && (y as u32) < frame.image.height() {
                    sum += f64::from(frame.image.get_pixel(x as u32, y as u32)[0]);
                    n += 1.0;
                }
            }
        }
        if n == 0.0 || sum / n < PRESENCE_THRESHOLD {
            return None;
        }
        Some(FaceObservation { face_center_camera_mm: face, face_distance_mm: face.norm(), landmarks_px: None })
    }
}

/// True gaze plus angular noise; with probability `outlier_rate` a uniform
/// direction from the camera-facing hemisphere instead.
pub struct SyntheticEstimator {
    noise: AngularNoise,
    outlier_rate: f64,
    seed: u64,
}

impl SyntheticEstimator {
    /// `noise_deg` is the RMS angular error of the non-outlier estimates.
    pub fn new(noise_deg: f64, outlier_rate: f64, seed: u64) -> Self {
        Self { noise: AngularNoise::new(noise_deg), outlier_rate: outlier_rate.clamp(0.0, 1.0), seed }
    }
}

impl GazeEstimator for SyntheticEstimator {
    fn estimate(&mut self, input: &EstimatorInput<'_>) -> Result<GazeEstimate, CaptureError> {
        let truth = input
            .frame
            .truth
            .as_ref()
            .ok_or_else(|| CaptureError::Estimator("frame carries no synthetic truth".into()))?;
        let mut rng = seed::rng(seed::derive(self.seed, "estimate", seed::hash_str(input.sample_id.as_str())));
        let true_norm = (input.geometry.rotation * truth.true_gaze_camera).normalize();
        let gaze_norm = if rng.random_bool(self.outlier_rate) {
            uniform_frontal(&mut rng)
        } else {
            self.noise.perturb(&true_norm, &mut rng)
        };
        Ok(GazeEstimate { gaze_norm, confidence: 1.0 })
    }
}
