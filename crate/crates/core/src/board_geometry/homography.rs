use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{CameraIntrinsics, CameraPose, GeometryError};
use crate::{Mat3, Vec2, Vec3};

/// Plane-induced projective map from image pixels to board millimeters.
///
/// Stored normalized: `h[2][2] = 1` when that entry is non-zero, otherwise
/// unit Frobenius norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    h: Mat3,
}

/// One marker corner seen in the scene image with its known board position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub image_px: Vec2,
    pub board_mm: Vec2,
}

impl Correspondence {
    pub fn new(image_px: Vec2, board_mm: Vec2) -> Self {
        Self { image_px, board_mm }
    }
}

/// Result of mapping a gaze pixel onto the board.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoardHit {
    pub board_mm: Vec2,
    /// The gaze pixel was outside the scene image.
    pub out_of_bounds: bool,
}

const W_EPS: f64 = 1e-12;
const DET_EPS: f64 = 1e-12;

impl Homography {
    pub fn identity() -> Self {
        Self { h: Mat3::identity() }
    }

    /// Normalizes and validates an arbitrary 3×3 matrix.
    pub fn from_matrix(m: Mat3) -> Result<Self, GeometryError> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::DegenerateConfiguration("non-finite homography".into()));
        }
        let h = if m[(2, 2)].abs() > W_EPS {
            m / m[(2, 2)]
        } else {
            let n = m.norm();
            if n == 0.0 {
                return Err(GeometryError::DegenerateConfiguration("zero homography".into()));
            }
            m / n
        };
        let scale = h.norm().powi(3);
        if h.determinant().abs() <= DET_EPS * scale {
            return Err(GeometryError::DegenerateConfiguration("homography is singular".into()));
        }
        Ok(Self { h })
    }

    /// Image→board homography induced by the board plane for a camera pose.
    pub fn from_pose(pose: &CameraPose, k: &CameraIntrinsics) -> Result<Self, GeometryError> {
        let r = pose.rotation();
        let t = pose.translation_mm();
        let board_to_image = k.matrix() * Mat3::from_columns(&[r.column(0).into(), r.column(1).into(), *t]);
        let inv = board_to_image
            .try_inverse()
            .ok_or_else(|| GeometryError::DegenerateConfiguration("camera lies in the board plane".into()))?;
        Self::from_matrix(inv)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.h
    }

    pub fn inverse(&self) -> Result<Self, GeometryError> {
        let inv = self
            .h
            .try_inverse()
            .ok_or_else(|| GeometryError::DegenerateConfiguration("homography is singular".into()))?;
        Self::from_matrix(inv)
    }

    /// Applies the map with dehomogenization.
    pub fn apply(&self, p: &Vec2) -> Result<Vec2, GeometryError> {
        let q = self.h * Vec3::new(p.x, p.y, 1.0);
        if q.z.abs() < W_EPS {
            return Err(GeometryError::PointAtInfinity);
        }
        Ok(Vec2::new(q.x / q.z, q.y / q.z))
    }
}

/// Similarity that moves the centroid to the origin and scales the mean
/// distance to √2.
fn hartley_transform(points: &[Vec2]) -> Result<Mat3, GeometryError> {
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vec2::zeros(), |acc, p| acc + p) / n;
    let mean_dist = points.iter().map(|p| (p - centroid).norm()).sum::<f64>() / n;
    if !(mean_dist.is_finite() && mean_dist > 0.0) {
        return Err(GeometryError::DegenerateConfiguration("all points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Mat3::new(s, 0.0, -s * centroid.x, 0.0, s, -s * centroid.y, 0.0, 0.0, 1.0))
}

fn transform_point(t: &Mat3, p: &Vec2) -> Vec2 {
    let q = t * Vec3::new(p.x, p.y, 1.0);
    Vec2::new(q.x / q.z, q.y / q.z)
}

fn has_collinear_triple(points: &[Vec2]) -> bool {
    let n = points.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let (d1, d2) = (points[j] - points[i], points[k] - points[i]);
                let area = d1.x * d2.y - d1.y * d2.x;
                if area.abs() < 1e-9 {
                    return true;
                }
            }
        }
    }
    false
}

/// Normalized DLT: Hartley conditioning on both point sets, least-squares
/// null vector of the design matrix via SVD, then denormalization.
pub fn estimate_homography(correspondences: &[Correspondence]) -> Result<Homography, GeometryError> {
    let n = correspondences.len();
    if n < 4 {
        return Err(GeometryError::InsufficientData { needed: 4, got: n });
    }
    if correspondences
        .iter()
        .any(|c| !(c.image_px.iter().chain(c.board_mm.iter()).all(|v| v.is_finite())))
    {
        return Err(GeometryError::DegenerateConfiguration("non-finite correspondence".into()));
    }
    let img: Vec<Vec2> = correspondences.iter().map(|c| c.image_px).collect();
    let brd: Vec<Vec2> = correspondences.iter().map(|c| c.board_mm).collect();
    let t_img = hartley_transform(&img)?;
    let t_brd = hartley_transform(&brd)?;
    let img_n: Vec<Vec2> = img.iter().map(|p| transform_point(&t_img, p)).collect();
    let brd_n: Vec<Vec2> = brd.iter().map(|p| transform_point(&t_brd, p)).collect();
    if n == 4 && (has_collinear_triple(&img_n) || has_collinear_triple(&brd_n)) {
        return Err(GeometryError::DegenerateConfiguration("three of four points are collinear".into()));
    }

    // Padded to at least 9 rows so the SVD exposes the full right null space.
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (p, q)) in img_n.iter().zip(&brd_n).enumerate() {
        let (u, v) = (p.x, p.y);
        let (x, y) = (q.x, q.y);
        let r0 = 2 * i;
        let r1 = r0 + 1;
        for (c, val) in [u, v, 1.0, 0.0, 0.0, 0.0, -x * u, -x * v, -x].into_iter().enumerate() {
            a[(r0, c)] = val;
        }
        for (c, val) in [0.0, 0.0, 0.0, u, v, 1.0, -y * u, -y * v, -y].into_iter().enumerate() {
            a[(r1, c)] = val;
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| GeometryError::DegenerateConfiguration("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let s_max = svd.singular_values[order[order.len() - 1]];
    let s_second = svd.singular_values[order[1]];
    if s_max == 0.0 || s_second / s_max < 1e-10 {
        return Err(GeometryError::DegenerateConfiguration("design matrix is rank deficient".into()));
    }
    let null = v_t.row(order[0]);
    let hn = Mat3::new(
        null[0], null[1], null[2], null[3], null[4], null[5], null[6], null[7], null[8],
    );
    let t_brd_inv = t_brd
        .try_inverse()
        .ok_or_else(|| GeometryError::DegenerateConfiguration("board normalization".into()))?;
    Homography::from_matrix(t_brd_inv * hn * t_img)
}

/// Recovers the board→camera pose from an image→board homography.
///
/// `B = K⁻¹ H⁻¹ = λ [r1 r2 t]`, with `λ` the mean of the first two column
/// norms; the sign is chosen so the board lies in front of the camera and
/// the rotation is projected onto SO(3) with an SVD.
pub fn pose_from_homography(h: &Homography, k: &CameraIntrinsics) -> Result<CameraPose, GeometryError> {
    k.validate()?;
    let board_to_image = h.inverse()?;
    let b = k.inverse_matrix() * board_to_image.matrix();
    let b1: Vec3 = b.column(0).into();
    let b2: Vec3 = b.column(1).into();
    let b3: Vec3 = b.column(2).into();
    let lambda = 0.5 * (b1.norm() + b2.norm());
    if !(lambda.is_finite() && lambda > 1e-15) {
        return Err(GeometryError::DegenerateConfiguration("homography columns vanish".into()));
    }
    let mut r1 = b1 / lambda;
    let mut r2 = b2 / lambda;
    let mut t = b3 / lambda;
    if t.z < 0.0 {
        r1 = -r1;
        r2 = -r2;
        t = -t;
    }
    let r3 = r1.cross(&r2);
    if r3.norm() < 1e-6 {
        return Err(GeometryError::DegenerateConfiguration("rotation columns are parallel".into()));
    }
    let m = Mat3::from_columns(&[r1, r2, r3]);
    let svd = m.svd(true, true);
    let (Some(mut u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(GeometryError::DegenerateConfiguration("SVD failed".into()));
    };
    if (u * v_t).determinant() < 0.0 {
        let last = -u.column(2);
        u.set_column(2, &last);
    }
    CameraPose::new(u * v_t, t)
}

/// Maps a scene-camera gaze pixel into board coordinates.
///
/// Out-of-image pixels are mapped anyway and flagged.
pub fn map_gaze_to_board(
    gaze_px: &Vec2,
    h: &Homography,
    image: Option<&CameraIntrinsics>,
) -> Result<BoardHit, GeometryError> {
    let board_mm = h.apply(gaze_px)?;
    let out_of_bounds = image.is_some_and(|k| !k.contains(gaze_px));
    if out_of_bounds {
        tracing::warn!(x = gaze_px.x, y = gaze_px.y, "gaze pixel outside scene image");
    }
    Ok(BoardHit { board_mm, out_of_bounds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn square() -> Vec<Vec2> {
        vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(100.0, 0.0),
            Vec2::new(100.0, 80.0),
            Vec2::new(0.0, 80.0),
        ]
    }

    /// Straight 3×3 multiply and divide, kept separate from `Homography::apply`.
    fn oracle_apply(m: &[[f64; 3]; 3], p: (f64, f64)) -> (f64, f64) {
        let x = m[0][0] * p.0 + m[0][1] * p.1 + m[0][2];
        let y = m[1][0] * p.0 + m[1][1] * p.1 + m[1][2];
        let w = m[2][0] * p.0 + m[2][1] * p.1 + m[2][2];
        (x / w, y / w)
    }

    fn random_h(rng: &mut impl Rng) -> [[f64; 3]; 3] {
        [
            [rng.random_range(0.5..1.5), rng.random_range(-0.3..0.3), rng.random_range(-50.0..50.0)],
            [rng.random_range(-0.3..0.3), rng.random_range(0.5..1.5), rng.random_range(-50.0..50.0)],
            [rng.random_range(-1e-4..1e-4), rng.random_range(-1e-4..1e-4), 1.0],
        ]
    }

    fn to_mat(m: &[[f64; 3]; 3]) -> Mat3 {
        Mat3::new(m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2])
    }

    #[test]
    fn identity_from_four_points() {
        let c: Vec<_> = square().into_iter().map(|p| Correspondence::new(p, p)).collect();
        let h = estimate_homography(&c).unwrap();
        assert!((h.matrix() - Mat3::identity()).amax() < 1e-12);
    }

    #[test]
    fn pure_scale_from_four_points() {
        let c: Vec<_> = square().into_iter().map(|p| Correspondence::new(p, p * 2.0)).collect();
        let h = estimate_homography(&c).unwrap();
        let expected = Mat3::from_diagonal(&Vec3::new(2.0, 2.0, 1.0));
        assert!((h.matrix() - expected).amax() < 1e-12);
    }

    #[test]
    fn recovers_known_homography_from_six_points() {
        let mut rng = seed::rng(11);
        for _ in 0..50 {
            let truth = random_h(&mut rng);
            let c: Vec<_> = (0..6)
                .map(|_| {
                    let p = (rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0));
                    let q = oracle_apply(&truth, p);
                    Correspondence::new(Vec2::new(p.0, p.1), Vec2::new(q.0, q.1))
                })
                .collect();
            let h = estimate_homography(&c).unwrap();
            assert!((h.matrix() - to_mat(&truth)).amax() < 1e-8, "{}", h.matrix());
            for corr in &c {
                let mapped = h.apply(&corr.image_px).unwrap();
                assert!((mapped - corr.board_mm).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn too_few_points() {
        let c: Vec<_> = square().into_iter().take(3).map(|p| Correspondence::new(p, p)).collect();
        assert_eq!(
            estimate_homography(&c),
            Err(GeometryError::InsufficientData { needed: 4, got: 3 })
        );
    }

    #[test]
    fn collinear_quadruple_is_degenerate() {
        let pts = [
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(2.0, 2.0),
            Vec2::new(0.0, 5.0),
        ];
        let c: Vec<_> = pts.iter().map(|&p| Correspondence::new(p, p)).collect();
        assert!(matches!(estimate_homography(&c), Err(GeometryError::DegenerateConfiguration(_))));
        let line: Vec<_> = (0..6)
            .map(|i| {
                let p = Vec2::new(i as f64, 2.0 * i as f64);
                Correspondence::new(p, p)
            })
            .collect();
        assert!(matches!(estimate_homography(&line), Err(GeometryError::DegenerateConfiguration(_))));
    }

    #[test]
    fn map_gaze_examples() {
        let id = Homography::identity();
        let hit = map_gaze_to_board(&Vec2::new(100.0, 50.0), &id, None).unwrap();
        assert_eq!(hit.board_mm, Vec2::new(100.0, 50.0));
        let s = Homography::from_matrix(Mat3::from_diagonal(&Vec3::new(2.0, 2.0, 1.0))).unwrap();
        assert_eq!(s.apply(&Vec2::new(100.0, 50.0)).unwrap(), Vec2::new(200.0, 100.0));

        let k = CameraIntrinsics::centered(500.0, 200, 100).unwrap();
        let hit = map_gaze_to_board(&Vec2::new(250.0, 50.0), &id, Some(&k)).unwrap();
        assert!(hit.out_of_bounds);
    }

    #[test]
    fn map_gaze_matches_direct_multiply() {
        let mut rng = seed::rng(5);
        for _ in 0..100 {
            let m = random_h(&mut rng);
            let h = Homography::from_matrix(to_mat(&m)).unwrap();
            let p = (rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0));
            let (x, y) = oracle_apply(&m, p);
            let got = h.apply(&Vec2::new(p.0, p.1)).unwrap();
            assert!((got.x - x).abs() < 1e-9 && (got.y - y).abs() < 1e-9);
        }
    }

    #[test]
    fn point_at_infinity() {
        let m = Mat3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0);
        let h = Homography::from_matrix(m).unwrap();
        assert_eq!(h.apply(&Vec2::new(-1.0, 3.0)), Err(GeometryError::PointAtInfinity));
    }

    #[test]
    fn singular_matrix_rejected() {
        let m = Mat3::new(1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 0.0, 1.0);
        assert!(Homography::from_matrix(m).is_err());
    }

    fn board_markers() -> Vec<Vec2> {
        [-300.0, 0.0, 300.0]
            .iter()
            .flat_map(|&x| [-150.0, 150.0].map(|y| Vec2::new(x, y)))
            .collect()
    }

    fn synth(pose: &CameraPose, k: &CameraIntrinsics) -> Vec<Correspondence> {
        board_markers()
            .into_iter()
            .map(|b| {
                let px = k.project(&pose.transform(&Vec3::new(b.x, b.y, 0.0))).unwrap();
                Correspondence::new(px, b)
            })
            .collect()
    }

    #[test]
    fn fronto_parallel_pose_recovered() {
        let k = CameraIntrinsics::centered(766.0, 1088, 1080).unwrap();
        let truth = CameraPose::new(Mat3::identity(), Vec3::new(0.0, 0.0, 600.0)).unwrap();
        let h = estimate_homography(&synth(&truth, &k)).unwrap();
        let pose = pose_from_homography(&h, &k).unwrap();
        assert!((pose.translation_mm() - Vec3::new(0.0, 0.0, 600.0)).amax() < 1e-6);
        assert!((pose.rotation() - Mat3::identity()).amax() < 1e-6);
    }

    #[test]
    fn yawed_pose_recovered() {
        let k = CameraIntrinsics::centered(766.0, 1088, 1080).unwrap();
        let yaw = 20f64.to_radians();
        let rot = *nalgebra::Rotation3::from_axis_angle(&Vec3::y_axis(), yaw).matrix();
        let truth = CameraPose::new(rot, Vec3::new(10.0, -20.0, 650.0)).unwrap();
        let h = Homography::from_pose(&truth, &k).unwrap();
        let pose = pose_from_homography(&h, &k).unwrap();
        let r = pose.rotation();
        let recovered_yaw = r[(0, 2)].atan2(r[(0, 0)]);
        assert!((recovered_yaw.to_degrees() - 20.0).abs() < 1e-6);
        assert!((pose.camera_origin_board() - truth.camera_origin_board()).norm() < 1e-6);
    }
}
