use super::{CameraPose, GeometryError};
use crate::Vec3;

/// Unit gaze direction in the camera frame from `eye_origin_camera_mm`
/// toward a board-frame target.
pub fn gaze_label(
    pose: &CameraPose,
    eye_origin_camera_mm: &Vec3,
    target_board_mm: &Vec3,
) -> Result<Vec3, GeometryError> {
    let d = pose.transform(target_board_mm) - eye_origin_camera_mm;
    let n = d.norm();
    if !(n.is_finite() && n > 0.0) {
        return Err(GeometryError::DegenerateGeometry("gaze target coincides with eye origin"));
    }
    Ok(d / n)
}

/// Angle between two directions in degrees, in `[0, 180]`.
///
/// Inputs are renormalized. Evaluated as `atan2(|a×b|, a·b)`, which equals
/// the clamped arccosine of the dot product but keeps full precision near 0°
/// and 180°.
pub fn angular_error_deg(v1: &Vec3, v2: &Vec3) -> Result<f64, GeometryError> {
    let (n1, n2) = (v1.norm(), v2.norm());
    if !(n1 > 0.0 && n2 > 0.0 && n1.is_finite() && n2.is_finite()) {
        return Err(GeometryError::DegenerateGeometry("zero-length direction"));
    }
    let a = v1 / n1;
    let b = v2 / n2;
    let cos = a.dot(&b).clamp(-1.0, 1.0);
    let sin = a.cross(&b).norm();
    Ok(sin.atan2(cos).to_degrees())
}

/// Pitch/yaw (radians) of a camera-frame gaze direction.
///
/// `pitch = asin(-y)`, `yaw = atan2(-x, -z)`: looking straight into the
/// camera is `(0, 0)`. Yaw is undefined at `|pitch| = π/2` and returned as 0.
pub fn vector_to_pitchyaw(v: &Vec3) -> (f64, f64) {
    let v = v.normalize();
    let pitch = (-v.y).clamp(-1.0, 1.0).asin();
    let yaw = if v.x == 0.0 && v.z == 0.0 { 0.0 } else { (-v.x).atan2(-v.z) };
    (pitch, yaw)
}

pub fn pitchyaw_to_vector(pitch: f64, yaw: f64) -> Vec3 {
    Vec3::new(-pitch.cos() * yaw.sin(), -pitch.sin(), -pitch.cos() * yaw.cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{seed, Mat3};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn label_examples() {
        let id = CameraPose::identity();
        let v = gaze_label(&id, &Vec3::zeros(), &Vec3::new(0.0, 0.0, 500.0)).unwrap();
        assert_eq!(v, Vec3::new(0.0, 0.0, 1.0));
        let v = gaze_label(&id, &Vec3::zeros(), &Vec3::new(500.0, 0.0, 500.0)).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((v - Vec3::new(h, 0.0, h)).norm() < 1e-15);
        assert!(matches!(
            gaze_label(&id, &Vec3::new(1.0, 2.0, 3.0), &Vec3::new(1.0, 2.0, 3.0)),
            Err(GeometryError::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn label_matches_componentwise_oracle() {
        let mut rng = seed::rng(3);
        for _ in 0..200 {
            let axis = Vec3::new(rng.random(), rng.random(), rng.random()) - Vec3::repeat(0.5);
            let angle = rng.random_range(-3.0..3.0);
            let rot = *nalgebra::Rotation3::new(axis.normalize() * angle).matrix();
            let t = Vec3::new(rng.random_range(-200.0..200.0), rng.random_range(-200.0..200.0), 600.0);
            let pose = CameraPose::new(rot, t).unwrap();
            let target = Vec3::new(rng.random_range(-300.0..300.0), rng.random_range(-150.0..150.0), 0.0);
            let eye = Vec3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), 0.0);

            let r: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| rot[(i, j)]));
            let mut d = [0.0; 3];
            for i in 0..3 {
                d[i] = r[i][0] * target.x + r[i][1] * target.y + r[i][2] * target.z + t[i] - eye[i];
            }
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let got = gaze_label(&pose, &eye, &target).unwrap();
            for i in 0..3 {
                assert!((got[i] - d[i] / n).abs() < 1e-12);
            }
            assert!((got.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn angle_examples() {
        let v = Vec3::new(0.3, -0.2, 0.9).normalize();
        assert_eq!(angular_error_deg(&v, &v).unwrap(), 0.0);
        assert!((angular_error_deg(&Vec3::x(), &Vec3::y()).unwrap() - 90.0).abs() < 1e-12);
        let a = 3.81f64.to_radians();
        let w = Vec3::new(a.sin(), 0.0, a.cos());
        assert!((angular_error_deg(&Vec3::z(), &w).unwrap() - 3.81).abs() < 1e-9);
        assert!((angular_error_deg(&Vec3::z(), &-Vec3::z()).unwrap() - 180.0).abs() < 1e-12);
        assert!(angular_error_deg(&Vec3::zeros(), &Vec3::z()).is_err());
    }

    #[test]
    fn pitchyaw_examples() {
        assert_eq!(vector_to_pitchyaw(&Vec3::new(0.0, 0.0, -1.0)), (0.0, 0.0));
        let t = 10f64.to_radians();
        let (p, y) = vector_to_pitchyaw(&Vec3::new(0.0, -t.sin(), -t.cos()));
        assert!((p - t).abs() < 1e-15 && y == 0.0);
        let (p, y) = vector_to_pitchyaw(&Vec3::new(0.0, -1.0, 0.0));
        assert!((p - std::f64::consts::FRAC_PI_2).abs() < 1e-15 && y == 0.0);
    }

    fn unit() -> impl Strategy<Value = Vec3> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
            .prop_filter("non-zero", |(x, y, z)| x * x + y * y + z * z > 1e-3)
            .prop_map(|(x, y, z)| Vec3::new(x, y, z).normalize())
    }

    proptest! {
        #[test]
        fn pitchyaw_round_trip(v in unit().prop_filter("away from gimbal", |v| v.y.abs() < 0.999)) {
            let (p, y) = vector_to_pitchyaw(&v);
            prop_assert!((pitchyaw_to_vector(p, y) - v).norm() < 1e-12);
        }

        #[test]
        fn angle_is_symmetric_and_rotation_invariant(
            a in unit(), b in unit(), axis in unit(), angle in -3.0f64..3.0
        ) {
            let ab = angular_error_deg(&a, &b).unwrap();
            let ba = angular_error_deg(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=180.0).contains(&ab));
            let r: Mat3 = *nalgebra::Rotation3::new(axis * angle).matrix();
            let rab = angular_error_deg(&(r * a), &(r * b)).unwrap();
            prop_assert!((rab - ab).abs() < 1e-9);
        }

        #[test]
        fn zero_iff_parallel(a in unit(), s in 0.1f64..10.0) {
            prop_assert!(angular_error_deg(&a, &(a * s)).unwrap() < 1e-9);
        }
    }
}
