//! Angular perturbation of unit directions.
//!
//! A direction is rotated by angle `θ` about a random axis perpendicular to
//! it, where the tangent-plane offset `(a, b)` has i.i.d. normal components
//! with standard deviation `rms / √2`. The resulting angular error is
//! exactly Rayleigh distributed with RMS `rms`, so its mean is
//! `rms · √π / 2`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularNoise {
    /// Root-mean-square angular deviation, degrees.
    pub rms_deg: f64,
}

impl AngularNoise {
    pub fn new(rms_deg: f64) -> Self {
        Self { rms_deg }
    }

    /// Noise whose expected angular error equals `mean_deg`.
    pub fn with_mean(mean_deg: f64) -> Self {
        Self { rms_deg: mean_deg * 2.0 / std::f64::consts::PI.sqrt() }
    }

    /// Analytic mean angular error in degrees.
    pub fn mean_deg(&self) -> f64 {
        self.rms_deg * std::f64::consts::PI.sqrt() / 2.0
    }

    pub fn perturb<R: Rng + ?Sized>(&self, v: &Vec3, rng: &mut R) -> Vec3 {
        let sigma = self.rms_deg.to_radians() / std::f64::consts::SQRT_2;
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        rotate_in_tangent(v, a * sigma, b * sigma)
    }
}

/// Orthonormal pair spanning the plane perpendicular to `v`.
pub fn tangent_basis(v: &Vec3) -> (Vec3, Vec3) {
    let v = v.normalize();
    let helper = if v.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = v.cross(&helper).normalize();
    let e2 = v.cross(&e1);
    (e1, e2)
}

/// Exponential map on the unit sphere at `v` with tangent offset `(a, b)`.
pub fn rotate_in_tangent(v: &Vec3, a: f64, b: f64) -> Vec3 {
    let v = v.normalize();
    let (e1, e2) = tangent_basis(&v);
    let w = e1 * a + e2 * b;
    let theta = w.norm();
    if theta == 0.0 {
        return v;
    }
    (v * theta.cos() + w * (theta.sin() / theta)).normalize()
}

/// Uniform direction on the hemisphere facing `-z` (toward a camera).
pub fn uniform_frontal<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let x: f64 = StandardNormal.sample(rng);
        let y: f64 = StandardNormal.sample(rng);
        let z: f64 = StandardNormal.sample(rng);
        let v = Vec3::new(x, y, z);
        let n = v.norm();
        if n > 1e-9 {
            let v = v / n;
            return Vec3::new(v.x, v.y, -v.z.abs());
        }
    }
}
