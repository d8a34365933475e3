//! Per-segment local frames and the spherical transform onto S².

use serde::{Deserialize, Serialize};

use super::vec3::Vec3;
use crate::error::{Error, Result};

/// Tolerance below which the first→last direction counts as parallel to z.
const PARALLEL_TOL: f64 = 1e-6;
/// `sin θ` below this is treated as a pole, where φ is fixed to 0.
const POLE_TOL: f64 = 1e-9;

/// Right-handed orthonormal frame anchored at a segment's first point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    pub origin: Vec3,
    pub x_axis: Vec3,
    pub y_axis: Vec3,
    pub z_axis: Vec3,
    /// True when the first→last direction was parallel to z and a fixed
    /// perpendicular was used for y.
    pub degenerate: bool,
}

impl LocalFrame {
    /// Coordinates of a direction vector in this frame.
    pub fn rotate_in(&self, v: Vec3) -> Vec3 {
        Vec3::new(v.dot(self.x_axis), v.dot(self.y_axis), v.dot(self.z_axis))
    }

    /// Coordinates of a point in this frame.
    pub fn to_local(&self, p: Vec3) -> Vec3 {
        self.rotate_in(p - self.origin)
    }

    /// World position of local coordinates.
    pub fn to_world(&self, local: Vec3) -> Vec3 {
        self.origin + self.x_axis * local.x + self.y_axis * local.y + self.z_axis * local.z
    }
}

fn fallback_perpendicular(z: Vec3) -> Vec3 {
    let reference = if z.x.abs() < 0.9 { Vec3::X } else { Vec3::Y };
    (reference - z * reference.dot(z))
        .normalized()
        .expect("reference axis is not parallel to z")
}

/// Frame with z along `second - first` and `last - first` in the y-z plane
/// (non-negative y).
pub fn local_frame(first: Vec3, second: Vec3, last: Vec3) -> Result<LocalFrame> {
    let z = (second - first)
        .normalized()
        .ok_or_else(|| Error::Degenerate("first two segment points coincide".into()))?;
    let chord = last - first;
    if chord.norm() == 0.0 {
        return Err(Error::Degenerate("first and last segment points coincide".into()));
    }
    let perp = chord - z * chord.dot(z);
    let (y, degenerate) = if perp.norm() <= PARALLEL_TOL * chord.norm() {
        (fallback_perpendicular(z), true)
    } else {
        (perp.normalized().expect("non-zero perpendicular"), false)
    };
    Ok(LocalFrame {
        origin: first,
        x_axis: y.cross(z),
        y_axis: y,
        z_axis: z,
        degenerate,
    })
}

/// Frame of a segment given its resampled points.
pub fn segment_frame(points: &[Vec3]) -> Result<LocalFrame> {
    if points.len() < 2 {
        return Err(Error::Degenerate("segment needs at least two points".into()));
    }
    local_frame(points[0], points[1], points[points.len() - 1])
}

/// Spherical coordinates of a point plus its S² matrix
/// `M = [[sin θ, sin φ], [cos θ, cos φ]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct S2Coords {
    pub r: f64,
    pub theta: f64,
    pub phi: f64,
    pub sin_theta: f64,
    pub cos_theta: f64,
    pub sin_phi: f64,
    pub cos_phi: f64,
}

impl S2Coords {
    /// Matrix entries in row-major order: sin θ, sin φ, cos θ, cos φ.
    pub fn matrix(&self) -> [f64; 4] {
        [self.sin_theta, self.sin_phi, self.cos_theta, self.cos_phi]
    }

    /// Cartesian point recovered from `(r, θ, φ)`.
    pub fn to_cartesian(&self) -> Vec3 {
        Vec3::new(
            self.r * self.sin_theta * self.cos_phi,
            self.r * self.sin_theta * self.sin_phi,
            self.r * self.cos_theta,
        )
    }
}

/// Spherical transform of a point expressed in a local frame, with
/// `x = r sin θ cos φ`, `y = r sin θ sin φ`, `z = r cos θ`, θ ∈ [0, π] and
/// φ ∈ [0, 2π). The origin maps to r = θ = φ = 0 and poles to φ = 0.
pub fn sct_s2(p: Vec3) -> S2Coords {
    let r = p.norm();
    if r == 0.0 {
        return S2Coords {
            r: 0.0,
            theta: 0.0,
            phi: 0.0,
            sin_theta: 0.0,
            cos_theta: 1.0,
            sin_phi: 0.0,
            cos_phi: 1.0,
        };
    }
    let cos_theta = (p.z / r).clamp(-1.0, 1.0);
    let rho = p.x.hypot(p.y);
    let sin_theta = rho / r;
    let theta = rho.atan2(p.z);
    let (sin_phi, cos_phi, phi) = if sin_theta < POLE_TOL {
        (0.0, 1.0, 0.0)
    } else {
        let phi = p.y.atan2(p.x).rem_euclid(std::f64::consts::TAU);
        (p.y / rho, p.x / rho, phi)
    };
    S2Coords {
        r,
        theta,
        phi,
        sin_theta,
        cos_theta,
        sin_phi,
        cos_phi,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_frame() {
        let f = local_frame(
            Vec3::new(0., 0., 0.),
            Vec3::new(0., 0., 1.),
            Vec3::new(0., 1., 1.),
        )
        .unwrap();
        assert!(f.z_axis.distance(Vec3::Z) < 1e-15);
        assert!(f.y_axis.distance(Vec3::Y) < 1e-15);
        assert!(f.x_axis.distance(Vec3::X) < 1e-15);
        assert!(!f.degenerate);
    }

    #[test]
    fn straight_segment_uses_fallback() {
        let f = local_frame(Vec3::ZERO, Vec3::Z, Vec3::new(0., 0., 9.)).unwrap();
        assert!(f.degenerate);
        assert!(f.y_axis.dot(f.z_axis).abs() < 1e-15);
        assert!((f.x_axis.cross(f.y_axis).distance(f.z_axis)) < 1e-15);
    }

    #[test]
    fn coincident_points_are_rejected() {
        assert!(local_frame(Vec3::ZERO, Vec3::ZERO, Vec3::X).is_err());
        assert!(local_frame(Vec3::ZERO, Vec3::X, Vec3::ZERO).is_err());
    }

    #[test]
    fn north_pole_has_zero_theta() {
        let s = sct_s2(Vec3::new(0., 0., 4.));
        assert_eq!(s.theta, 0.0);
        assert_eq!(s.cos_theta, 1.0);
        assert_eq!(s.phi, 0.0);
        assert_eq!(s.r, 4.0);
    }

    #[test]
    fn origin_convention() {
        let s = sct_s2(Vec3::ZERO);
        assert_eq!((s.r, s.theta, s.phi), (0.0, 0.0, 0.0));
    }

    #[test]
    fn last_point_lies_in_yz_plane() {
        let f = local_frame(
            Vec3::new(1., 2., 3.),
            Vec3::new(1.5, 2.2, 3.9),
            Vec3::new(-4., 7., 2.),
        )
        .unwrap();
        let l = f.to_local(Vec3::new(-4., 7., 2.));
        assert!(l.x.abs() < 1e-12);
        assert!(l.y > 0.0);
    }
}
