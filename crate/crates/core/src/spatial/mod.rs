//! Coordinate-level 3D primitives shared by every other module, plus the
//! canonical rotation subproblems in [`subproblem`].

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Unit, Vector3};

mod poly;
pub mod subproblem;

pub use subproblem::{
    subproblem1, subproblem4, subproblem5, subproblem5_continued, Sp1Solution, Sp4Solution,
    Sp5Continued, Sp5Solution,
};

/// A 3-vector; millimeters for positions, unitless for directions.
pub type Vec3 = Vector3<f64>;
/// A 3-vector known to have unit length.
pub type UnitVec3 = Unit<Vector3<f64>>;
/// A proper rotation matrix.
pub type Rot3 = Matrix3<f64>;

pub fn e_x() -> Vec3 {
    Vec3::x()
}

pub fn e_y() -> Vec3 {
    Vec3::y()
}

pub fn e_z() -> Vec3 {
    Vec3::z()
}

/// Skew-symmetric cross-product operator: `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -v.z, v.y, //
        v.z, 0.0, -v.x, //
        -v.y, v.x, 0.0,
    )
}

/// Rotation about the unit axis `k` by `theta` (Rodrigues' formula).
pub fn rot(k: &Vec3, theta: f64) -> Rot3 {
    let (s, c) = theta.sin_cos();
    let kx = skew(k);
    Rot3::identity() + kx * s + kx * kx * (1.0 - c)
}

/// Rotates `v` about the unit axis `k` without building the matrix.
#[inline]
pub fn rotate(k: &Vec3, theta: f64, v: &Vec3) -> Vec3 {
    let (s, c) = theta.sin_cos();
    let kv = k.dot(v);
    v * c + k.cross(v) * s + k * (kv * (1.0 - c))
}

/// Wraps an angle to the half-open interval (-pi, pi]; `-pi` maps to `pi`.
pub fn wrap_to_pi(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Smallest absolute difference between two angles modulo 2*pi.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    wrap_to_pi(a - b).abs()
}

/// Rotation angle of `a^T b`, i.e. the geodesic distance between two rotations.
pub fn rotation_distance(a: &Rot3, b: &Rot3) -> f64 {
    let m = a.transpose() * b;
    // sin from the skew part keeps precision near zero
    let skew_part = Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let s = 0.5 * skew_part.norm();
    let c = 0.5 * (m.trace() - 1.0);
    s.atan2(c)
}

/// Rotation vector `theta * k` of `r = rot(k, theta)`, with `theta` in
/// `[0, pi]`. Accurate near the identity, where `acos` of the trace is not.
pub fn rotation_log(r: &Rot3) -> Vec3 {
    let skew_part = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let s = 0.5 * skew_part.norm();
    let c = 0.5 * (r.trace() - 1.0);
    let theta = s.atan2(c);
    if c > -0.9 {
        let scale = if s < 1e-300 { 0.5 } else { 0.5 * theta / s };
        return skew_part * scale;
    }
    // Near a half turn the axis comes from the symmetric part.
    let b = (r + r.transpose()) * 0.5 - Rot3::identity() * c;
    let col = (0..3).max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)])).unwrap_or(0);
    let mut k = b.column(col).into_owned().normalize();
    if k.dot(&skew_part) < 0.0 {
        k = -k;
    }
    k * theta
}

pub fn is_rotation(r: &Rot3, tol: f64) -> bool {
    (r.transpose() * r - Rot3::identity()).amax() <= tol && (r.determinant() - 1.0).abs() <= tol
}

pub fn deg(rad: f64) -> f64 {
    rad.to_degrees()
}

pub fn rad(deg: f64) -> f64 {
    deg.to_radians()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn skew_matches_cross_product() {
        assert_relative_eq!(skew(&e_z()) * e_x(), e_y());
        let v = Vec3::new(0.3, -1.2, 2.0);
        assert_relative_eq!(skew(&v) * v, Vec3::zeros());
        let m = skew(&e_x());
        let expected = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert_eq!(m, expected);
        assert_eq!(m, -m.transpose());
    }

    #[test]
    fn quarter_turns() {
        assert_relative_eq!(rot(&e_z(), PI / 2.0) * e_x(), e_y(), epsilon = 1e-15);
        let r7t = Rot3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0);
        assert_relative_eq!(rot(&e_y(), PI / 2.0), r7t, epsilon = 1e-15);
        assert_eq!(rot(&e_x(), 0.0), Rot3::identity());
    }

    #[test]
    fn wrap_boundaries() {
        assert_eq!(wrap_to_pi(0.0), 0.0);
        assert_relative_eq!(wrap_to_pi(1.5 * PI), -PI / 2.0, epsilon = 1e-15);
        assert_eq!(wrap_to_pi(-PI), PI);
        assert_eq!(wrap_to_pi(PI), PI);
    }

    fn unit() -> impl Strategy<Value = Vec3> {
        (0.0..TAU, -1.0f64..1.0).prop_map(|(az, z)| {
            let r = (1.0 - z * z).sqrt();
            Vec3::new(r * az.cos(), r * az.sin(), z)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn rot_is_proper(k in unit(), theta in -10.0f64..10.0) {
            let r = rot(&k, theta);
            prop_assert!(is_rotation(&r, 1e-12));
            prop_assert!((r * k - k).norm() < 1e-12);
            prop_assert!((r * rot(&k, -theta) - Rot3::identity()).amax() < 1e-12);
            let v = Vec3::new(1.0, -2.0, 0.5);
            prop_assert!((rotate(&k, theta, &v) - r * v).norm() < 1e-12);
        }

        #[test]
        fn rotation_log_inverts_rot(
            x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0, theta in 0.0f64..3.14159,
        ) {
            let k = Vec3::new(x, y, z);
            prop_assume!(k.norm() > 1e-3);
            let k = k.normalize();
            let w = rotation_log(&rot(&k, theta));
            prop_assert!((w - k * theta).norm() < 1e-9);
        }

        #[test]
        fn wrap_is_congruent(theta in -100.0f64..100.0) {
            let w = wrap_to_pi(theta);
            prop_assert!(w > -PI && w <= PI);
            let turns = (theta - w) / TAU;
            prop_assert!((turns - turns.round()).abs() < 1e-9);
        }
    }
}
