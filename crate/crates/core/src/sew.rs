//! Shoulder-elbow-wrist (arm) angle.
//!
//! The elbow direction is the joint-4 axis `R_03 h_4`. The conventional angle
//! measures its projection onto the plane normal to the shoulder-wrist line,
//! starting from the projected reference direction; the ABB controller reports
//! the conventional angle plus a quarter turn. The sign-variant definition is
//! kept for comparison only: it does not match the controller.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{KinematicsError, Result};
use crate::model::{forward_kinematics, sew_geometry, FrameChain, JointVector, KinematicParams};
use crate::spatial::{e_y, e_z, wrap_to_pi, Vec3};

/// `|e_SW x e_r|` below this is a coordinate singularity.
pub const COORDINATE_HARD_TOL: f64 = 1e-8;
/// `|e_SW x e_r|` below this marks results as near-singular.
pub const COORDINATE_WARN_TOL: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    Conventional,
    Abb,
    /// Non-matching historical definition; diagnostics only.
    SignVariant,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Reference {
    Joint1Axis,
    WorldZ,
    WorldY,
    Custom(Vec3),
}

impl Reference {
    /// Unit reference direction in the base frame. The base is taken to be
    /// the world frame, so `WorldZ` and `Joint1Axis` coincide on the YuMi.
    pub fn direction(&self, params: &KinematicParams) -> Vec3 {
        match self {
            Reference::Joint1Axis => params.h[0],
            Reference::WorldZ => e_z(),
            Reference::WorldY => e_y(),
            Reference::Custom(v) => v.normalize(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SewConfig {
    pub e_r: Vec3,
    pub convention: Convention,
}

impl SewConfig {
    pub fn new(params: &KinematicParams, reference: Reference, convention: Convention) -> Self {
        SewConfig { e_r: reference.direction(params), convention }
    }

    pub fn angle(&self, params: &KinematicParams, chain: &FrameChain) -> Result<f64> {
        match self.convention {
            Convention::Conventional => sew_conventional(params, chain, &self.e_r),
            Convention::Abb => sew_abb(params, chain, &self.e_r),
            Convention::SignVariant => sew_sign_variant(params, chain, &self.e_r).map(|(psi, _)| psi),
        }
    }
}

/// Measurement frame: `e_zc` along the shoulder-wrist line, `e_xc` the
/// normalized projection of the reference direction, `e_yc = e_zc x e_xc`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SewFrame {
    pub e_xc: Vec3,
    pub e_yc: Vec3,
    pub e_zc: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SewAngles {
    pub psi_conv: f64,
    pub psi_abb: f64,
    pub psi_sign: f64,
    pub sigma: i8,
    /// The reference direction is within the warning band of the
    /// shoulder-wrist line.
    pub near_coordinate_singularity: bool,
}

fn coordinate_check(e_sw: &Vec3, e_r: &Vec3) -> Result<Vec3> {
    let cross = e_sw.cross(e_r);
    let n = cross.norm();
    if n < COORDINATE_HARD_TOL {
        return Err(KinematicsError::CoordinateSingularity { cross_norm: n });
    }
    Ok(cross / n)
}

pub fn sew_frame(p_sw: &Vec3, e_r: &Vec3) -> Result<SewFrame> {
    let n = p_sw.norm();
    if n <= 1e-9 {
        return Err(KinematicsError::ZeroShoulderWrist);
    }
    let e_zc = p_sw / n;
    let e_yc = coordinate_check(&e_zc, e_r)?;
    Ok(SewFrame { e_xc: e_yc.cross(&e_zc), e_yc, e_zc })
}

/// Conventional angle from the shoulder-wrist vector and the joint-4 axis.
pub fn psi_conventional(p_sw: &Vec3, h4_0: &Vec3, e_r: &Vec3) -> Result<f64> {
    let e_sw = p_sw.normalize();
    let cross = e_sw.cross(e_r);
    coordinate_check(&e_sw, e_r)?;
    let proj = e_r - e_sw * e_sw.dot(e_r);
    Ok(cross.dot(h4_0).atan2(proj.dot(h4_0)))
}

pub fn psi_abb(p_sw: &Vec3, h4_0: &Vec3, e_r: &Vec3) -> Result<f64> {
    psi_conventional(p_sw, h4_0, e_r).map(|psi| wrap_to_pi(psi + FRAC_PI_2))
}

pub fn psi_sign_variant(p_sw: &Vec3, h4_0: &Vec3, e_r: &Vec3) -> Result<(f64, i8)> {
    let frame = sew_frame(p_sw, e_r)?;
    let d = e_r.dot(h4_0);
    let sigma: i8 = if d > 0.0 {
        1
    } else if d < 0.0 {
        -1
    } else {
        0
    };
    let neg_y = -frame.e_yc;
    let psi = (f64::from(sigma) * neg_y.cross(h4_0).norm()).atan2(neg_y.dot(h4_0));
    Ok((psi, sigma))
}

pub fn sew_conventional(params: &KinematicParams, chain: &FrameChain, e_r: &Vec3) -> Result<f64> {
    let g = sew_geometry(params, chain)?;
    psi_conventional(&g.p_sw, &g.h4_0, e_r)
}

pub fn sew_abb(params: &KinematicParams, chain: &FrameChain, e_r: &Vec3) -> Result<f64> {
    let g = sew_geometry(params, chain)?;
    psi_abb(&g.p_sw, &g.h4_0, e_r)
}

pub fn sew_sign_variant(
    params: &KinematicParams,
    chain: &FrameChain,
    e_r: &Vec3,
) -> Result<(f64, i8)> {
    let g = sew_geometry(params, chain)?;
    psi_sign_variant(&g.p_sw, &g.h4_0, e_r)
}

pub fn sew_angles(params: &KinematicParams, chain: &FrameChain, e_r: &Vec3) -> Result<SewAngles> {
    let g = sew_geometry(params, chain)?;
    let psi_conv = psi_conventional(&g.p_sw, &g.h4_0, e_r)?;
    let (psi_sign, sigma) = psi_sign_variant(&g.p_sw, &g.h4_0, e_r)?;
    Ok(SewAngles {
        psi_conv,
        psi_abb: wrap_to_pi(psi_conv + FRAC_PI_2),
        psi_sign,
        sigma,
        near_coordinate_singularity: g.e_sw.cross(e_r).norm() < COORDINATE_WARN_TOL,
    })
}

/// Gradient of the arm angle with respect to the joints. The conventional
/// and ABB angles differ by a constant, so the row is shared.
///
/// Only joints 1-3 move the joint-4 axis, and joint 7 does not move the
/// wrist point, which lies on its axis.
pub fn sew_jacobian(params: &KinematicParams, q: &JointVector, e_r: &Vec3) -> Result<[f64; 7]> {
    let chain = forward_kinematics(params, q);
    let g = sew_geometry(params, &chain)?;
    let len = g.p_sw.norm();
    let e = g.e_sw;
    let h = g.h4_0;
    let cross_r = e.cross(e_r);
    if cross_r.norm() < COORDINATE_HARD_TOL {
        return Err(KinematicsError::SewJacobianUndefined("coordinate singularity".into()));
    }
    if e.cross(&h).norm() < COORDINATE_HARD_TOL {
        return Err(KinematicsError::SewJacobianUndefined(
            "shoulder-wrist line collinear with axis 4".into(),
        ));
    }
    let er_e = e_r.dot(&e);
    let e_h = e.dot(&h);
    let x = e_r.dot(&h) - er_e * e_h;
    let y = cross_r.dot(&h);
    let denom = x * x + y * y;

    let mut row = [0.0; 7];
    for (i, out) in row.iter_mut().enumerate() {
        let w = chain.axis(params, i + 1);
        let dp = w.cross(&(g.o_w - chain.origins[i + 1]));
        let dh = if i < 3 { w.cross(&h) } else { Vec3::zeros() };
        let de = (dp - e * e.dot(&dp)) / len;
        let dx = e_r.dot(&dh) - e_r.dot(&de) * e_h - er_e * (de.dot(&h) + e.dot(&dh));
        let dy = de.cross(e_r).dot(&h) + cross_r.dot(&dh);
        *out = (x * dy - y * dx) / denom;
    }
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::yumi_params;
    use crate::spatial::e_x;
    use approx::assert_relative_eq;

    fn angles(q_deg: [f64; 7], e_r: Vec3) -> SewAngles {
        let params = yumi_params();
        let chain = forward_kinematics(&params, &JointVector::from_degrees(q_deg));
        sew_angles(&params, &chain, &e_r).unwrap()
    }

    #[test]
    fn frame_at_zero_configuration() {
        let f = sew_frame(&Vec3::new(305.5, 0.0, 292.0), &e_z()).unwrap();
        assert_relative_eq!(f.e_yc, -e_y(), epsilon = 1e-15);
        assert_relative_eq!(f.e_zc.cross(&f.e_xc), f.e_yc, epsilon = 1e-15);
        assert!(f.e_xc.dot(&f.e_zc).abs() < 1e-15);
    }

    #[test]
    fn frame_rejects_collinear_reference() {
        let err = sew_frame(&Vec3::new(0.0, 0.0, 300.0), &e_z()).unwrap_err();
        assert!(matches!(err, KinematicsError::CoordinateSingularity { .. }));
    }

    #[test]
    fn zero_configuration_angles() {
        let a = angles([0.0; 7], e_z());
        assert_relative_eq!(a.psi_conv, -FRAC_PI_2, epsilon = 1e-15);
        assert_relative_eq!(a.psi_abb, 0.0, epsilon = 1e-15);
        assert_eq!(a.sigma, 0);
        assert_eq!(a.psi_sign, 0.0);
        let a = angles([0.0; 7], e_y());
        assert_relative_eq!(a.psi_conv, 0.0, epsilon = 1e-15);
        assert_relative_eq!(a.psi_abb.to_degrees(), 90.0, epsilon = 1e-12);
        assert_relative_eq!(a.psi_sign.to_degrees(), 90.0, epsilon = 1e-12);
    }

    #[test]
    fn direction_only() {
        let p = Vec3::new(120.0, -40.0, 300.0);
        let h = Vec3::new(0.2, 0.9, -0.1).normalize();
        let a = psi_conventional(&p, &h, &e_z()).unwrap();
        let b = psi_conventional(&(p * 2.0), &h, &e_z()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn abb_matches_closed_form() {
        // psi_abb = atan2(-e_r^T e^x^2 h, e_r^T e^x h)
        let p = Vec3::new(120.0, -40.0, 300.0);
        let e = p.normalize();
        let h = Vec3::new(0.2, 0.9, -0.1).normalize();
        for e_r in [e_x(), e_y(), e_z()] {
            let ex_h = e.cross(&h);
            let ex2_h = e.cross(&ex_h);
            let expected = (-e_r.dot(&ex2_h)).atan2(e_r.dot(&ex_h));
            let got = psi_abb(&p, &h, &e_r).unwrap();
            assert!((wrap_to_pi(got - expected)).abs() < 1e-14);
        }
    }

    #[test]
    fn jacobian_conventions_share_row() {
        let params = yumi_params();
        let q = JointVector::from_degrees([20.0; 7]);
        let j = sew_jacobian(&params, &q, &e_z()).unwrap();
        let h = 1e-6;
        for i in 0..7 {
            let mut qp = q;
            let mut qm = q;
            qp[i] += h;
            qm[i] -= h;
            let fd = |cfg: Convention| {
                let c = SewConfig { e_r: e_z(), convention: cfg };
                let a = c.angle(&params, &forward_kinematics(&params, &qp)).unwrap();
                let b = c.angle(&params, &forward_kinematics(&params, &qm)).unwrap();
                wrap_to_pi(a - b) / (2.0 * h)
            };
            let (c, a) = (fd(Convention::Conventional), fd(Convention::Abb));
            assert!((c - a).abs() < 1e-8);
            assert!((j[i] - c).abs() < 1e-6 * j[i].abs().max(1.0));
        }
        assert_eq!(j[6], 0.0);
    }

    #[test]
    fn shoulder_counterrotation_keeps_psi() {
        let params = yumi_params();
        let q = JointVector::from_degrees([30.0, 0.0, -50.0, 40.0, 70.0, 60.0, -20.0]);
        let base = sew_abb(&params, &forward_kinematics(&params, &q), &e_z()).unwrap();
        for d in [0.01, 0.05, 0.1] {
            let mut moved = q;
            moved[0] += d;
            moved[2] -= d;
            let psi = sew_abb(&params, &forward_kinematics(&params, &moved), &e_z()).unwrap();
            assert!(wrap_to_pi(psi - base).abs() <= 1e-9);
        }
    }

    #[test]
    fn wrist_counterrotation_keeps_psi() {
        let params = yumi_params();
        let q = JointVector::from_degrees([30.0, -40.0, -50.0, 40.0, 70.0, 0.0, -20.0]);
        let base = sew_abb(&params, &forward_kinematics(&params, &q), &e_z()).unwrap();
        for d in [0.01, 0.05, 0.1] {
            let mut moved = q;
            moved[4] += d;
            moved[6] -= d;
            let chain = forward_kinematics(&params, &moved);
            let psi = sew_abb(&params, &chain, &e_z()).unwrap();
            assert!(wrap_to_pi(psi - base).abs() <= 1e-9);
        }
    }
}
