//! Product-of-exponentials model of the YuMi arm: kinematic parameters,
//! forward kinematics, joint limits, joint orderings and the shoulder/wrist
//! points used by the SEW angle.

use std::f64::consts::TAU;
use std::ops::{Index, IndexMut};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KinematicsError, Result};
use crate::spatial::{e_x, e_y, e_z, rot, rotation_distance, Rot3, Vec3};

/// Seven joint angles in radians, in product-of-exponentials order
/// (`q[2]` is the third joint, which RobotStudio lists last).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JointVector(pub [f64; 7]);

impl JointVector {
    pub fn zeros() -> Self {
        JointVector([0.0; 7])
    }

    pub fn from_degrees(deg: [f64; 7]) -> Self {
        JointVector(deg.map(f64::to_radians))
    }

    pub fn to_degrees(&self) -> [f64; 7] {
        self.0.map(f64::to_degrees)
    }

    pub fn as_array(&self) -> &[f64; 7] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }
}

impl Index<usize> for JointVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for JointVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl From<[f64; 7]> for JointVector {
    fn from(q: [f64; 7]) -> Self {
        JointVector(q)
    }
}

/// Link offsets `p_{i-1,i}` (mm), tool offset, joint axes and tool rotation,
/// all read off in the base frame at the zero configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct KinematicParams {
    pub p_link: [Vec3; 7],
    pub p_7t: Vec3,
    pub h: [Vec3; 7],
    pub r_7t: Rot3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointLimits {
    pub q_min: [f64; 7],
    pub q_max: [f64; 7],
}

/// Orientation and position (mm) of a frame in the base frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub r: Rot3,
    pub p: Vec3,
}

impl Pose {
    pub fn new(r: Rot3, p: Vec3) -> Self {
        Pose { r, p }
    }

    /// Rotation angle (rad) and position distance (mm) between two poses.
    pub fn distance(&self, other: &Pose) -> (f64, f64) {
        (rotation_distance(&self.r, &other.r), (self.p - other.p).norm())
    }
}

/// Cumulative link rotations and joint-frame origins for one configuration.
#[derive(Clone, Debug)]
pub struct FrameChain {
    /// `r0[i]` is `R_{0i}`; `r0[0]` is the identity.
    pub r0: [Rot3; 8],
    /// `origins[i]` is `O_i`; `origins[0]` is the base origin.
    pub origins: [Vec3; 8],
    pub tool: Pose,
}

impl FrameChain {
    /// Pose of frame 7.
    pub fn wrist(&self) -> Pose {
        Pose::new(self.r0[7], self.origins[7])
    }

    /// Axis `i` (1-based) expressed in the base frame.
    pub fn axis(&self, params: &KinematicParams, i: usize) -> Vec3 {
        self.r0[i - 1] * params.h[i - 1]
    }
}

/// Shoulder and wrist points with the derived shoulder-wrist direction.
#[derive(Clone, Copy, Debug)]
pub struct SewGeometry {
    pub o_s: Vec3,
    pub o_w: Vec3,
    pub p_sw: Vec3,
    pub e_sw: Vec3,
    /// Axis 4 direction in the base frame, `R_03 h_4`.
    pub h4_0: Vec3,
}

pub fn yumi_params() -> KinematicParams {
    KinematicParams {
        p_link: [
            Vec3::new(0.0, 0.0, 306.0),
            Vec3::new(-30.0, 0.0, 0.0),
            Vec3::new(30.0, 0.0, 0.0),
            Vec3::new(40.5, 0.0, 251.5),
            Vec3::new(0.0, 0.0, 40.5),
            // Negative z offset: with it, axes 5 and 7 intersect (collinear
            // at q6 = 0) and FK agrees with controller-reported arm angles.
            Vec3::new(265.0, 0.0, -27.0),
            Vec3::new(0.0, 0.0, 27.0),
        ],
        p_7t: Vec3::new(36.0, 0.0, 0.0),
        h: [e_z(), e_y(), e_z(), e_y(), e_x(), e_y(), e_x()],
        r_7t: Rot3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0),
    }
}

pub fn yumi_limits() -> JointLimits {
    let q_min = [-168.5, -143.5, -168.5, -123.5, -290.0, -88.0, -229.0];
    let q_max = [168.5, 43.5, 168.5, 80.0, 290.0, 138.0, 229.0];
    JointLimits { q_min: q_min.map(f64::to_radians), q_max: q_max.map(f64::to_radians) }
}

/// On-disk parameter file; lengths in mm, limits in degrees.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamFile {
    pub p_link: [[f64; 3]; 7],
    #[serde(rename = "p_7T")]
    pub p_7t: [f64; 3],
    pub h: [[f64; 3]; 7],
    /// Row-major.
    #[serde(rename = "R_7T")]
    pub r_7t: [[f64; 3]; 3],
    pub q_min_deg: [f64; 7],
    pub q_max_deg: [f64; 7],
}

impl ParamFile {
    pub fn from_model(params: &KinematicParams, limits: &JointLimits) -> Self {
        let v = |x: &Vec3| [x.x, x.y, x.z];
        ParamFile {
            p_link: params.p_link.each_ref().map(v),
            p_7t: v(&params.p_7t),
            h: params.h.each_ref().map(v),
            r_7t: [0, 1, 2].map(|i| [0, 1, 2].map(|j| params.r_7t[(i, j)])),
            q_min_deg: limits.q_min.map(f64::to_degrees),
            q_max_deg: limits.q_max.map(f64::to_degrees),
        }
    }

    pub fn into_model(self) -> Result<(KinematicParams, JointLimits)> {
        let v = |a: [f64; 3]| Vec3::new(a[0], a[1], a[2]);
        let r = self.r_7t;
        let params = KinematicParams {
            p_link: self.p_link.map(v),
            p_7t: v(self.p_7t),
            h: self.h.map(v),
            r_7t: Rot3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
        };
        for (i, h) in params.h.iter().enumerate() {
            if (h.norm() - 1.0).abs() > 1e-12 {
                return Err(KinematicsError::InvalidParams(format!("h{} is not unit length", i + 1)));
            }
        }
        if !crate::spatial::is_rotation(&params.r_7t, 1e-10) {
            return Err(KinematicsError::InvalidParams("R_7T is not a proper rotation".into()));
        }
        let limits = JointLimits {
            q_min: self.q_min_deg.map(f64::to_radians),
            q_max: self.q_max_deg.map(f64::to_radians),
        };
        if limits.q_min.iter().zip(&limits.q_max).any(|(lo, hi)| !(lo < hi)) {
            return Err(KinematicsError::InvalidParams("q_min must be below q_max".into()));
        }
        Ok((params, limits))
    }
}

/// The shipped default parameter file.
pub const DEFAULT_PARAMS_JSON: &str = include_str!("../fixtures/yumi_params.json");

pub fn load_params(path: &Path) -> Result<(KinematicParams, JointLimits)> {
    let text = std::fs::read_to_string(path)?;
    parse_params(&text)
}

pub fn parse_params(json: &str) -> Result<(KinematicParams, JointLimits)> {
    serde_json::from_str::<ParamFile>(json)?.into_model()
}

pub fn forward_kinematics(params: &KinematicParams, q: &JointVector) -> FrameChain {
    let mut r0 = [Rot3::identity(); 8];
    let mut origins = [Vec3::zeros(); 8];
    for i in 0..7 {
        origins[i + 1] = origins[i] + r0[i] * params.p_link[i];
        r0[i + 1] = r0[i] * rot(&params.h[i], q[i]);
    }
    let tool = Pose::new(r0[7] * params.r_7t, origins[7] + r0[7] * params.p_7t);
    FrameChain { r0, origins, tool }
}

/// Frame-7 pose from a tool pose by undoing the fixed tool transform.
pub fn wrist_pose(params: &KinematicParams, tool: &Pose) -> Pose {
    let r07 = tool.r * params.r_7t.transpose();
    Pose::new(r07, tool.p - r07 * params.p_7t)
}

pub fn tool_pose(params: &KinematicParams, wrist: &Pose) -> Pose {
    Pose::new(wrist.r * params.r_7t, wrist.p + wrist.r * params.p_7t)
}

pub fn sew_geometry(params: &KinematicParams, chain: &FrameChain) -> Result<SewGeometry> {
    let o_s = chain.origins[1];
    let o_w = chain.origins[7];
    let p_sw = o_w - o_s;
    let n = p_sw.norm();
    if n <= 1e-9 {
        return Err(KinematicsError::ZeroShoulderWrist);
    }
    Ok(SewGeometry { o_s, o_w, p_sw, e_sw: p_sw / n, h4_0: chain.r0[3] * params.h[3] })
}

/// `[q1 q2 q4 q5 q6 q7 q3]`, the joint order shown by RobotStudio.
pub fn to_robotstudio_order(q: &JointVector) -> [f64; 7] {
    [q[0], q[1], q[3], q[4], q[5], q[6], q[2]]
}

pub fn from_robotstudio_order(rs: &[f64; 7]) -> JointVector {
    JointVector([rs[0], rs[1], rs[6], rs[2], rs[3], rs[4], rs[5]])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LimitViolation {
    /// 1-based joint number.
    pub joint: usize,
    pub value: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LimitCheck {
    pub within: bool,
    pub violations: Vec<LimitViolation>,
}

pub fn within_limits(q: &JointVector, limits: &JointLimits) -> LimitCheck {
    let violations: Vec<_> = (0..7)
        .filter(|&i| q[i] < limits.q_min[i] || q[i] > limits.q_max[i])
        .map(|i| LimitViolation {
            joint: i + 1,
            value: q[i],
            min: limits.q_min[i],
            max: limits.q_max[i],
        })
        .collect();
    LimitCheck { within: violations.is_empty(), violations }
}

/// All in-limit variants of `q` obtained by adding whole turns to joints
/// whose range exceeds one revolution (joints 5 and 7 on the YuMi).
pub fn enumerate_2pi_shifts(q: &JointVector, limits: &JointLimits) -> Vec<JointVector> {
    let mut options: Vec<Vec<f64>> = Vec::with_capacity(7);
    for i in 0..7 {
        let (lo, hi) = (limits.q_min[i], limits.q_max[i]);
        if hi - lo > TAU {
            let n_lo = ((lo - q[i]) / TAU).ceil() as i64;
            let n_hi = ((hi - q[i]) / TAU).floor() as i64;
            options.push((n_lo..=n_hi).map(|n| q[i] + n as f64 * TAU).collect());
        } else if q[i] >= lo && q[i] <= hi {
            options.push(vec![q[i]]);
        } else {
            return Vec::new();
        }
    }
    let mut out = vec![JointVector::zeros()];
    for (i, vals) in options.iter().enumerate() {
        out = out
            .into_iter()
            .flat_map(|base| {
                vals.iter().map(move |&v| {
                    let mut next = base;
                    next[i] = v;
                    next
                })
            })
            .collect();
    }
    out
}
