//! Inverse kinematics for a tool pose plus arm angle.
//!
//! Fixing `(q1, q2)` reduces the problem to closed-form subproblems. The arm
//! angle confines the joint-4 axis to a half-plane through the shoulder-wrist
//! line, which gives `q3` (Subproblem 4). The wrist position then gives
//! `(q5, q6, q7)` (Subproblem 5), and the orientation is consistent only if
//! the remaining rotation is about `h_4`. The zeros of that orientation error
//! over `(q1, q2)` are the solutions; `q4` follows from Subproblem 1.
//!
//! The alternative nested search fixes `q1`, treats the arm as a 6-DOF chain
//! with intersecting axes 5 and 7, searches over `q6`, and then intersects
//! the resulting arm-angle-versus-`q1` curves with the requested angle.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Matrix2, Matrix6, Matrix6x2, SVector, Vector2, Vector6};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{KinematicsError, Result};
use crate::model::{
    enumerate_2pi_shifts, forward_kinematics, within_limits, wrist_pose, JointLimits, JointVector,
    KinematicParams, Pose,
};
use crate::sew::{sew_frame, Convention, SewConfig};
use crate::jacobian::{augmented_jacobian, kinematic_jacobian, Matrix7, CHARACTERISTIC_LENGTH_MM};
use crate::spatial::{
    angle_distance, rot, rotation_log, subproblem1, subproblem4, subproblem5, subproblem5_continued, wrap_to_pi,
    Rot3, Vec3,
};

/// Rotation residual (rad) every emitted solution must meet.
pub const POSE_ROT_TOL: f64 = 1e-8;
/// Position residual (mm) every emitted solution must meet.
pub const POSE_POS_TOL_MM: f64 = 1e-6;
/// Arm-angle residual (rad) every emitted solution must meet.
pub const PSI_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IkRequest {
    pub tool_pose: Pose,
    /// Requested arm angle in `convention`, radians.
    pub psi: f64,
    pub convention: Convention,
    pub e_r: Vec3,
}

impl IkRequest {
    pub fn new(tool_pose: Pose, psi: f64, convention: Convention, e_r: Vec3) -> Self {
        IkRequest { tool_pose, psi: wrap_to_pi(psi), convention, e_r: e_r.normalize() }
    }

    /// The request whose solution set contains `q`.
    pub fn from_configuration(
        params: &KinematicParams,
        q: &JointVector,
        convention: Convention,
        e_r: Vec3,
    ) -> Result<Self> {
        let chain = forward_kinematics(params, q);
        let psi = SewConfig { e_r: e_r.normalize(), convention }.angle(params, &chain)?;
        Ok(IkRequest::new(chain.tool, psi, convention, e_r))
    }

    /// The requested angle in the conventional definition.
    pub fn psi_conventional(&self) -> Result<f64> {
        match self.convention {
            Convention::Conventional => Ok(self.psi),
            Convention::Abb => Ok(wrap_to_pi(self.psi - FRAC_PI_2)),
            Convention::SignVariant => Err(KinematicsError::InvalidInput(
                "inverse kinematics is defined for the conventional and ABB arm angles only".into(),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SearchSettings {
    /// Grid spacing of the 2D search and of the 1D samples (rad).
    pub grid_step: f64,
    /// Grid minima of the branch error above this are not polished.
    pub minimum_threshold: f64,
    /// Branch error at which polishing stops.
    pub polish_tolerance: f64,
    pub max_polish_iters: usize,
    /// Componentwise distance (rad, modulo 2*pi) below which solutions merge.
    pub dedup_tolerance: f64,
    /// `[(q1_lo, q1_hi), (q2_lo, q2_hi)]`; the 1D searches use the `q1` range.
    pub search_domain: [(f64, f64); 2],
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings {
            grid_step: 0.5f64.to_radians(),
            minimum_threshold: 0.1,
            polish_tolerance: 1e-10,
            max_polish_iters: 100,
            dedup_tolerance: 1e-6,
            search_domain: [(-PI, PI), (-PI, PI)],
        }
    }
}

impl SearchSettings {
    pub fn validate(&self) -> Result<()> {
        let ok_step = self.grid_step.is_finite() && self.grid_step > 0.0;
        let ok_domain = self.search_domain.iter().all(|(lo, hi)| lo.is_finite() && hi > lo);
        if !ok_step || !ok_domain {
            return Err(KinematicsError::InvalidInput(
                "grid_step must be positive and the search domain nonempty".into(),
            ));
        }
        Ok(())
    }
}

/// Pose and arm-angle data shared by every branch evaluation of a request.
#[derive(Clone, Copy, Debug)]
pub struct IkGeometry {
    pub r07: Rot3,
    pub p07: Vec3,
    pub p_sw: Vec3,
    pub e_sw: Vec3,
    /// Normal of the plane containing the shoulder-wrist line and `R_03 h_4`.
    pub n_sew: Vec3,
    /// In-plane direction, normal to the shoulder-wrist line, that `R_03 h_4`
    /// must lean towards.
    pub e_ce: Vec3,
}

pub fn ik_geometry(request: &IkRequest, params: &KinematicParams) -> Result<IkGeometry> {
    let psi_conv = request.psi_conventional()?;
    let wrist = wrist_pose(params, &request.tool_pose);
    let p_sw = wrist.p - params.p_link[0];
    let frame = sew_frame(&p_sw, &request.e_r)?;
    let n_sew = rot(&frame.e_zc, psi_conv) * frame.e_yc;
    Ok(IkGeometry {
        r07: wrist.r,
        p07: wrist.p,
        p_sw,
        e_sw: frame.e_zc,
        n_sew,
        e_ce: n_sew.cross(&frame.e_zc),
    })
}

fn r02(params: &KinematicParams, q1: f64, q2: f64) -> Rot3 {
    rot(&params.h[0], q1) * rot(&params.h[1], q2)
}

fn r47(params: &KinematicParams, w: &[f64; 3]) -> Rot3 {
    rot(&params.h[4], w[0]) * rot(&params.h[5], w[1]) * rot(&params.h[6], w[2])
}

/// Candidate `q3` values in the correct half-plane. Empty when none exist or
/// the constraint does not depend on `q3`.
pub fn solve_q3(q1: f64, q2: f64, geom: &IkGeometry, params: &KinematicParams) -> Vec<f64> {
    solve_q3_with(&r02(params, q1, q2), geom, params)
}

fn solve_q3_with(r02: &Rot3, geom: &IkGeometry, params: &KinematicParams) -> Vec<f64> {
    let h = r02.transpose() * geom.n_sew;
    let sol = subproblem4(&h, &params.h[3], &params.h[2], 0.0);
    if sol.least_squares || sol.degenerate {
        return Vec::new();
    }
    sol.thetas
        .into_iter()
        .filter(|&q3| geom.e_ce.dot(&(r02 * rot(&params.h[2], q3) * params.h[3])) > 0.0)
        .collect()
}

/// Wrist solutions `(q5, q6, q7)` placing the wrist point for given `q1..q3`.
pub fn solve_wrist(
    q1: f64,
    q2: f64,
    q3: f64,
    geom: &IkGeometry,
    params: &KinematicParams,
) -> Vec<[f64; 3]> {
    let r02 = r02(params, q1, q2);
    let r03 = r02 * rot(&params.h[2], q3);
    solve_wrist_with(q1, &r02, &r03, geom, params)
}

/// `R_07^T (p_07 - p_01 - p_14)`, the wrist-point input of Subproblem 5.
fn wrist_target(q1: f64, r02: &Rot3, r03: &Rot3, geom: &IkGeometry, params: &KinematicParams) -> Vec3 {
    let p = &params.p_link;
    let p14 = rot(&params.h[0], q1) * p[1] + r02 * p[2] + r03 * p[3];
    geom.r07.transpose() * (geom.p07 - p[0] - p14)
}

fn solve_wrist_with(
    q1: f64,
    r02: &Rot3,
    r03: &Rot3,
    geom: &IkGeometry,
    params: &KinematicParams,
) -> Vec<[f64; 3]> {
    let p = &params.p_link;
    let p1 = wrist_target(q1, r02, r03, geom, params);
    let sol = subproblem5(&(-p[6]), &p1, &p[5], &p[4], &params.h[6], &(-params.h[5]), &(-params.h[4]));
    sol.thetas.into_iter().map(|[q7, q6, q5]| [q5, q6, q7]).collect()
}

/// Residual (mm) of `-p67 + R67 p1 = R65 (p56 + R54 p45)`.
fn wrist_position_residual(p1: &Vec3, w: &[f64; 3], params: &KinematicParams) -> Vec3 {
    let (h, p) = (&params.h, &params.p_link);
    let lhs = -p[6] + rot(&h[6], w[2]) * p1;
    let rhs = rot(&h[5], w[1]).transpose() * (p[5] + rot(&h[4], w[0]).transpose() * p[4]);
    lhs - rhs
}

fn branch_residual(r03: &Rot3, w: &[f64; 3], geom: &IkGeometry, params: &KinematicParams) -> Vec3 {
    let h4 = params.h[3];
    r03.transpose() * geom.r07 * r47(params, w).transpose() * h4 - h4
}

/// `|R_03^T R_07 R_47^T h_4 - h_4|`: zero exactly when a consistent `q4` exists.
pub fn branch_error(
    q1: f64,
    q2: f64,
    q3: f64,
    wrist: &[f64; 3],
    geom: &IkGeometry,
    params: &KinematicParams,
) -> f64 {
    let r03 = r02(params, q1, q2) * rot(&params.h[2], q3);
    branch_residual(&r03, wrist, geom, params).norm()
}

fn orthogonal_unit(h: &Vec3) -> Vec3 {
    let probe = if h.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    (probe - h * h.dot(&probe)).normalize()
}

/// `q4` from `R_34 p = R_03^T R_07 R_47^T p` for a probe `p` normal to `h_4`.
pub fn solve_q4(
    q1: f64,
    q2: f64,
    q3: f64,
    wrist: &[f64; 3],
    geom: &IkGeometry,
    params: &KinematicParams,
) -> f64 {
    let r03 = r02(params, q1, q2) * rot(&params.h[2], q3);
    let m = r03.transpose() * geom.r07 * r47(params, wrist).transpose();
    let probe = orthogonal_unit(&params.h[3]);
    subproblem1(&probe, &(m * probe), &params.h[3]).theta
}

/// One branch of the `(q1, q2)` parameterization at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BranchPoint {
    pub q3: f64,
    /// `(q5, q6, q7)`.
    pub wrist: [f64; 3],
    /// The wrist point is placed exactly. Otherwise the wrist angles are the
    /// least-squares continuation of a pair of solutions that vanished.
    pub exact: bool,
    /// Orientation error plus the wrist position residual divided by the
    /// characteristic length. Equal to [`branch_error`] on exact branches.
    pub error: f64,
}

impl BranchPoint {
    fn distance(&self, other: &BranchPoint) -> f64 {
        let mut d = angle_distance(self.q3, other.q3);
        for i in 0..3 {
            d = d.max(angle_distance(self.wrist[i], other.wrist[i]));
        }
        d
    }
}

/// Every branch at `(q1, q2)`: at most two `q3` values times four wrist
/// solutions, of which the half-plane filter typically leaves one `q3`.
/// Least-squares continuations are included so that the error varies
/// continuously where wrist solutions appear or vanish in pairs; solutions
/// often lie close to such boundaries.
pub fn branches_at(q1: f64, q2: f64, geom: &IkGeometry, params: &KinematicParams) -> Vec<BranchPoint> {
    branch_residuals(q1, q2, geom, params).into_iter().map(|(b, _)| b).collect()
}

fn branch_residuals(
    q1: f64,
    q2: f64,
    geom: &IkGeometry,
    params: &KinematicParams,
) -> Vec<(BranchPoint, Vector6<f64>)> {
    let (h, p) = (&params.h, &params.p_link);
    let r02 = r02(params, q1, q2);
    let mut out = Vec::new();
    for q3 in solve_q3_with(&r02, geom, params) {
        let r03 = r02 * rot(&h[2], q3);
        let p1 = wrist_target(q1, &r02, &r03, geom, params);
        let sol = subproblem5_continued(&(-p[6]), &p1, &p[5], &p[4], &h[6], &(-h[5]), &(-h[4]));
        let exact = sol.exact.thetas.into_iter().map(|t| (t, true));
        let near = sol.near.into_iter().map(|t| (t, false));
        for ([q7, q6, q5], is_exact) in exact.chain(near) {
            let wrist = [q5, q6, q7];
            let orient = branch_residual(&r03, &wrist, geom, params);
            let pos = wrist_position_residual(&p1, &wrist, params) / CHARACTERISTIC_LENGTH_MM;
            let r = Vector6::new(orient.x, orient.y, orient.z, pos.x, pos.y, pos.z);
            let error = orient.norm() + pos.norm();
            out.push((BranchPoint { q3, wrist, exact: is_exact, error }, r));
        }
    }
    out
}

fn nearest_branch(
    candidates: Vec<(BranchPoint, Vector6<f64>)>,
    prev: &BranchPoint,
) -> Option<(BranchPoint, Vector6<f64>)> {
    candidates
        .into_iter()
        .min_by(|a, b| a.0.distance(prev).total_cmp(&b.0.distance(prev)))
}

fn tracked_residual(
    q: Vector2<f64>,
    prev: &BranchPoint,
    geom: &IkGeometry,
    params: &KinematicParams,
) -> Option<(BranchPoint, Vector6<f64>)> {
    let (b, r) = nearest_branch(branch_residuals(q[0], q[1], geom, params), prev)?;
    // A jump to another branch is not a continuation.
    if b.distance(prev) > 0.5 {
        return None;
    }
    Some((b, r))
}

/// Levenberg-Marquardt on the branch residual over `(q1, q2)`, re-solving the
/// closed-form chain at every iterate and following the nearest branch.
fn polish_branch(
    seed: Vector2<f64>,
    branch: BranchPoint,
    geom: &IkGeometry,
    params: &KinematicParams,
    settings: &SearchSettings,
) -> Option<Polished> {
    let mut q = seed;
    let (mut b, mut r) = tracked_residual(q, &branch, geom, params)?;
    let mut mu = 1e-6;
    const FD_STEP: f64 = 1e-7;
    for _ in 0..settings.max_polish_iters {
        if r.norm() <= settings.polish_tolerance {
            break;
        }
        let mut j = Matrix6x2::zeros();
        for k in 0..2 {
            let mut dq = Vector2::zeros();
            dq[k] = FD_STEP;
            let (_, rp) = tracked_residual(q + dq, &b, geom, params)?;
            let (_, rm) = tracked_residual(q - dq, &b, geom, params)?;
            j.set_column(k, &((rp - rm) / (2.0 * FD_STEP)));
        }
        let jtj = j.transpose() * j;
        let g = j.transpose() * r;
        let mut improved = false;
        for _ in 0..12 {
            let a = jtj + Matrix2::identity() * (mu * jtj.trace().max(1e-12));
            let Some(step) = a.lu().solve(&(-g)) else {
                mu *= 10.0;
                continue;
            };
            let step = if step.norm() > 0.2 { step * (0.2 / step.norm()) } else { step };
            if let Some((nb, nr)) = tracked_residual(q + step, &b, geom, params) {
                if nr.norm() < r.norm() {
                    q += step;
                    b = nb;
                    r = nr;
                    mu = (mu * 0.1).max(1e-12);
                    improved = true;
                    break;
                }
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let converged = b.exact && r.norm() <= settings.polish_tolerance;
    Some(Polished { q12: q, branch: b, converged })
}

/// Outcome of the `(q1, q2)` refinement: the best iterate and whether it
/// reached the exact branch within tolerance.
struct Polished {
    q12: Vector2<f64>,
    branch: BranchPoint,
    converged: bool,
}

/// Damped Newton on the full seven-joint system (tool pose plus arm angle).
///
/// Used when the `(q1, q2)` refinement stalls at a fold of the wrist
/// subproblem, where the exact branch has an infinite slope in `(q1, q2)`
/// although the full system is regular. The result is verified afterwards.
fn refine_full(q0: JointVector, request: &IkRequest, psi_conv: f64, params: &KinematicParams) -> Option<JointVector> {
    const ITERS: usize = 60;
    let residual = |q: &JointVector| -> Option<SVector<f64, 7>> {
        let chain = forward_kinematics(params, q);
        let dr = request.tool_pose.r * chain.tool.r.transpose();
        let w = rotation_log(&dr);
        let dp = (request.tool_pose.p - chain.tool.p) / CHARACTERISTIC_LENGTH_MM;
        let dpsi = -psi_offset(params, q, &request.e_r, psi_conv)?;
        Some(SVector::<f64, 7>::from_column_slice(&[w.x, w.y, w.z, dp.x, dp.y, dp.z, dpsi]))
    };
    let mut q = q0;
    let mut r = residual(&q)?;
    let mut mu: f64 = 1e-8;
    for _ in 0..ITERS {
        if r.norm() <= 1e-14 {
            break;
        }
        let mut j = augmented_jacobian(params, &q, &request.e_r).ok()?.0;
        for c in 0..7 {
            for row in 3..6 {
                j[(row, c)] /= CHARACTERISTIC_LENGTH_MM;
            }
        }
        let jtj = j.transpose() * j;
        let g = j.transpose() * r;
        let mut improved = false;
        for _ in 0..12 {
            let a = jtj + Matrix7::identity() * mu;
            let Some(step) = a.lu().solve(&g) else {
                mu *= 10.0;
                continue;
            };
            let step = if step.norm() > 0.2 { step * (0.2 / step.norm()) } else { step };
            let cand = JointVector(std::array::from_fn(|i| q.0[i] + step[i]));
            if let Some(nr) = residual(&cand) {
                if nr.norm() < r.norm() {
                    q = cand;
                    r = nr;
                    mu = (mu * 0.1).max(1e-15);
                    improved = true;
                    break;
                }
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Some(q)
}

/// Damped Newton on joints 2-7 for `pose` at fixed `q1`, from `start`.
/// Returns the configuration only if the pose is met to solver accuracy.
fn solve_fixed_q1_local(pose: &Pose, q1: f64, start: &JointVector, params: &KinematicParams) -> Option<JointVector> {
    const ITERS: usize = 40;
    let residual = |q: &JointVector| -> Vector6<f64> {
        let chain = forward_kinematics(params, q);
        let w = rotation_log(&(pose.r * chain.tool.r.transpose()));
        let dp = (pose.p - chain.tool.p) / CHARACTERISTIC_LENGTH_MM;
        Vector6::new(w.x, w.y, w.z, dp.x, dp.y, dp.z)
    };
    let mut q = *start;
    q[0] = q1;
    let mut r = residual(&q);
    let mut mu: f64 = 1e-10;
    for _ in 0..ITERS {
        if r.norm() <= 1e-14 {
            break;
        }
        let full = kinematic_jacobian(params, &q).0;
        let j = Matrix6::from_fn(|row, c| {
            let v = full[(row, c + 1)];
            if row >= 3 {
                v / CHARACTERISTIC_LENGTH_MM
            } else {
                v
            }
        });
        let (jtj, g) = (j.transpose() * j, j.transpose() * r);
        let mut improved = false;
        for _ in 0..12 {
            let Some(step) = (jtj + Matrix6::identity() * mu).lu().solve(&g) else {
                mu *= 10.0;
                continue;
            };
            let step = if step.norm() > 0.2 { step * (0.2 / step.norm()) } else { step };
            let mut cand = q;
            for i in 0..6 {
                cand[i + 1] += step[i];
            }
            let nr = residual(&cand);
            if nr.norm() < r.norm() {
                (q, r) = (cand, nr);
                mu = (mu * 0.1).max(1e-15);
                improved = true;
                break;
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let chain = forward_kinematics(params, &q);
    let (rot_err, pos_err) = chain.tool.distance(pose);
    (rot_err <= POSE_ROT_TOL && pos_err <= POSE_POS_TOL_MM).then(|| wrapped(&q))
}

/// Where in the search a solution was found.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SearchOrigin {
    /// Polished from the 2D grid seed `(q1, q2)`.
    Grid2d { q1: f64, q2: f64 },
    /// Intersection found by the nested search at `(q1, q6)`.
    Nested1d { q1: f64, q6: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PoseResidual {
    pub rot_rad: f64,
    pub pos_mm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IkSolution {
    /// Every joint wrapped to (-pi, pi].
    pub q: JointVector,
    /// In-limit representatives of `q` under whole-turn shifts of the joints
    /// with more than one revolution of travel.
    pub windings: Vec<JointVector>,
    pub within_limits: bool,
    pub pose_residual: PoseResidual,
    pub psi_residual: f64,
    pub branch_id: usize,
    pub search_origin: SearchOrigin,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct IkSolutionSet {
    /// Sorted lexicographically by `q`.
    pub solutions: Vec<IkSolution>,
    /// Converged candidates discarded by end-to-end verification.
    pub rejected: usize,
}

impl IkSolutionSet {
    pub fn len(&self) -> usize {
        self.solutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }

    pub fn within_limits_count(&self) -> usize {
        self.solutions.iter().filter(|s| s.within_limits).count()
    }
}

struct Candidate {
    q: JointVector,
    branch_id: usize,
    origin: SearchOrigin,
}

fn wrapped(q: &JointVector) -> JointVector {
    let mut out = *q;
    for v in out.0.iter_mut() {
        *v = wrap_to_pi(*v);
    }
    out
}

/// Componentwise distance modulo 2*pi.
pub fn joint_distance(a: &JointVector, b: &JointVector) -> f64 {
    (0..7).map(|i| angle_distance(a[i], b[i])).fold(0.0, f64::max)
}

fn lexicographic(a: &JointVector, b: &JointVector) -> std::cmp::Ordering {
    for i in 0..7 {
        match a[i].total_cmp(&b[i]) {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    std::cmp::Ordering::Equal
}

/// Verifies candidates end to end, merges duplicates, attaches windings and
/// limit flags, and sorts. Shared by both search methods.
fn finalize(
    candidates: Vec<Candidate>,
    request: &IkRequest,
    params: &KinematicParams,
    limits: &JointLimits,
    settings: &SearchSettings,
) -> Result<IkSolutionSet> {
    let config = SewConfig { e_r: request.e_r, convention: request.convention };
    let mut rejected = 0;
    let mut solutions: Vec<IkSolution> = Vec::new();
    for c in candidates {
        let q = wrapped(&c.q);
        let chain = forward_kinematics(params, &q);
        let (rot_rad, pos_mm) = chain.tool.distance(&request.tool_pose);
        let psi_residual = match config.angle(params, &chain) {
            Ok(psi) => angle_distance(psi, request.psi),
            Err(_) => f64::INFINITY,
        };
        if rot_rad > POSE_ROT_TOL || pos_mm > POSE_POS_TOL_MM || psi_residual > PSI_TOL {
            rejected += 1;
            continue;
        }
        if solutions.iter().any(|s| joint_distance(&s.q, &q) <= settings.dedup_tolerance) {
            continue;
        }
        let windings = enumerate_2pi_shifts(&q, limits);
        solutions.push(IkSolution {
            q,
            within_limits: !windings.is_empty() || within_limits(&q, limits).within,
            windings,
            pose_residual: PoseResidual { rot_rad, pos_mm },
            psi_residual,
            branch_id: c.branch_id,
            search_origin: c.origin,
        });
    }
    if solutions.is_empty() {
        return Err(KinematicsError::EmptySolutionSet);
    }
    solutions.sort_by(|a, b| lexicographic(&a.q, &b.q));
    Ok(IkSolutionSet { solutions, rejected })
}

/// Grid axis samples and whether the axis wraps around a full turn.
fn axis_samples(range: (f64, f64), step: f64) -> (Vec<f64>, bool) {
    let (lo, hi) = range;
    let periodic = hi - lo >= TAU - 1e-9;
    let n = if periodic {
        ((hi - lo) / step).round().max(1.0) as usize
    } else {
        ((hi - lo) / step).floor() as usize + 1
    };
    let step = if periodic { (hi - lo) / n as f64 } else { step };
    ((0..n).map(|i| lo + i as f64 * step).collect(), periodic)
}

/// Minimum branch error over the `(q1, q2)` grid (Fig. 4 style data).
#[derive(Clone, Debug)]
pub struct ErrorLandscape {
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    pub periodic: [bool; 2],
    /// `min_error[i * q2.len() + j]`; infinite where no branch exists.
    pub min_error: Vec<f64>,
    /// Number of exact branches at each grid point.
    pub branch_count: Vec<u8>,
    /// Whether the minimum at each grid point comes from an exact branch
    /// rather than a least-squares continuation past a wrist fold.
    pub exact_minimum: Vec<bool>,
}

impl ErrorLandscape {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.min_error[i * self.q2.len() + j]
    }

    fn min_is_exact(&self, i: usize, j: usize) -> bool {
        self.exact_minimum[i * self.q2.len() + j]
    }

    fn is_local_minimum(&self, i: usize, j: usize) -> bool {
        let (n1, n2) = (self.q1.len() as isize, self.q2.len() as isize);
        let v = self.at(i, j);
        for di in -1isize..=1 {
            for dj in -1isize..=1 {
                if di == 0 && dj == 0 {
                    continue;
                }
                let (mut a, mut b) = (i as isize + di, j as isize + dj);
                if self.periodic[0] {
                    a = a.rem_euclid(n1);
                } else if a < 0 || a >= n1 {
                    continue;
                }
                if self.periodic[1] {
                    b = b.rem_euclid(n2);
                } else if b < 0 || b >= n2 {
                    continue;
                }
                if self.at(a as usize, b as usize) < v {
                    return false;
                }
            }
        }
        true
    }
}

pub fn error_landscape(
    request: &IkRequest,
    params: &KinematicParams,
    settings: &SearchSettings,
) -> Result<ErrorLandscape> {
    settings.validate()?;
    let geom = ik_geometry(request, params)?;
    let (q1, p1) = axis_samples(settings.search_domain[0], settings.grid_step);
    let (q2, p2) = axis_samples(settings.search_domain[1], settings.grid_step);
    let rows: Vec<Vec<(f64, u8, bool)>> = q1
        .par_iter()
        .map(|&a| {
            q2.iter()
                .map(|&b| {
                    let branches = branches_at(a, b, &geom, params);
                    let best = branches.iter().min_by(|x, y| x.error.total_cmp(&y.error));
                    let count = branches.iter().filter(|x| x.exact).count() as u8;
                    match best {
                        Some(x) => (x.error, count, x.exact),
                        None => (f64::INFINITY, count, false),
                    }
                })
                .collect()
        })
        .collect();
    let (mut min_error, mut branch_count, mut exact_minimum) = (Vec::new(), Vec::new(), Vec::new());
    for (e, c, x) in rows.into_iter().flatten() {
        min_error.push(e);
        branch_count.push(c);
        exact_minimum.push(x);
    }
    Ok(ErrorLandscape { q1, q2, periodic: [p1, p2], min_error, branch_count, exact_minimum })
}

/// All solutions by a grid search over `(q1, q2)` followed by polishing.
pub fn ik_2d_search(
    request: &IkRequest,
    params: &KinematicParams,
    limits: &JointLimits,
    settings: &SearchSettings,
) -> Result<IkSolutionSet> {
    let geom = ik_geometry(request, params)?;
    let psi_conv = request.psi_conventional()?;
    let land = error_landscape(request, params, settings)?;
    let n2 = land.q2.len();
    // Every sub-threshold cell seeds a polish, not only the grid minima: two
    // solutions closer than a grid step share one minimum. Grid minima seed
    // whatever their value: a valley steeper than threshold / step hides its
    // zero between samples, and next to wrist folds the exact region can be
    // narrower than a step.
    let seeds: Vec<(usize, usize)> = (0..land.q1.len())
        .flat_map(|i| (0..n2).map(move |j| (i, j)))
        .filter(|&(i, j)| {
            land.at(i, j) < settings.minimum_threshold
                || (land.at(i, j).is_finite() && land.is_local_minimum(i, j))
        })
        .collect();

    let candidates: Vec<Candidate> = seeds
        .par_iter()
        .flat_map_iter(|&(i, j)| {
            let (a, b) = (land.q1[i], land.q2[j]);
            let branches = branches_at(a, b, &geom, params);
            let minimum_seed = land.at(i, j) >= settings.minimum_threshold;
            let fold_seed = minimum_seed && !land.min_is_exact(i, j);
            let mut found = Vec::new();
            for (branch_id, br) in branches.iter().enumerate() {
                let take = if minimum_seed { br.error == land.at(i, j) } else { br.error < settings.minimum_threshold };
                if !take {
                    continue;
                }
                let complete = |q12: Vector2<f64>, b: &BranchPoint| {
                    let q4 = solve_q4(q12[0], q12[1], b.q3, &b.wrist, &geom, params);
                    let [q5, q6, q7] = b.wrist;
                    JointVector([q12[0], q12[1], b.q3, q4, q5, q6, q7])
                };
                // Fold seeds skip the (q1, q2) polish: along the continued
                // branch it can drift far from the seed.
                let polished = if fold_seed {
                    None
                } else {
                    polish_branch(Vector2::new(a, b), *br, &geom, params, settings)
                };
                let mut starts = Vec::new();
                match polished {
                    Some(p) if p.converged => {
                        found.push(Candidate {
                            q: complete(p.q12, &p.branch),
                            branch_id,
                            origin: SearchOrigin::Grid2d { q1: a, q2: b },
                        });
                        continue;
                    }
                    Some(p) => starts.push(complete(p.q12, &p.branch)),
                    None => {}
                }
                // Otherwise the full system is solved from the seed itself
                // and from where the polish stalled, which near a wrist fold
                // is often a spurious minimum shared by several seeds.
                starts.push(complete(Vector2::new(a, b), br));
                for start in starts {
                    let Some(q) = refine_full(start, request, psi_conv, params) else {
                        continue;
                    };
                    found.push(Candidate {
                        q,
                        branch_id,
                        origin: SearchOrigin::Grid2d { q1: a, q2: b },
                    });
                }
            }
            found
        })
        .collect();
    finalize(candidates, request, params, limits, settings)
}

// ---------------------------------------------------------------------------
// Nested 1D search

/// Lower-arm solution `(q2, q3, q4)` at fixed `(q1, q6)` with the signed
/// orientation mismatch that vanishes on a true solution.
#[derive(Clone, Copy, Debug)]
struct ArmPoint {
    q234: [f64; 3],
    f: f64,
}

impl ArmPoint {
    fn distance(&self, other: &ArmPoint) -> f64 {
        (0..3).map(|i| angle_distance(self.q234[i], other.q234[i])).fold(0.0, f64::max)
    }
}

/// Intersection of axes 5 and 7: `lambda` along `h_5` from `O_5` and `t`
/// along `h_7` from `O_7`. `None` where the axes are parallel.
fn wrist_axes_intersection(params: &KinematicParams, q6: f64) -> Option<(f64, f64)> {
    let (lambda, t, _) = closest_wrist_axes(params, q6)?;
    Some((lambda, t))
}

/// Closest points of axes 5 and 7 and the gap between them.
fn closest_wrist_axes(params: &KinematicParams, q6: f64) -> Option<(f64, f64, f64)> {
    let r56 = rot(&params.h[5], q6);
    let u = params.h[4];
    let v = r56 * params.h[6];
    let b = params.p_link[5] + r56 * params.p_link[6];
    let (a11, a12, a22) = (u.dot(&u), -u.dot(&v), v.dot(&v));
    let det = a11 * a22 - a12 * a12;
    if det <= 1e-12 * a11 * a22 {
        return None;
    }
    let (r1, r2) = (u.dot(&b), -v.dot(&b));
    let lambda = (a22 * r1 - a12 * r2) / det;
    let t = (a11 * r2 - a12 * r1) / det;
    Some((lambda, t, (u * lambda - v * t - b).norm()))
}

/// The nested search needs axes 5 and 7 to intersect for every `q6`; this
/// is a property of the geometry, checked where the axes are well apart.
fn check_wrist_axes(params: &KinematicParams) -> Result<()> {
    let scale = (params.p_link[5].norm() + params.p_link[6].norm()).max(1.0);
    match closest_wrist_axes(params, FRAC_PI_2) {
        Some((_, _, gap)) if gap <= 1e-9 * scale => Ok(()),
        _ => Err(KinematicsError::NonIntersectingWristAxes),
    }
}

struct FixedQ1 {
    r01: Rot3,
    r07: Rot3,
    p07: Vec3,
}

fn arm_points(fx: &FixedQ1, q6: f64, params: &KinematicParams) -> Result<Vec<ArmPoint>> {
    let Some((lambda, t)) = wrist_axes_intersection(params, q6) else {
        return Ok(Vec::new());
    };
    let h = &params.h;
    let p = &params.p_link;
    let point = fx.p07 + fx.r07 * h[6] * t;
    let y = fx.r01.transpose() * (point - p[0]) - p[1];
    let w = p[4] + h[4] * lambda;
    let sol = subproblem5(&(-p[2]), &y, &p[3], &w, &(-h[1]), &h[2], &h[3]);
    let r56h7 = rot(&h[5], q6) * h[6];
    let target = h[4].dot(&r56h7);
    Ok(sol
        .thetas
        .into_iter()
        .map(|q234| {
            let r04 = fx.r01 * rot(&h[1], q234[0]) * rot(&h[2], q234[1]) * rot(&h[3], q234[2]);
            let r47 = r04.transpose() * fx.r07;
            ArmPoint { q234, f: target - h[4].dot(&(r47 * h[6])) }
        })
        .collect())
}

fn nearest_arm(candidates: Vec<ArmPoint>, prev: &ArmPoint) -> Option<ArmPoint> {
    candidates.into_iter().min_by(|a, b| a.distance(prev).total_cmp(&b.distance(prev)))
}

/// Mutual-nearest matching of consecutive samples; `links[k][a] = Some(b)`
/// connects item `a` of sample `k` to item `b` of sample `k + 1`.
fn link_samples<T>(
    samples: &[Vec<T>],
    periodic: bool,
    distance: impl Fn(&T, &T) -> f64,
    max_jump: f64,
) -> Vec<Vec<Option<usize>>> {
    let n = samples.len();
    let pairs = if periodic { n } else { n.saturating_sub(1) };
    (0..pairs)
        .map(|k| {
            let (cur, next) = (&samples[k], &samples[(k + 1) % n]);
            let best = |x: &T, pool: &[T]| {
                pool.iter()
                    .enumerate()
                    .map(|(i, y)| (i, distance(x, y)))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
            };
            cur.iter()
                .map(|a| {
                    let (j, d) = best(a, next)?;
                    let (back, _) = best(&next[j], cur)?;
                    (d <= max_jump && std::ptr::eq(&cur[back], a)).then_some(j)
                })
                .collect()
        })
        .collect()
}

/// Wrist angles `(q5, q7)` completing a lower-arm solution at `q6`.
fn complete_wrist(fx: &FixedQ1, q1: f64, arm: &[f64; 3], q6: f64, params: &KinematicParams) -> JointVector {
    let h = &params.h;
    let r04 = fx.r01 * rot(&h[1], arm[0]) * rot(&h[2], arm[1]) * rot(&h[3], arm[2]);
    let r47 = r04.transpose() * fx.r07;
    let r56 = rot(&h[5], q6);
    let q5 = subproblem1(&(r56 * h[6]), &(r47 * h[6]), &h[4]).theta;
    let r67 = r56.transpose() * rot(&h[4], q5).transpose() * r47;
    let probe = orthogonal_unit(&h[6]);
    let q7 = subproblem1(&probe, &(r67 * probe), &h[6]).theta;
    JointVector([q1, arm[0], arm[1], arm[2], q5, q6, q7])
}

const BISECTION_ITERS: usize = 80;

/// All joint vectors with the given `q1` that reach `pose`, by a 1D search
/// over `q6` using the intersection of axes 5 and 7.
pub fn ik_fixed_q1(
    pose: &Pose,
    q1: f64,
    params: &KinematicParams,
    settings: &SearchSettings,
) -> Result<Vec<JointVector>> {
    Ok(fixed_q1_solutions(pose, q1, params, settings)?.into_iter().map(|(q, _)| q).collect())
}

/// As [`ik_fixed_q1`], also returning the `q6` branch index of each solution.
fn fixed_q1_solutions(
    pose: &Pose,
    q1: f64,
    params: &KinematicParams,
    settings: &SearchSettings,
) -> Result<Vec<(JointVector, usize)>> {
    settings.validate()?;
    check_wrist_axes(params)?;
    let wrist = wrist_pose(params, pose);
    let fx = FixedQ1 { r01: rot(&params.h[0], q1), r07: wrist.r, p07: wrist.p };
    // Offset by half a step so that the parallel-axes configurations
    // q6 = 0 and q6 = pi are never sampled.
    let n = (TAU / settings.grid_step).round().max(8.0) as usize;
    let step = TAU / n as f64;
    let q6s: Vec<f64> = (0..n).map(|k| -PI + (k as f64 + 0.5) * step).collect();
    let samples: Vec<Vec<ArmPoint>> =
        q6s.iter().map(|&q6| arm_points(&fx, q6, params)).collect::<Result<_>>()?;
    let links = link_samples(&samples, true, ArmPoint::distance, 0.3);

    let mut roots: Vec<(ArmPoint, f64, usize)> = Vec::new();
    for (k, row) in links.iter().enumerate() {
        let kn = (k + 1) % n;
        let kp = (k + n - 1) % n;
        let (q_left, q_right) = (q6s[k], q6s[k] + step);
        let cell = ArmCell { fx: &fx, params, branch_base: k * 4 };
        cell.scan((q_left, &samples[k]), (q_right, &samples[kn]), Some(row), 0, &mut roots)?;
        for (a, link) in row.iter().enumerate() {
            let Some(b) = *link else { continue };
            let (left, right) = (samples[k][a], samples[kn][b]);
            // Two roots inside one cell: |f| dips without a sign change.
            let Some(p) = links[kp].iter().position(|l| *l == Some(a)) else { continue };
            let prev = samples[kp][p];
            if !is_dip(prev.f, left.f, right.f) {
                continue;
            }
            let sign = left.f.signum();
            let eval = |q6: f64| -> Result<Option<(ArmPoint, f64)>> {
                Ok(nearest_arm(arm_points(&fx, q6, params)?, &left)
                    .filter(|x| x.distance(&left) <= ARM_JUMP)
                    .map(|x| (x, sign * x.f)))
            };
            let Some((q_min, arm_min, v)) = golden_minimum(q_left - step, q_right, eval)? else { continue };
            if v > 0.0 {
                continue;
            }
            for other in [(q_left - step, prev.f), (q_right, right.f)] {
                if let Some((arm, q6)) = bisect_arm(&fx, params, (q_min, arm_min), other)? {
                    roots.push((arm, q6, k * 4 + a));
                }
            }
        }
    }

    let mut out: Vec<(JointVector, usize)> = Vec::new();
    for (arm, q6, branch) in roots {
        let q = complete_wrist(&fx, q1, &arm.q234, wrap_to_pi(q6), params);
        let (dr, dp) = forward_kinematics(params, &q).tool.distance(pose);
        if dr > POSE_ROT_TOL || dp > POSE_POS_TOL_MM {
            continue;
        }
        if out.iter().any(|(s, _)| joint_distance(s, &q) <= settings.dedup_tolerance) {
            continue;
        }
        out.push((q, branch));
    }
    Ok(out)
}

/// Subdivision depth for cells whose samples do not link one-to-one.
const MAX_CELL_DEPTH: usize = 8;

/// Root finding for `f` between two `q6` samples of the arm branches.
struct ArmCell<'a> {
    fx: &'a FixedQ1,
    params: &'a KinematicParams,
    branch_base: usize,
}

impl ArmCell<'_> {
    /// Bisects sign changes along linked arms. Points left unlinked are
    /// either a fold (a pair born or dying together) or a mislink where
    /// branches separate quickly; the cell is split until only folds remain.
    fn scan(
        &self,
        (q_left, left): (f64, &[ArmPoint]),
        (q_right, right): (f64, &[ArmPoint]),
        links: Option<&Vec<Option<usize>>>,
        depth: usize,
        roots: &mut Vec<(ArmPoint, f64, usize)>,
    ) -> Result<()> {
        let local;
        let row = match links {
            Some(r) => r,
            None => {
                local = link_samples(&[left.to_vec(), right.to_vec()], false, ArmPoint::distance, ARM_JUMP)
                    .swap_remove(0);
                &local
            }
        };
        let born: Vec<usize> = (0..right.len()).filter(|j| !row.contains(&Some(*j))).collect();
        let died: Vec<usize> = (0..row.len()).filter(|&a| row[a].is_none()).collect();
        let born_pairs = fold_pairs(right, &born);
        let died_pairs = fold_pairs(left, &died);
        let unpaired = born.len() != 2 * born_pairs.len() || died.len() != 2 * died_pairs.len();
        if unpaired && depth < MAX_CELL_DEPTH {
            let q_mid = 0.5 * (q_left + q_right);
            let mid = arm_points(self.fx, q_mid, self.params)?;
            self.scan((q_left, left), (q_mid, &mid), None, depth + 1, roots)?;
            return self.scan((q_mid, &mid), (q_right, right), None, depth + 1, roots);
        }
        for (a, link) in row.iter().enumerate() {
            let Some(b) = *link else { continue };
            if left[a].f * right[b].f <= 0.0 {
                if let Some((arm, q6)) = bisect_arm(self.fx, self.params, (q_left, left[a]), (q_right, right[b].f))? {
                    roots.push((arm, q6, self.branch_base + a));
                }
            }
        }
        // Branch pairs that are born or die between the samples form a fold;
        // a root may lie on the arc through the fold.
        for (pairs, q_in, q_out, side) in [(born_pairs, q_right, q_left, right), (died_pairs, q_left, q_right, left)] {
            for (i, j) in pairs {
                for (arm, q6) in fold_roots(self.fx, self.params, q_in, q_out, side[i], side[j])? {
                    roots.push((arm, q6, self.branch_base + i));
                }
            }
        }
        Ok(())
    }
}

/// `f` keeps its sign over three consecutive samples but its magnitude has
/// a local minimum in the middle.
fn is_dip(prev: f64, mid: f64, next: f64) -> bool {
    prev * mid > 0.0 && mid * next > 0.0 && mid.abs() < prev.abs() && mid.abs() <= next.abs()
}

/// Golden-section minimum of `eval` on `[lo, hi]`, returning the abscissa,
/// the payload and the value. `None` if the branch cannot be followed.
fn golden_minimum<P: Copy>(
    mut lo: f64,
    mut hi: f64,
    mut eval: impl FnMut(f64) -> Result<Option<(P, f64)>>,
) -> Result<Option<(f64, P, f64)>> {
    const ITERS: usize = 60;
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (Some(mut fa), Some(mut fb)) = (eval(a)?, eval(b)?) else { return Ok(None) };
    for _ in 0..ITERS {
        if fa.1 < fb.1 {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            let Some(v) = eval(a)? else { return Ok(None) };
            fa = v;
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            let Some(v) = eval(b)? else { return Ok(None) };
            fb = v;
        }
        if fa.1.min(fb.1) < 0.0 {
            break;
        }
    }
    Ok(Some(if fa.1 < fb.1 { (a, fa.0, fa.1) } else { (b, fb.0, fb.1) }))
}

/// Largest joint change along one arm branch between nearby `q6` values.
const ARM_JUMP: f64 = 0.3;

/// Bisection on `q6` for a sign change of `f` along the branch through
/// `anchor`, which is followed by nearest-solution continuation. Returns the
/// best point found, or `None` if the branch cannot be followed.
fn bisect_arm(
    fx: &FixedQ1,
    params: &KinematicParams,
    anchor: (f64, ArmPoint),
    other: (f64, f64),
) -> Result<Option<(ArmPoint, f64)>> {
    let (mut qa, mut arm_a) = anchor;
    let (mut qb, fb) = other;
    let mut best = (arm_a, qa);
    let mut best_f = if arm_a.f.abs() <= fb.abs() { arm_a.f.abs() } else { f64::INFINITY };
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (qa + qb);
        if mid == qa || mid == qb {
            break;
        }
        let Some(arm) = nearest_arm(arm_points(fx, mid, params)?, &arm_a) else {
            return Ok(None);
        };
        if arm.distance(&arm_a) > ARM_JUMP {
            return Ok(None);
        }
        if arm.f.abs() <= best_f {
            best = (arm, mid);
            best_f = arm.f.abs();
        }
        if arm.f == 0.0 {
            break;
        }
        if (arm.f > 0.0) == (arm_a.f > 0.0) {
            qa = mid;
            arm_a = arm;
        } else {
            qb = mid;
        }
    }
    Ok(best_f.is_finite().then_some(best))
}

/// Greedy nearest pairing of the listed branch indices.
fn fold_pairs(points: &[ArmPoint], idx: &[usize]) -> Vec<(usize, usize)> {
    let mut left: Vec<usize> = idx.to_vec();
    let mut out = Vec::new();
    while left.len() >= 2 {
        let i = left.remove(0);
        let Some((pos, d)) = left
            .iter()
            .enumerate()
            .map(|(p, &j)| (p, points[i].distance(&points[j])))
            .min_by(|a, b| a.1.total_cmp(&b.1))
        else {
            break;
        };
        if d <= ARM_JUMP {
            out.push((i, left.remove(pos)));
        }
    }
    out
}

/// Roots of `f` on the two branches `a1`, `a2` (present at `q_in`) that
/// merge at a fold between `q_in` and `q_out`.
fn fold_roots(
    fx: &FixedQ1,
    params: &KinematicParams,
    q_in: f64,
    q_out: f64,
    a1: ArmPoint,
    a2: ArmPoint,
) -> Result<Vec<(ArmPoint, f64)>> {
    let (mut qi, mut qo) = (q_in, q_out);
    let (mut b1, mut b2) = (a1, a2);
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (qi + qo);
        if mid == qi || mid == qo {
            break;
        }
        let pts = arm_points(fx, mid, params)?;
        let pick = |prev: &ArmPoint| {
            pts.iter()
                .enumerate()
                .map(|(i, p)| (i, p.distance(prev)))
                .min_by(|x, y| x.1.total_cmp(&y.1))
        };
        match (pick(&b1), pick(&b2)) {
            (Some((i, d1)), Some((j, d2))) if i != j && d1 <= ARM_JUMP && d2 <= ARM_JUMP => {
                qi = mid;
                b1 = pts[i];
                b2 = pts[j];
            }
            _ => qo = mid,
        }
    }
    let mut out = Vec::new();
    for (start, fold) in [(a1, b1), (a2, b2)] {
        if start.f * fold.f <= 0.0 {
            if let Some(r) = bisect_arm(fx, params, (q_in, start), (qi, fold.f))? {
                out.push(r);
            }
        }
    }
    if b1.f * b2.f <= 0.0 {
        out.push(if b1.f.abs() <= b2.f.abs() { (b1, qi) } else { (b2, qi) });
    }
    Ok(out)
}

/// Arm angle error `psi_conv(q) - psi_desired`, wrapped.
fn psi_offset(params: &KinematicParams, q: &JointVector, e_r: &Vec3, psi_conv: f64) -> Option<f64> {
    let chain = forward_kinematics(params, q);
    let cfg = SewConfig { e_r: *e_r, convention: Convention::Conventional };
    cfg.angle(params, &chain).ok().map(|psi| wrap_to_pi(psi - psi_conv))
}

/// One sample of the self-motion manifold at fixed `q1`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SelfMotionPoint {
    pub q: JointVector,
    pub branch: usize,
}

/// Self-motion solutions for each `q1` sample (ascending), computed in
/// parallel and returned in order.
pub(crate) fn self_motion_samples(
    pose: &Pose,
    q1s: &[f64],
    params: &KinematicParams,
    settings: &SearchSettings,
) -> Result<Vec<Vec<SelfMotionPoint>>> {
    q1s.par_iter()
        .map(|&q1| {
            fixed_q1_solutions(pose, q1, params, settings).map(|v| {
                v.into_iter().map(|(q, branch)| SelfMotionPoint { q, branch }).collect()
            })
        })
        .collect()
}

/// Links self-motion samples along `q1` (see `link_samples`).
pub(crate) fn link_self_motion(
    samples: &[Vec<SelfMotionPoint>],
    periodic: bool,
    max_jump: f64,
) -> Vec<Vec<Option<usize>>> {
    link_samples(samples, periodic, |a, b| joint_distance(&a.q, &b.q), max_jump)
}

/// Follows the self-motion branch through `prev` to `q1`.
pub(crate) fn continue_self_motion(
    pose: &Pose,
    q1: f64,
    prev: &JointVector,
    params: &KinematicParams,
    settings: &SearchSettings,
    max_jump: f64,
) -> Result<Option<JointVector>> {
    let sols = ik_fixed_q1(pose, q1, params, settings)?;
    let sampled = sols
        .into_iter()
        .map(|q| (joint_distance(&q, prev), q))
        .filter(|(d, _)| *d <= max_jump)
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, q)| q);
    // Next to a q1 fold the two inner roots can be closer than the q6
    // sampling resolves; the branch is then continued locally.
    Ok(sampled.or_else(|| {
        solve_fixed_q1_local(pose, q1, prev, params).filter(|q| joint_distance(q, prev) <= max_jump)
    }))
}

/// Maximum joint change between linked `q1` samples treated as continuous.
pub(crate) const SELF_MOTION_JUMP: f64 = 0.5;

/// All solutions as crossings of the arm-angle-versus-`q1` curves with the
/// requested angle.
pub fn ik_nested_1d(
    request: &IkRequest,
    params: &KinematicParams,
    limits: &JointLimits,
    settings: &SearchSettings,
) -> Result<IkSolutionSet> {
    settings.validate()?;
    let psi_conv = request.psi_conventional()?;
    ik_geometry(request, params)?;
    let sweep = Sweep { pose: request.tool_pose, e_r: request.e_r, psi_conv, params, settings };
    let (q1s, periodic) = axis_samples(settings.search_domain[0], settings.grid_step);
    let samples = self_motion_samples(&sweep.pose, &q1s, params, settings)?;
    let offsets: Vec<Vec<Option<f64>>> =
        samples.iter().map(|row| row.iter().map(|s| sweep.offset(&s.q)).collect()).collect();
    let links = link_self_motion(&samples, periodic, SELF_MOTION_JUMP);
    let n = q1s.len();
    let step = q1s[1] - q1s[0];

    let mut found = SweepFindings::default();
    let last = if periodic { n } else { n - 1 };
    for k in 0..last {
        let kn = (k + 1) % n;
        let (lo, hi) = (q1s[k], q1s[k] + step);
        let row = &links[k];
        sweep.scan((lo, &samples[k]), (hi, &samples[kn]), Some(row), 0, &mut found)?;
        // Two crossings inside one cell: the offset dips toward zero.
        if k == 0 && !periodic {
            continue;
        }
        let kp = (k + n - 1) % n;
        for (a, link) in row.iter().enumerate() {
            let Some(b) = *link else { continue };
            let (Some(ga), Some(gb)) = (offsets[k][a], offsets[kn][b]) else { continue };
            let Some(p) = links[kp].iter().position(|l| *l == Some(a)) else { continue };
            let Some(gp) = offsets[kp][p] else { continue };
            if ga.abs() < FRAC_PI_2 && is_dip(gp, ga, gb) {
                found.dips.push((lo - step, hi, samples[k][a], gp, gb));
            }
        }
    }
    let SweepFindings { brackets, dips, folds } = found;

    let mut candidates: Vec<Candidate> = brackets
        .par_iter()
        .map(|&(left, right, branch)| {
            Ok(sweep.bisect(left, right)?.map(|q| Candidate {
                q,
                branch_id: branch,
                origin: SearchOrigin::Nested1d { q1: q[0], q6: q[5] },
            }))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    for (lo, hi, mid, g_lo, g_hi) in dips {
        for q in sweep.dip_roots(lo, hi, mid, g_lo, g_hi)? {
            candidates.push(Candidate {
                q,
                branch_id: mid.branch,
                origin: SearchOrigin::Nested1d { q1: q[0], q6: q[5] },
            });
        }
    }
    for (q_in, q_out, a1, a2) in folds {
        for q in sweep.fold_roots(q_in, q_out, a1, a2)? {
            candidates.push(Candidate {
                q,
                branch_id: a1.branch,
                origin: SearchOrigin::Nested1d { q1: q[0], q6: q[5] },
            });
        }
    }
    // The bracketed points are accurate to the bisection resolution; a final
    // Newton step on the full system removes what is left near folds.
    for c in &mut candidates {
        if let Some(q) = refine_full(c.q, request, psi_conv, params) {
            c.q = q;
        }
    }
    finalize(candidates, request, params, limits, settings)
}

/// Opposite signs across the +-pi seam are a wrap, not a crossing.
fn crosses(ga: f64, gb: f64) -> bool {
    ga * gb <= 0.0 && (ga - gb).abs() <= FRAC_PI_2
}

/// Greedy nearest pairing of unlinked self-motion samples.
fn self_motion_pairs(points: &[SelfMotionPoint], idx: &[usize]) -> Vec<(usize, usize)> {
    let mut left: Vec<usize> = idx.to_vec();
    let mut out = Vec::new();
    while left.len() >= 2 {
        let i = left.remove(0);
        let Some((pos, d)) = left
            .iter()
            .enumerate()
            .map(|(p, &j)| (p, joint_distance(&points[i].q, &points[j].q)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
        else {
            break;
        };
        if d <= SELF_MOTION_JUMP {
            out.push((i, left.remove(pos)));
        }
    }
    out
}

/// Bracketed crossings `((q1, q, offset), (q1, offset), branch)`, dips
/// `(lo, hi, mid, offset_lo, offset_hi)` and fold pairs
/// `(q1_in, q1_out, arm1, arm2)` collected by the `q1` scan.
#[derive(Default)]
struct SweepFindings {
    brackets: Vec<((f64, JointVector, f64), (f64, f64), usize)>,
    dips: Vec<(f64, f64, SelfMotionPoint, f64, f64)>,
    folds: Vec<(f64, f64, SelfMotionPoint, SelfMotionPoint)>,
}

/// Subdivision depth for `q1` cells whose samples do not link one-to-one.
const MAX_SWEEP_DEPTH: usize = 5;

/// Fixed inputs of the `q1` sweep in the nested search.
struct Sweep<'a> {
    pose: Pose,
    e_r: Vec3,
    psi_conv: f64,
    params: &'a KinematicParams,
    settings: &'a SearchSettings,
}

impl Sweep<'_> {
    fn offset(&self, q: &JointVector) -> Option<f64> {
        psi_offset(self.params, q, &self.e_r, self.psi_conv)
    }

    /// Collects crossings and folds between two `q1` samples, splitting the
    /// cell where samples are left unlinked without forming fold pairs.
    fn scan(
        &self,
        (lo, left): (f64, &[SelfMotionPoint]),
        (hi, right): (f64, &[SelfMotionPoint]),
        links: Option<&Vec<Option<usize>>>,
        depth: usize,
        found: &mut SweepFindings,
    ) -> Result<()> {
        let local;
        let row = match links {
            Some(r) => r,
            None => {
                local = link_self_motion(&[left.to_vec(), right.to_vec()], false, SELF_MOTION_JUMP).swap_remove(0);
                &local
            }
        };
        let born: Vec<usize> = (0..right.len()).filter(|j| !row.contains(&Some(*j))).collect();
        let died: Vec<usize> = (0..row.len()).filter(|&a| row[a].is_none()).collect();
        let born_pairs = self_motion_pairs(right, &born);
        let died_pairs = self_motion_pairs(left, &died);
        let unpaired = born.len() != 2 * born_pairs.len() || died.len() != 2 * died_pairs.len();
        if unpaired && depth < MAX_SWEEP_DEPTH {
            let mid = 0.5 * (lo + hi);
            let pts: Vec<SelfMotionPoint> = fixed_q1_solutions(&self.pose, wrap_to_pi(mid), self.params, self.settings)?
                .into_iter()
                .map(|(q, branch)| SelfMotionPoint { q, branch })
                .collect();
            self.scan((lo, left), (mid, &pts), None, depth + 1, found)?;
            return self.scan((mid, &pts), (hi, right), None, depth + 1, found);
        }
        for (a, link) in row.iter().enumerate() {
            let Some(b) = *link else { continue };
            let (Some(ga), Some(gb)) = (self.offset(&left[a].q), self.offset(&right[b].q)) else { continue };
            if crosses(ga, gb) {
                found.brackets.push(((lo, left[a].q, ga), (hi, gb), left[a].branch));
            }
        }
        // Self-motion arcs that turn back in q1 between the samples: the two
        // arms die (or are born) together at a fold.
        for (pairs, q_in, q_out, side) in [(born_pairs, hi, lo, right), (died_pairs, lo, hi, left)] {
            for (i, j) in pairs {
                found.folds.push((q_in, q_out, side[i], side[j]));
            }
        }
        Ok(())
    }

    fn follow(&self, q1: f64, prev: &JointVector) -> Result<Option<JointVector>> {
        continue_self_motion(&self.pose, wrap_to_pi(q1), prev, self.params, self.settings, SELF_MOTION_JUMP)
    }

    /// Bisection on `q1` for a sign change of the arm angle offset along the
    /// self-motion branch through the first point; `q1` may decrease.
    fn bisect(
        &self,
        left: (f64, JointVector, f64),
        right: (f64, f64),
    ) -> Result<Option<JointVector>> {
        let (mut lo, mut q_lo, mut g_lo) = left;
        let (mut hi, g_hi) = right;
        let mut best = (q_lo, if g_lo.abs() <= g_hi.abs() { g_lo.abs() } else { f64::INFINITY });
        for _ in 0..BISECTION_ITERS {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            let Some(q) = self.follow(mid, &q_lo)? else {
                return Ok(None);
            };
            let Some(g) = self.offset(&q) else {
                return Ok(None);
            };
            if g.abs() <= best.1 {
                best = (q, g.abs());
            }
            if g == 0.0 {
                break;
            }
            if (g > 0.0) == (g_lo > 0.0) {
                lo = mid;
                q_lo = q;
                g_lo = g;
            } else {
                hi = mid;
            }
        }
        Ok(best.1.is_finite().then_some(best.0))
    }

    /// The pair of crossings, if any, where the offset along the branch
    /// through `mid` dips toward zero between `lo` and `hi` without a
    /// sign change at the samples.
    fn dip_roots(
        &self,
        lo: f64,
        hi: f64,
        mid: SelfMotionPoint,
        g_lo: f64,
        g_hi: f64,
    ) -> Result<Vec<JointVector>> {
        let Some(g_mid) = self.offset(&mid.q) else { return Ok(Vec::new()) };
        let sign = g_mid.signum();
        let eval = |q1: f64| -> Result<Option<(JointVector, f64)>> {
            let Some(q) = self.follow(q1, &mid.q)? else { return Ok(None) };
            Ok(self.offset(&q).map(|g| (q, sign * g)))
        };
        let Some((q_min, at_min, v)) = golden_minimum(lo, hi, eval)? else { return Ok(Vec::new()) };
        if v > 0.0 {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for (end, g_end) in [(lo, g_lo), (hi, g_hi)] {
            if let Some(q) = self.bisect((q_min, at_min, sign * v), (end, g_end))? {
                out.push(q);
            }
        }
        Ok(out)
    }

    /// Crossings on the two arms `a1`, `a2` (present at `q_in`) that merge
    /// at a fold between `q_in` and `q_out`.
    fn fold_roots(
        &self,
        q_in: f64,
        q_out: f64,
        a1: SelfMotionPoint,
        a2: SelfMotionPoint,
    ) -> Result<Vec<JointVector>> {
        let (mut qi, mut qo) = (q_in, q_out);
        let (mut b1, mut b2) = (a1.q, a2.q);
        for _ in 0..BISECTION_ITERS {
            let mid = 0.5 * (qi + qo);
            if mid == qi || mid == qo {
                break;
            }
            let sols = ik_fixed_q1(&self.pose, wrap_to_pi(mid), self.params, self.settings)?;
            let pick = |prev: &JointVector| {
                sols.iter()
                    .enumerate()
                    .map(|(i, q)| (i, joint_distance(q, prev)))
                    .min_by(|x, y| x.1.total_cmp(&y.1))
            };
            match (pick(&b1), pick(&b2)) {
                (Some((i, d1)), Some((j, d2)))
                    if i != j && d1 <= SELF_MOTION_JUMP && d2 <= SELF_MOTION_JUMP =>
                {
                    qi = mid;
                    b1 = sols[i];
                    b2 = sols[j];
                }
                _ => qo = mid,
            }
        }
        let (Some(g1), Some(g2)) = (self.offset(&b1), self.offset(&b2)) else {
            return Ok(Vec::new());
        };
        let mut out = Vec::new();
        for (start, g_fold) in [(a1.q, g1), (a2.q, g2)] {
            let Some(g_start) = self.offset(&start) else { continue };
            if crosses(g_start, g_fold) {
                if let Some(q) = self.bisect((q_in, start, g_start), (qi, g_fold))? {
                    out.push(q);
                }
            }
        }
        if crosses(g1, g2) {
            out.push(if g1.abs() <= g2.abs() { b1 } else { b2 });
        }
        Ok(out)
    }
}
