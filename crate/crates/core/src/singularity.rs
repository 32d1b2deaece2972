//! Classification of the singularity cases of the SEW parameterization at a
//! configuration, and self-motion sweeps for locating augmentation
//! singularities graphically (extrema of the arm angle along self-motion).

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{KinematicsError, Result};
use crate::ik::{continue_self_motion, link_self_motion, self_motion_samples, SearchSettings, SELF_MOTION_JUMP};
use crate::jacobian::{
    kinematic_jacobian, null_direction, AugmentedJacobian, Matrix7, RANK_TOL_EXACT,
    RANK_TOL_ROUNDED,
};
use crate::model::{forward_kinematics, sew_geometry, JointVector, KinematicParams, Pose};
use crate::sew::{sew_jacobian, Convention, SewConfig, COORDINATE_HARD_TOL, COORDINATE_WARN_TOL};
use crate::spatial::{wrap_to_pi, Vec3};

/// Detection thresholds. All are dimensionless.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Tolerances {
    /// Kinematic singular iff `sigma_6 / sigma_1` of the normalized 6x7
    /// Jacobian is below this.
    pub kinematic_sigma_ratio: f64,
    /// Coordinate singular iff `|e_SW x e_r|` is below this.
    pub coordinate_cross: f64,
    /// Collinear iff `|e_SW x R_03 h_4|` is below this.
    pub collinear_cross: f64,
    /// Augmentation singular iff `|J_psi . v_null| / |J_psi|` is below this.
    pub null_slope_relative: f64,
    /// Parameterization Jacobian zero iff `|J_psi|` (rad/rad) is below this.
    pub parameterization_norm: f64,
}

impl Tolerances {
    /// For configurations known to full precision.
    pub fn exact() -> Self {
        Tolerances {
            kinematic_sigma_ratio: RANK_TOL_EXACT,
            coordinate_cross: COORDINATE_HARD_TOL,
            collinear_cross: COORDINATE_HARD_TOL,
            null_slope_relative: 1e-6,
            parameterization_norm: 1e-6,
        }
    }

    /// For configurations transcribed with two-decimal-degree rounding,
    /// which cannot land exactly on a singular set.
    pub fn paper_rounded() -> Self {
        Tolerances {
            kinematic_sigma_ratio: RANK_TOL_ROUNDED,
            coordinate_cross: COORDINATE_WARN_TOL,
            collinear_cross: COORDINATE_WARN_TOL,
            null_slope_relative: 1e-3,
            parameterization_norm: 1e-6,
        }
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances::exact()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KinematicIndicator {
    pub sigma_min_ratio: f64,
    pub is_singular: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CrossIndicator {
    pub cross_norm: f64,
    pub flag: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AugmentationIndicator {
    /// `sigma_7 / sigma_1` of the row-normalized augmented Jacobian; `None`
    /// where the SEW row is undefined.
    pub sigma_min_ratio: Option<f64>,
    /// `|J_psi . v_null|` in rad/rad; `None` where the null direction or the
    /// SEW row is undefined.
    pub null_slope: Option<f64>,
    /// `null_slope / |J_psi|`.
    pub null_slope_relative: Option<f64>,
    pub flag: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ParameterizationIndicator {
    /// `|J_psi|`; `None` where the SEW row is undefined.
    pub jacobian_norm: Option<f64>,
    pub flag: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SingularityReport {
    pub kinematic: KinematicIndicator,
    pub coordinate: CrossIndicator,
    pub collinear: CrossIndicator,
    pub augmentation: AugmentationIndicator,
    pub parameterization_zero: ParameterizationIndicator,
}

impl SingularityReport {
    pub fn any(&self) -> bool {
        self.kinematic.is_singular
            || self.coordinate.flag
            || self.collinear.flag
            || self.augmentation.flag
            || self.parameterization_zero.flag
    }
}

/// Evaluates every singularity indicator at `q`. Singular states are data,
/// so this never fails; undefined quantities are reported as `None`.
pub fn classify(params: &KinematicParams, q: &JointVector, e_r: &Vec3, tol: &Tolerances) -> SingularityReport {
    let e_r = e_r.normalize();
    let jk = kinematic_jacobian(params, q);
    let sigma_ratio = jk.sigma_ratio();
    let kinematic = KinematicIndicator {
        sigma_min_ratio: sigma_ratio,
        is_singular: sigma_ratio < tol.kinematic_sigma_ratio,
    };

    let chain = forward_kinematics(params, q);
    let (coordinate, collinear) = match sew_geometry(params, &chain) {
        Ok(g) => {
            let c = g.e_sw.cross(&e_r).norm();
            let l = g.e_sw.cross(&g.h4_0).norm();
            (
                CrossIndicator { cross_norm: c, flag: c < tol.coordinate_cross },
                CrossIndicator { cross_norm: l, flag: l < tol.collinear_cross },
            )
        }
        Err(_) => (CrossIndicator { cross_norm: 0.0, flag: true }, CrossIndicator { cross_norm: 0.0, flag: true }),
    };

    let row = sew_jacobian(params, q, &e_r).ok();
    let row_norm = row.map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt());
    let parameterization_zero = ParameterizationIndicator {
        jacobian_norm: row_norm,
        flag: row_norm.is_some_and(|n| n < tol.parameterization_norm),
    };

    let sigma_aug = row.map(|r| {
        let mut m = Matrix7::zeros();
        m.fixed_rows_mut::<6>(0).copy_from(&jk.0);
        for (i, v) in r.iter().enumerate() {
            m[(6, i)] = *v;
        }
        AugmentedJacobian(m).sigma_ratio()
    });
    let null_slope = match (row, null_direction(&jk, tol.kinematic_sigma_ratio)) {
        (Some(r), Ok(v)) => Some(r.iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>().abs()),
        _ => None,
    };
    let null_slope_relative = match (null_slope, row_norm) {
        (Some(s), Some(n)) if n > 0.0 => Some(s / n),
        _ => None,
    };
    let augmentation = AugmentationIndicator {
        sigma_min_ratio: sigma_aug,
        null_slope,
        null_slope_relative,
        flag: !kinematic.is_singular
            && !parameterization_zero.flag
            && null_slope_relative.is_some_and(|s| s < tol.null_slope_relative),
    };

    SingularityReport { kinematic, coordinate, collinear, augmentation, parameterization_zero }
}

/// Range and resolution of a self-motion sweep over `q1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepSettings {
    /// Inclusive `q1` range, radians. The full turn `(-pi, pi]` is treated
    /// as periodic.
    pub q1_range: (f64, f64),
    pub q1_step: f64,
    /// Settings for the fixed-`q1` solver (its `grid_step` sets the `q6`
    /// sampling).
    pub search: SearchSettings,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings { q1_range: (-PI, PI), q1_step: 0.25f64.to_radians(), search: SearchSettings::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepSample {
    pub q1: f64,
    pub psi_abb: f64,
    pub q: JointVector,
    pub branch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremumKind {
    Maximum,
    Minimum,
}

/// A zero-slope point of the arm angle along a self-motion branch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PsiExtremum {
    pub branch: usize,
    pub kind: ExtremumKind,
    pub q1: f64,
    pub psi_abb: f64,
    pub q: JointVector,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelfMotionSweep {
    /// Ascending `q1`; samples at equal `q1` in solver order.
    pub samples: Vec<SweepSample>,
    pub extrema: Vec<PsiExtremum>,
}

impl SelfMotionSweep {
    /// Indices of the samples on `branch`, ascending in `q1`.
    pub fn branch_indices(&self, branch: usize) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].branch == branch).collect()
    }

    /// Central-difference `d psi / d q1` at sample `index`, using its
    /// neighbours on the same branch.
    pub fn slope_at(&self, index: usize) -> Option<f64> {
        let b = self.samples.get(index)?.branch;
        let idx = self.branch_indices(b);
        let pos = idx.iter().position(|&i| i == index)?;
        let (prev, next) = (self.samples[*idx.get(pos.checked_sub(1)?)?], self.samples[*idx.get(pos + 1)?]);
        let dq1 = next.q1 - prev.q1;
        (dq1 > 0.0).then(|| wrap_to_pi(next.psi_abb - prev.psi_abb) / dq1)
    }

    /// The sample closest to `q` in joint space.
    pub fn nearest(&self, q: &JointVector) -> Option<usize> {
        (0..self.samples.len()).min_by(|&a, &b| {
            joint_gap(&self.samples[a].q, q).total_cmp(&joint_gap(&self.samples[b].q, q))
        })
    }
}

/// Exact `d psi / d q1` along the self-motion through `q`: the arm angle
/// gradient projected on the null direction of the kinematic Jacobian,
/// divided by that direction's `q1` component. `None` where the self-motion
/// is tangent to `q1 = const`.
pub fn tangent_slope(params: &KinematicParams, q: &JointVector, e_r: &Vec3) -> Result<Option<f64>> {
    let n = null_direction(&kinematic_jacobian(params, q), RANK_TOL_EXACT)?;
    let j_psi = sew_jacobian(params, q, &e_r.normalize())?;
    let rate: f64 = (0..7).map(|i| j_psi[i] * n[i]).sum();
    Ok((n[0].abs() > 1e-12).then(|| rate / n[0]))
}

fn joint_gap(a: &JointVector, b: &JointVector) -> f64 {
    crate::ik::joint_distance(a, b)
}

fn sweep_axis(settings: &SweepSettings) -> Result<(Vec<f64>, bool)> {
    let (lo, hi) = settings.q1_range;
    let step = settings.q1_step;
    if !(lo.is_finite() && hi.is_finite() && lo < hi && step > 0.0 && step.is_finite()) {
        return Err(KinematicsError::InvalidInput("sweep range must be finite, increasing, with a positive step".into()));
    }
    let periodic = hi - lo >= 2.0 * PI - 1e-12;
    if periodic {
        let n = ((hi - lo) / step).round() as usize;
        let step = (hi - lo) / n as f64;
        return Ok(((0..n).map(|k| lo + k as f64 * step).collect(), true));
    }
    // Open ranges sample whole multiples of the step, so the grid does not
    // depend on where the range happens to start.
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    Ok(((first..=last).map(|k| k as f64 * step).collect(), false))
}

fn psi_abb(params: &KinematicParams, q: &JointVector, e_r: &Vec3) -> Option<f64> {
    let cfg = SewConfig { e_r: *e_r, convention: Convention::Abb };
    cfg.angle(params, &forward_kinematics(params, q)).ok()
}

/// All self-motion configurations reaching `pose` along a `q1` grid, with
/// continuous branches labeled and arm-angle extrema refined.
pub fn self_motion_sweep(
    params: &KinematicParams,
    pose: &Pose,
    e_r: &Vec3,
    settings: &SweepSettings,
) -> Result<SelfMotionSweep> {
    settings.search.validate()?;
    let e_r = e_r.normalize();
    let (q1s, periodic) = sweep_axis(settings)?;
    let raw = self_motion_samples(pose, &q1s.iter().map(|&a| wrap_to_pi(a)).collect::<Vec<_>>(), params, &settings.search)?;
    // Points where the arm angle is undefined are dropped before linking.
    let points: Vec<Vec<(JointVector, f64)>> = raw
        .iter()
        .map(|row| row.iter().filter_map(|p| psi_abb(params, &p.q, &e_r).map(|psi| (p.q, psi))).collect())
        .collect();
    if points.iter().all(Vec::is_empty) {
        return Err(KinematicsError::EmptySweep);
    }
    let as_motion: Vec<Vec<_>> = points
        .iter()
        .map(|row| row.iter().map(|&(q, _)| crate::ik::SelfMotionPoint { q, branch: 0 }).collect())
        .collect();
    let links = link_self_motion(&as_motion, periodic, SELF_MOTION_JUMP);
    let labels = label_branches(&points, &links);

    let mut samples = Vec::new();
    for (k, row) in points.iter().enumerate() {
        for (a, &(q, psi)) in row.iter().enumerate() {
            samples.push(SweepSample { q1: q1s[k], psi_abb: psi, q, branch: labels[k][a] });
        }
    }
    let mut sweep = SelfMotionSweep { samples, extrema: Vec::new() };
    sweep.extrema = find_extrema(&sweep, params, pose, &e_r, &settings.search);
    Ok(sweep)
}

/// Union-find over the links so that a branch crossing the periodic seam
/// keeps one label; labels are numbered by first appearance.
fn label_branches(points: &[Vec<(JointVector, f64)>], links: &[Vec<Option<usize>>]) -> Vec<Vec<usize>> {
    let offsets: Vec<usize> = points
        .iter()
        .scan(0, |acc, row| {
            let start = *acc;
            *acc += row.len();
            Some(start)
        })
        .collect();
    let total: usize = points.iter().map(Vec::len).sum();
    let mut parent: Vec<usize> = (0..total).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let n = points.len();
    for (k, row) in links.iter().enumerate() {
        for (a, link) in row.iter().enumerate() {
            if let Some(b) = *link {
                let (x, y) = (offsets[k] + a, offsets[(k + 1) % n] + b);
                let (rx, ry) = (find(&mut parent, x), find(&mut parent, y));
                parent[rx.max(ry)] = rx.min(ry);
            }
        }
    }
    let mut ids = std::collections::HashMap::new();
    points
        .iter()
        .enumerate()
        .map(|(k, row)| {
            (0..row.len())
                .map(|a| {
                    let root = find(&mut parent, offsets[k] + a);
                    let next = ids.len();
                    *ids.entry(root).or_insert(next)
                })
                .collect()
        })
        .collect()
}

const GOLDEN_ITERS: usize = 60;

fn find_extrema(
    sweep: &SelfMotionSweep,
    params: &KinematicParams,
    pose: &Pose,
    e_r: &Vec3,
    search: &SearchSettings,
) -> Vec<PsiExtremum> {
    let branches: std::collections::BTreeSet<usize> = sweep.samples.iter().map(|s| s.branch).collect();
    let mut out = Vec::new();
    for b in branches {
        let idx = sweep.branch_indices(b);
        for w in idx.windows(3) {
            let [l, m, r] = [sweep.samples[w[0]], sweep.samples[w[1]], sweep.samples[w[2]]];
            // Consecutive grid samples only; gaps mean the branch left the range.
            if (r.q1 - l.q1) > 2.5 * (m.q1 - l.q1).max(r.q1 - m.q1) {
                continue;
            }
            let (dl, dr) = (wrap_to_pi(m.psi_abb - l.psi_abb), wrap_to_pi(r.psi_abb - m.psi_abb));
            let kind = if dl > 0.0 && dr <= 0.0 {
                ExtremumKind::Maximum
            } else if dl < 0.0 && dr >= 0.0 {
                ExtremumKind::Minimum
            } else {
                continue;
            };
            let refined = golden_section(params, pose, e_r, search, (l.q1, r.q1), &m, kind).unwrap_or((m.q1, m.psi_abb, m.q));
            out.push(PsiExtremum { branch: b, kind, q1: refined.0, psi_abb: refined.1, q: refined.2 });
        }
    }
    out.sort_by(|a, b| a.q1.total_cmp(&b.q1).then(a.branch.cmp(&b.branch)));
    out
}

/// Golden-section search for the extremum of `psi(q1)` along the branch
/// through `mid`, on the bracket `(lo, hi)`.
fn golden_section(
    params: &KinematicParams,
    pose: &Pose,
    e_r: &Vec3,
    search: &SearchSettings,
    (mut lo, mut hi): (f64, f64),
    mid: &SweepSample,
    kind: ExtremumKind,
) -> Option<(f64, f64, JointVector)> {
    let sign = if kind == ExtremumKind::Maximum { -1.0 } else { 1.0 };
    let eval = |q1: f64| -> Option<(f64, JointVector)> {
        let q = continue_self_motion(pose, wrap_to_pi(q1), &mid.q, params, search, SELF_MOTION_JUMP).ok()??;
        let psi = psi_abb(params, &q, e_r)?;
        Some((sign * wrap_to_pi(psi - mid.psi_abb), q))
    };
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (mut fa, mut fb) = (eval(a)?, eval(b)?);
    for _ in 0..GOLDEN_ITERS {
        if fa.0 < fb.0 {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = eval(a)?;
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = eval(b)?;
        }
    }
    let (q1, (f, q)) = if fa.0 < fb.0 { (a, fa) } else { (b, fb) };
    Some((q1, wrap_to_pi(mid.psi_abb + sign * f), q))
}
