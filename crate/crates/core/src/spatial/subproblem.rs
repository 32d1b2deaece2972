//! Canonical rotation subproblems.
//!
//! * Subproblem 1: `min_theta || rot(k, theta) p1 - p2 ||`
//! * Subproblem 4: `h^T rot(k, theta) p = d`
//! * Subproblem 5: `p0 + rot(k1, t1) p1 = rot(k2, t2) (p2 + rot(k3, t3) p3)`
//!
//! All returned angles are wrapped to (-pi, pi]. A solution is "exact" when
//! its residual is at most `EXACT_RTOL` times the problem scale.

use nalgebra::{Matrix2, Matrix3, Vector2};

use super::poly::{Trig2, TrigRoots};
use super::{angle_distance, rotate, wrap_to_pi, Vec3};

pub const EXACT_RTOL: f64 = 1e-8;
/// Subproblem 5 triples closer than this (componentwise, radians) are merged.
pub const SP5_DEDUP_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sp1Solution {
    pub theta: f64,
    /// No angle maps `p1` exactly onto `p2`; `theta` is the minimizer.
    pub least_squares: bool,
    /// The minimizer is not unique (`p1` or `p2` parallel to `k`).
    pub degenerate: bool,
}

pub fn subproblem1(p1: &Vec3, p2: &Vec3, k: &Vec3) -> Sp1Solution {
    let kxp = k.cross(p1);
    let x = kxp.dot(p2);
    let y = -k.cross(&kxp).dot(p2);
    let scale = p1.norm().max(p2.norm()).max(1.0);
    let degenerate = kxp.norm() <= 1e-12 * p1.norm().max(f64::MIN_POSITIVE)
        || x.hypot(y) <= 1e-12 * scale * scale;
    let theta = if degenerate { 0.0 } else { wrap_to_pi(x.atan2(y)) };
    let residual = (rotate(k, theta, p1) - p2).norm();
    Sp1Solution { theta, least_squares: residual > EXACT_RTOL * scale, degenerate }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sp4Solution {
    /// Exact roots in ascending order, or the single least-squares minimizer.
    pub thetas: Vec<f64>,
    pub least_squares: bool,
    /// `h^T rot(k, theta) p` does not depend on `theta`.
    pub degenerate: bool,
}

pub fn subproblem4(h: &Vec3, p: &Vec3, k: &Vec3, d: f64) -> Sp4Solution {
    let kp = k.dot(p);
    let a = h.dot(&(p - k * kp));
    let b = h.dot(&k.cross(p));
    let c = h.dot(k) * kp;
    let amp = a.hypot(b);
    let scale = d.abs().max(h.norm() * p.norm()).max(1.0);
    let tol = EXACT_RTOL * scale;
    if amp <= 1e-12 * h.norm() * p.norm() {
        return Sp4Solution {
            thetas: Vec::new(),
            least_squares: (c - d).abs() > tol,
            degenerate: true,
        };
    }
    let phi = b.atan2(a);
    let ratio = (d - c) / amp;
    if ratio.abs() <= 1.0 {
        let alpha = ratio.acos();
        let mut thetas = if alpha <= 1e-9 || alpha >= std::f64::consts::PI - 1e-9 {
            vec![wrap_to_pi(phi + alpha)]
        } else {
            vec![wrap_to_pi(phi - alpha), wrap_to_pi(phi + alpha)]
        };
        thetas.sort_by(f64::total_cmp);
        Sp4Solution { thetas, least_squares: false, degenerate: false }
    } else {
        let residual = (d - c).abs() - amp;
        let theta = if ratio > 0.0 { wrap_to_pi(phi) } else { wrap_to_pi(phi + std::f64::consts::PI) };
        Sp4Solution { thetas: vec![theta], least_squares: residual > tol, degenerate: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sp5Solution {
    /// Isolated solutions `(t1, t2, t3)`.
    pub thetas: Vec<[f64; 3]>,
    /// A continuum of solutions exists (or the elimination is degenerate);
    /// `thetas` is then empty.
    pub degenerate: bool,
}

impl Sp5Solution {
    fn degenerate() -> Self {
        Sp5Solution { thetas: Vec::new(), degenerate: true }
    }
}

/// `base + cos(t) u + sin(t) v` is a point on the circle traced by
/// `offset + rot(k, t) p`.
struct Circle {
    base: Vec3,
    u: Vec3,
    v: Vec3,
}

impl Circle {
    fn new(offset: &Vec3, p: &Vec3, k: &Vec3) -> Self {
        let par = k * k.dot(p);
        Circle { base: offset + par, u: p - par, v: k.cross(p) }
    }

    /// Coefficients of `k2 . x` and `|x|^2`, each affine in `(cos t, sin t)`.
    fn invariants(&self, k2: &Vec3) -> (Matrix2<f64>, Vector2<f64>) {
        let m = Matrix2::new(
            k2.dot(&self.u),
            k2.dot(&self.v),
            2.0 * self.base.dot(&self.u),
            2.0 * self.base.dot(&self.v),
        );
        let c = Vector2::new(k2.dot(&self.base), self.base.norm_squared() + self.u.norm_squared());
        (m, c)
    }

    fn at(&self, t: f64) -> Vec3 {
        let (s, c) = t.sin_cos();
        self.base + self.u * c + self.v * s
    }
}

fn row_conditioning(m: &Matrix2<f64>) -> f64 {
    let r0 = m[(0, 0)].hypot(m[(0, 1)]);
    let r1 = m[(1, 0)].hypot(m[(1, 1)]);
    if r0 == 0.0 || r1 == 0.0 {
        return 0.0;
    }
    m.determinant().abs() / (r0 * r1)
}

/// Trig polynomial `|P x + r|^2 - 1` for `x = (cos t, sin t)`.
fn circle_constraint(p: &Matrix2<f64>, r: &Vector2<f64>) -> Trig2 {
    let m = p.transpose() * p;
    let rp = p.transpose() * r;
    Trig2 {
        a0: 0.5 * (m[(0, 0)] + m[(1, 1)]) + r.norm_squared() - 1.0,
        a1: 2.0 * rp[0],
        b1: 2.0 * rp[1],
        a2: 0.5 * (m[(0, 0)] - m[(1, 1)]),
        b2: m[(0, 1)],
    }
}

#[allow(clippy::too_many_arguments)]
fn sp5_residual(
    p0: &Vec3,
    p1: &Vec3,
    p2: &Vec3,
    p3: &Vec3,
    k1: &Vec3,
    k2: &Vec3,
    k3: &Vec3,
    t: &[f64; 3],
) -> Vec3 {
    let inner = p2 + rotate(k3, t[2], p3);
    p0 + rotate(k1, t[0], p1) - rotate(k2, t[1], &inner)
}

/// Damped Gauss-Newton on the full 3-vector equation.
#[allow(clippy::too_many_arguments)]
fn sp5_polish(
    p0: &Vec3,
    p1: &Vec3,
    p2: &Vec3,
    p3: &Vec3,
    k1: &Vec3,
    k2: &Vec3,
    k3: &Vec3,
    t: &mut [f64; 3],
) -> f64 {
    let mut res = sp5_residual(p0, p1, p2, p3, k1, k2, k3, t);
    let mut err = res.norm();
    for _ in 0..8 {
        let r1p1 = rotate(k1, t[0], p1);
        let r3p3 = rotate(k3, t[2], p3);
        let inner = p2 + r3p3;
        let j = Matrix3::from_columns(&[
            k1.cross(&r1p1),
            -k2.cross(&rotate(k2, t[1], &inner)),
            -rotate(k2, t[1], &k3.cross(&r3p3)),
        ]);
        let jt = j.transpose();
        let jtj = jt * j;
        let mu = 1e-12 * jtj.trace().max(f64::MIN_POSITIVE);
        let Some(inv) = (jtj + Matrix3::identity() * mu).try_inverse() else {
            break;
        };
        let step = inv * (jt * res);
        let trial = [t[0] - step[0], t[1] - step[1], t[2] - step[2]];
        let r_trial = sp5_residual(p0, p1, p2, p3, k1, k2, k3, &trial);
        if r_trial.norm() >= err {
            break;
        }
        *t = trial;
        res = r_trial;
        err = res.norm();
    }
    for v in t.iter_mut() {
        *v = wrap_to_pi(*v);
    }
    err
}

/// Solves `p0 + rot(k1, t1) p1 = rot(k2, t2) (p2 + rot(k3, t3) p3)`.
///
/// Rotating about `k2` preserves both `k2 . x` and `|x|`, which gives two
/// equations affine in `(cos t1, sin t1)` and `(cos t3, sin t3)`. One pair is
/// eliminated, leaving a second-order trigonometric polynomial in the other
/// angle with at most four roots; `t2` then follows from Subproblem 1.
pub fn subproblem5(
    p0: &Vec3,
    p1: &Vec3,
    p2: &Vec3,
    p3: &Vec3,
    k1: &Vec3,
    k2: &Vec3,
    k3: &Vec3,
) -> Sp5Solution {
    sp5_solve(p0, p1, p2, p3, k1, k2, k3, false).0
}

/// Subproblem 5 together with least-squares continuations of solution
/// pairs that have merged and vanished.
///
/// Where two exact solutions meet and disappear, the circle constraint in the
/// free angle keeps a local extremum near zero. Each such extremum (a local
/// minimum of the constraint's magnitude that is not a root) yields an
/// approximate triple that continues the vanished pair, so quantities
/// computed from the solutions vary continuously across the boundary of
/// exact solvability.
pub fn subproblem5_continued(
    p0: &Vec3,
    p1: &Vec3,
    p2: &Vec3,
    p3: &Vec3,
    k1: &Vec3,
    k2: &Vec3,
    k3: &Vec3,
) -> Sp5Continued {
    let (exact, near) = sp5_solve(p0, p1, p2, p3, k1, k2, k3, true);
    Sp5Continued { exact, near }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sp5Continued {
    pub exact: Sp5Solution,
    /// Approximate triples at local minima of the constraint magnitude.
    pub near: Vec<[f64; 3]>,
}

#[allow(clippy::too_many_arguments)]
fn sp5_solve(
    p0: &Vec3,
    p1: &Vec3,
    p2: &Vec3,
    p3: &Vec3,
    k1: &Vec3,
    k2: &Vec3,
    k3: &Vec3,
    continued: bool,
) -> (Sp5Solution, Vec<[f64; 3]>) {
    let left = Circle::new(p0, p1, k1);
    let right = Circle::new(p2, p3, k3);
    let (ml, cl) = left.invariants(k2);
    let (mr, cr) = right.invariants(k2);

    // Eliminate whichever side has the better-conditioned invariant map.
    let cond_l = row_conditioning(&ml);
    let cond_r = row_conditioning(&mr);
    if cond_l.max(cond_r) < 1e-10 {
        return (Sp5Solution::degenerate(), Vec::new());
    }
    let solve_left_angle = cond_r >= cond_l;
    let (free_m, free_c, elim_m, elim_c) =
        if solve_left_angle { (ml, cl, mr, cr) } else { (mr, cr, ml, cl) };
    let Some(elim_inv) = elim_m.try_inverse() else {
        return (Sp5Solution::degenerate(), Vec::new());
    };
    let p = elim_inv * free_m;
    let r = elim_inv * (free_c - elim_c);
    let constraint = circle_constraint(&p, &r);
    let roots = match constraint.roots() {
        TrigRoots::Identically => return (Sp5Solution::degenerate(), Vec::new()),
        TrigRoots::Isolated(roots) => roots,
    };

    let tol = EXACT_RTOL * p0.norm().max(1.0);
    let mut thetas: Vec<[f64; 3]> = Vec::with_capacity(roots.len());
    for &t_free in roots.as_slice() {
        let (s, c) = t_free.sin_cos();
        let x = p * Vector2::new(c, s) + r;
        let t_elim = x[1].atan2(x[0]);
        let (t1, t3) = if solve_left_angle { (t_free, t_elim) } else { (t_elim, t_free) };
        let l = left.at(t1);
        let h = right.at(t3);
        let t2 = subproblem1(&h, &l, k2).theta;
        let mut t = [wrap_to_pi(t1), t2, wrap_to_pi(t3)];
        let mut err = sp5_residual(p0, p1, p2, p3, k1, k2, k3, &t).norm();
        if err > 1e-3 * tol {
            err = sp5_polish(p0, p1, p2, p3, k1, k2, k3, &mut t);
        }
        if err > tol {
            continue;
        }
        let duplicate = thetas.iter().any(|u| {
            (0..3).all(|i| angle_distance(u[i], t[i]) <= SP5_DEDUP_TOL)
        });
        if !duplicate {
            thetas.push(t);
        }
    }
    let mut near = Vec::new();
    if continued {
        let slope = constraint.derivative();
        if let TrigRoots::Isolated(crit) = slope.roots() {
            let curvature = slope.derivative();
            for &tc in crit.as_slice() {
                let f = constraint.eval(tc);
                if f == 0.0 || f * curvature.eval(tc) <= 0.0 {
                    continue;
                }
                let (s, c) = tc.sin_cos();
                let x = p * Vector2::new(c, s) + r;
                let t_elim = x[1].atan2(x[0]);
                let (t1, t3) = if solve_left_angle { (tc, t_elim) } else { (t_elim, tc) };
                let t2 = subproblem1(&right.at(t3), &left.at(t1), k2).theta;
                near.push([wrap_to_pi(t1), t2, wrap_to_pi(t3)]);
            }
        }
    }
    (Sp5Solution { thetas, degenerate: false }, near)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::{e_x, e_y, e_z, rot};
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn sp1_examples() {
        let s = subproblem1(&e_x(), &e_y(), &e_z());
        assert!((s.theta - FRAC_PI_2).abs() < 1e-15 && !s.least_squares && !s.degenerate);
        let s = subproblem1(&e_x(), &e_x(), &e_z());
        assert!(s.theta.abs() < 1e-15 && !s.least_squares);
        let p2 = (e_x() + e_z()) * std::f64::consts::FRAC_1_SQRT_2;
        let s = subproblem1(&e_x(), &p2, &e_z());
        assert!(s.theta.abs() < 1e-15 && s.least_squares);
    }

    #[test]
    fn sp1_degenerate_axis() {
        let s = subproblem1(&e_z(), &e_x(), &e_z());
        assert!(s.degenerate && s.least_squares);
        assert_eq!(s.theta, 0.0);
    }

    #[test]
    fn sp4_examples() {
        let s = subproblem4(&e_x(), &e_x(), &e_z(), 0.7f64.cos());
        assert_eq!(s.thetas.len(), 2);
        assert!((s.thetas[0] + 0.7).abs() < 1e-12 && (s.thetas[1] - 0.7).abs() < 1e-12);
        assert!(!s.least_squares);

        let s = subproblem4(&e_x(), &e_x(), &e_z(), 1.0);
        assert_eq!(s.thetas, vec![0.0]);
        assert!(!s.least_squares);

        let s = subproblem4(&e_x(), &e_x(), &e_z(), 2.0);
        assert_eq!(s.thetas.len(), 1);
        assert!(s.thetas[0].abs() < 1e-15 && s.least_squares);
    }

    #[test]
    fn sp4_degenerate_when_h_parallel_to_k() {
        let s = subproblem4(&e_z(), &e_x(), &e_z(), 0.0);
        assert!(s.degenerate && s.thetas.is_empty() && !s.least_squares);
        let s = subproblem4(&e_x(), &e_z(), &e_z(), 0.5);
        assert!(s.degenerate && s.least_squares);
    }

    fn generic() -> (Vec3, Vec3, Vec3) {
        (Vec3::new(1.0, 2.0, 0.5), Vec3::new(0.7, -0.3, 1.1), Vec3::new(0.4, 0.9, -0.2))
    }

    #[test]
    fn sp5_forward_constructed() {
        let (p1, p2, p3) = generic();
        let (k1, k2, k3) = (e_z(), e_y(), e_x());
        let t_star = [0.3, -0.5, 0.8];
        let p0 = rot(&k2, t_star[1]) * (p2 + rot(&k3, t_star[2]) * p3) - rot(&k1, t_star[0]) * p1;
        let sol = subproblem5(&p0, &p1, &p2, &p3, &k1, &k2, &k3);
        assert!(!sol.degenerate);
        assert!(sol
            .thetas
            .iter()
            .any(|t| (0..3).all(|i| angle_distance(t[i], t_star[i]) < 1e-9)), "{sol:?}");
        for t in &sol.thetas {
            assert!(sp5_residual(&p0, &p1, &p2, &p3, &k1, &k2, &k3, t).norm() <= 1e-8 * p0.norm().max(1.0));
        }
    }

    #[test]
    fn sp5_identity_rotations() {
        let (p1, p2, p3) = generic();
        let p0 = p2 + p3 - p1;
        let sol = subproblem5(&p0, &p1, &p2, &p3, &e_z(), &e_y(), &e_x());
        assert!(sol.thetas.iter().any(|t| t.iter().all(|v| v.abs() < 1e-9)), "{sol:?}");
    }

    #[test]
    fn sp5_unbalanced_magnitudes() {
        let (p1, p2, p3) = generic();
        let p0 = Vec3::new(100.0, 100.0, 100.0);
        let sol = subproblem5(&p0, &p1, &p2, &p3, &e_z(), &e_y(), &e_x());
        assert!(sol.thetas.is_empty() && !sol.degenerate);
    }

    #[test]
    fn sp5_continuum_is_degenerate() {
        // p1 along k1 and p3 along k3: both sides are fixed points, rotation
        // about k2 then admits a continuum in t1 and t3.
        let sol = subproblem5(
            &Vec3::zeros(),
            &e_z(),
            &Vec3::zeros(),
            &e_z(),
            &e_z(),
            &e_y(),
            &e_z(),
        );
        assert!(sol.degenerate);
    }
}
