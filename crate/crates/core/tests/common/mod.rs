//! Independent oracles and samplers shared by the integration tests. None of
//! them calls the closed-form solvers they check.

#![allow(dead_code)]

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use yumi_kinematics::model::{JointLimits, JointVector};
use yumi_kinematics::spatial::{rot, wrap_to_pi, Vec3};

pub fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
    Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale
}

pub fn random_q(rng: &mut ChaCha8Rng, limits: &JointLimits) -> JointVector {
    JointVector(std::array::from_fn(|i| rng.gen_range(limits.q_min[i]..limits.q_max[i])))
}

/// Samples of `[-pi, pi)` at spacing close to `step`.
fn scan_grid(step: f64) -> Vec<f64> {
    let n = (TAU / step).round() as usize;
    (0..n).map(|i| -PI + i as f64 * TAU / n as f64).collect()
}

fn golden_min(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (hi - r * (hi - lo), lo + r * (hi - lo));
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..200 {
        if hi - lo < 1e-15 {
            break;
        }
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        }
    }
    0.5 * (lo + hi)
}

fn bisect_root(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Global minimizer of `|rot(k, t) p1 - p2|` by a grid scan refined with a
/// golden-section search around the best sample.
pub fn sp1_oracle(p1: &Vec3, p2: &Vec3, k: &Vec3, step: f64) -> f64 {
    let f = |t: f64| (rot(k, t) * p1 - p2).norm();
    let grid = scan_grid(step);
    let best = grid.iter().copied().min_by(|a, b| f(*a).total_cmp(&f(*b))).unwrap();
    wrap_to_pi(golden_min(best - step, best + step, f))
}

/// Roots of `h^T rot(k, t) p - d` from sign changes on a grid, refined by
/// bisection; if there are none, the minimizer of its magnitude.
pub fn sp4_oracle(h: &Vec3, p: &Vec3, k: &Vec3, d: f64, step: f64) -> (Vec<f64>, bool) {
    let f = |t: f64| h.dot(&(rot(k, t) * p)) - d;
    let grid = scan_grid(step);
    let n = grid.len();
    let vals: Vec<f64> = grid.iter().map(|&t| f(t)).collect();
    let mut roots = Vec::new();
    for i in 0..n {
        let j = (i + 1) % n;
        let (a, b) = (grid[i], if j == 0 { grid[j] + TAU } else { grid[j] });
        if vals[i] == 0.0 {
            roots.push(grid[i]);
        } else if vals[i] * vals[j] < 0.0 {
            roots.push(wrap_to_pi(bisect_root(a, b, f)));
        }
    }
    if !roots.is_empty() {
        return (roots, false);
    }
    let best = (0..n).min_by(|&a, &b| vals[a].abs().total_cmp(&vals[b].abs())).unwrap();
    (vec![wrap_to_pi(golden_min(grid[best] - step, grid[best] + step, |t| f(t).abs()))], true)
}

/// All solutions of `p0 + rot(k1, t1) p1 = rot(k2, t2) (p2 + rot(k3, t3) p3)`.
///
/// A rotation about `k2` maps `a` onto `b` exactly when both vectors have the
/// same length and the same `k2` component. Those two scalar conditions are
/// scanned over a `(t1, t3)` grid; grid minima of their magnitude are refined
/// by Newton's method and `t2` is read off the projections onto the plane
/// normal to `k2`.
#[allow(clippy::too_many_arguments)]
pub fn sp5_oracle(
    p0: &Vec3,
    p1: &Vec3,
    p2: &Vec3,
    p3: &Vec3,
    k1: &Vec3,
    k2: &Vec3,
    k3: &Vec3,
    step: f64,
) -> Vec<[f64; 3]> {
    let scale = [p0, p1, p2, p3].iter().map(|v| v.norm()).fold(1.0, f64::max);
    let conditions = |t1: f64, t3: f64| -> Vector2<f64> {
        let a = p0 + rot(k1, t1) * p1;
        let b = p2 + rot(k3, t3) * p3;
        Vector2::new((a.norm_squared() - b.norm_squared()) / scale, k2.dot(&a) - k2.dot(&b))
    };
    let grid = scan_grid(step);
    let n = grid.len();
    let mag: Vec<f64> = grid
        .iter()
        .flat_map(|&t1| grid.iter().map(move |&t3| (t1, t3)))
        .map(|(t1, t3)| conditions(t1, t3).norm())
        .collect();
    let at = |i: usize, j: usize| mag[(i % n) * n + (j % n)];
    let mut found: Vec<[f64; 3]> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let v = at(i, j);
            let is_min = (0..3).all(|di| (0..3).all(|dj| (di == 1 && dj == 1) || at(i + n - 1 + di, j + n - 1 + dj) >= v));
            if !is_min {
                continue;
            }
            let mut x = Vector2::new(grid[i], grid[j]);
            for _ in 0..60 {
                let c = conditions(x[0], x[1]);
                if c.norm() < 1e-15 {
                    break;
                }
                let h = 1e-7;
                let d1 = (conditions(x[0] + h, x[1]) - conditions(x[0] - h, x[1])) / (2.0 * h);
                let d3 = (conditions(x[0], x[1] + h) - conditions(x[0], x[1] - h)) / (2.0 * h);
                let jac = Matrix2::from_columns(&[d1, d3]);
                let Some(step) = jac.lu().solve(&c) else { break };
                let step = if step.norm() > 0.1 { step * (0.1 / step.norm()) } else { step };
                x -= step;
            }
            if conditions(x[0], x[1]).norm() > 1e-10 {
                continue;
            }
            let (t1, t3) = (wrap_to_pi(x[0]), wrap_to_pi(x[1]));
            let a = p0 + rot(k1, t1) * p1;
            let b = p2 + rot(k3, t3) * p3;
            let (ap, bp) = (a - k2 * k2.dot(&a), b - k2 * k2.dot(&b));
            if ap.norm() < 1e-9 * scale || bp.norm() < 1e-9 * scale {
                continue;
            }
            let t2 = wrap_to_pi(k2.dot(&bp.cross(&ap)).atan2(bp.dot(&ap)));
            let residual = (a - rot(k2, t2) * b).norm();
            if residual > 1e-8 * scale {
                continue;
            }
            let cand = [t1, t2, t3];
            if !found.iter().any(|f| (0..3).all(|m| angle_gap(f[m], cand[m]) < 1e-6)) {
                found.push(cand);
            }
        }
    }
    found
}

pub fn angle_gap(a: f64, b: f64) -> f64 {
    wrap_to_pi(a - b).abs()
}

/// Whether `a` and `b` can be paired one-to-one with every pair within
/// `tol` under `dist`.
pub fn match_one_to_one<T>(a: &[T], b: &[T], tol: f64, dist: impl Fn(&T, &T) -> f64) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut used = vec![false; b.len()];
    for x in a {
        let best = (0..b.len())
            .filter(|&j| !used[j])
            .map(|j| (j, dist(x, &b[j])))
            .min_by(|p, q| p.1.total_cmp(&q.1));
        match best {
            Some((j, d)) if d <= tol => used[j] = true,
            _ => return false,
        }
    }
    true
}
