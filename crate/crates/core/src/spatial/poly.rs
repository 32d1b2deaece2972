//! Root finding for second-order trigonometric polynomials
//! `f(t) = a0 + a1 cos t + b1 sin t + a2 cos 2t + b2 sin 2t`.
//!
//! The tangent half-angle substitution turns `f` into a real quartic, which
//! is solved in closed form (Ferrari) and then polished by Newton iterations
//! on `f` itself so that precision does not depend on the substitution.

use std::f64::consts::{FRAC_PI_4, PI};

use super::wrap_to_pi;

/// Up to four roots without heap allocation.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Roots4 {
    vals: [f64; 4],
    len: usize,
}

impl Roots4 {
    pub fn push(&mut self, v: f64) {
        if self.len < 4 {
            self.vals[self.len] = v;
            self.len += 1;
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vals[..self.len]
    }

    pub fn len(&self) -> usize {
        self.len
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Trig2 {
    pub a0: f64,
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
}

pub(crate) enum TrigRoots {
    /// `f` vanishes for every angle.
    Identically,
    Isolated(Roots4),
}

impl Trig2 {
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        let (s, c) = t.sin_cos();
        let (s2, c2) = (2.0 * s * c, c * c - s * s);
        self.a0 + self.a1 * c + self.b1 * s + self.a2 * c2 + self.b2 * s2
    }

    #[inline]
    fn eval_with_derivative(&self, t: f64) -> (f64, f64) {
        let (s, c) = t.sin_cos();
        let (s2, c2) = (2.0 * s * c, c * c - s * s);
        let f = self.a0 + self.a1 * c + self.b1 * s + self.a2 * c2 + self.b2 * s2;
        let df = -self.a1 * s + self.b1 * c - 2.0 * self.a2 * s2 + 2.0 * self.b2 * c2;
        (f, df)
    }

    fn shifted(&self, t0: f64) -> Trig2 {
        let (s, c) = t0.sin_cos();
        let (s2, c2) = (2.0 * s * c, c * c - s * s);
        Trig2 {
            a0: self.a0,
            a1: self.a1 * c + self.b1 * s,
            b1: self.b1 * c - self.a1 * s,
            a2: self.a2 * c2 + self.b2 * s2,
            b2: self.b2 * c2 - self.a2 * s2,
        }
    }

    /// `f'` as another second-order trigonometric polynomial.
    pub fn derivative(&self) -> Trig2 {
        Trig2 { a0: 0.0, a1: self.b1, b1: -self.a1, a2: 2.0 * self.b2, b2: -2.0 * self.a2 }
    }

    pub fn scale(&self) -> f64 {
        self.a0.abs() + self.a1.abs() + self.b1.abs() + self.a2.abs() + self.b2.abs()
    }

    /// All roots in (-pi, pi], polished, with near-duplicates merged.
    pub fn roots(&self) -> TrigRoots {
        let scale = self.scale();
        let harmonic =
            self.a1.abs() + self.b1.abs() + self.a2.abs() + self.b2.abs();
        if harmonic <= 1e-13 * scale || scale == 0.0 {
            return if self.a0.abs() <= 1e-13 * scale.max(f64::MIN_POSITIVE) || scale == 0.0 {
                TrigRoots::Identically
            } else {
                TrigRoots::Isolated(Roots4::default())
            };
        }

        // Shift so that t = pi (the point at infinity of tan(t/2)) is far
        // from a root; the quartic's leading coefficient is f(shift + pi).
        let mut shift = 0.0;
        let mut best = -1.0;
        for k in 0..8 {
            let t0 = k as f64 * FRAC_PI_4;
            let v = self.eval(t0 + PI).abs();
            if v > best {
                best = v;
                shift = t0;
            }
        }
        let g = self.shifted(shift);
        let c4 = g.a0 - g.a1 + g.a2;
        let c3 = 2.0 * g.b1 - 4.0 * g.b2;
        let c2 = 2.0 * g.a0 - 6.0 * g.a2;
        let c1 = 2.0 * g.b1 + 4.0 * g.b2;
        let c0 = g.a0 + g.a1 + g.a2;

        let mut out = Roots4::default();
        let tol = 1e-9 * scale;
        for t in quartic_candidates(c4, c3, c2, c1, c0).as_slice() {
            let mut phi = 2.0 * t.atan();
            for _ in 0..12 {
                let (f, df) = g.eval_with_derivative(phi);
                if df == 0.0 {
                    break;
                }
                let step = f / df;
                if !step.is_finite() || step.abs() > 0.5 {
                    break;
                }
                phi -= step;
                if step.abs() < 1e-15 {
                    break;
                }
            }
            if g.eval(phi).abs() > tol {
                continue;
            }
            let theta = wrap_to_pi(phi + shift);
            if out
                .as_slice()
                .iter()
                .all(|r| wrap_to_pi(r - theta).abs() > 1e-9)
            {
                out.push(theta);
            }
        }
        TrigRoots::Isolated(out)
    }
}

/// Real roots (and real parts of nearly-real complex pairs) of a quartic.
fn quartic_candidates(c4: f64, c3: f64, c2: f64, c1: f64, c0: f64) -> Roots4 {
    let mut out = Roots4::default();
    let (b, c, d, e) = (c3 / c4, c2 / c4, c1 / c4, c0 / c4);
    let b2 = b * b;
    let p = c - 0.375 * b2;
    let q = d - 0.5 * b * c + 0.125 * b2 * b;
    let r = e - 0.25 * b * d + b2 * c / 16.0 - 3.0 * b2 * b2 / 256.0;
    let shift = -0.25 * b;
    let mag = 1.0 + p.abs() + q.abs().sqrt() + r.abs().sqrt();

    let mut push_quadratic = |lin: f64, cst: f64| {
        // y^2 + lin*y + cst = 0
        let disc = lin * lin - 4.0 * cst;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            let y1 = if lin >= 0.0 { -0.5 * (lin + sq) } else { 0.5 * (sq - lin) };
            let y2 = if y1 != 0.0 { cst / y1 } else { -lin - y1 };
            out.push(y1 + shift);
            out.push(y2 + shift);
        } else if (-disc).sqrt() <= 1e-3 * mag {
            out.push(-0.5 * lin + shift);
        }
    };

    if q.abs() <= 1e-14 * mag * mag * mag {
        // biquadratic in y^2
        let disc = p * p - 4.0 * r;
        let ds = if disc >= 0.0 { disc.sqrt() } else { 0.0 };
        for z in [0.5 * (-p + ds), 0.5 * (-p - ds)] {
            if z >= 0.0 {
                let y = z.sqrt();
                out.push(y + shift);
                if y > 0.0 {
                    out.push(-y + shift);
                }
            } else if z.abs() <= 1e-6 * mag * mag {
                out.push(shift);
            }
        }
        return out;
    }

    let m = largest_cubic_root(p, 0.25 * p * p - r, -0.125 * q * q);
    if !(m > 0.0) {
        return out;
    }
    let s = (2.0 * m).sqrt();
    let h = q / (2.0 * s);
    push_quadratic(-s, 0.5 * p + m + h);
    push_quadratic(s, 0.5 * p + m - h);
    out
}

/// Largest real root of the monic cubic `x^3 + a x^2 + b x + c`.
fn largest_cubic_root(a: f64, b: f64, c: f64) -> f64 {
    let a3 = a / 3.0;
    let pp = b - a * a3;
    let qq = 2.0 * a3 * a3 * a3 - a3 * b + c;
    let disc = 0.25 * qq * qq + pp * pp * pp / 27.0;
    let y = if disc > 0.0 {
        let sq = disc.sqrt();
        (-0.5 * qq + sq).cbrt() + (-0.5 * qq - sq).cbrt()
    } else if pp == 0.0 {
        0.0
    } else {
        let m = 2.0 * (-pp / 3.0).sqrt();
        let arg = (3.0 * qq / (pp * m)).clamp(-1.0, 1.0);
        m * (arg.acos() / 3.0).cos()
    };
    let mut x = y - a3;
    for _ in 0..4 {
        let f = ((x + a) * x + b) * x + c;
        let df = (3.0 * x + 2.0 * a) * x + b;
        if df == 0.0 {
            break;
        }
        let step = f / df;
        if !step.is_finite() {
            break;
        }
        x -= step;
        if step.abs() <= 1e-16 * x.abs() {
            break;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roots_of(f: Trig2) -> Vec<f64> {
        match f.roots() {
            TrigRoots::Isolated(r) => {
                let mut v = r.as_slice().to_vec();
                v.sort_by(f64::total_cmp);
                v
            }
            TrigRoots::Identically => panic!("unexpected identically zero"),
        }
    }

    #[test]
    fn product_of_sines_has_four_roots() {
        // sin(t)*sin(t - 1) = (cos 1 - cos(2t - 1)) / 2
        let c1 = 1f64.cos();
        let s1 = 1f64.sin();
        let f = Trig2 { a0: 0.5 * c1, a1: 0.0, b1: 0.0, a2: -0.5 * c1, b2: -0.5 * s1 };
        let r = roots_of(f);
        let mut expected = vec![0.0, 1.0, PI, wrap_to_pi(1.0 + PI)];
        expected.sort_by(f64::total_cmp);
        assert_eq!(r.len(), 4, "{r:?}");
        for (a, b) in r.iter().zip(&expected) {
            assert!(wrap_to_pi(a - b).abs() < 1e-12, "{r:?}");
        }
    }

    #[test]
    fn constant_functions() {
        let z = Trig2 { a0: 0.0, a1: 0.0, b1: 0.0, a2: 0.0, b2: 0.0 };
        assert!(matches!(z.roots(), TrigRoots::Identically));
        let c = Trig2 { a0: 2.0, a1: 0.0, b1: 0.0, a2: 0.0, b2: 0.0 };
        assert_eq!(roots_of(c).len(), 0);
    }

    #[test]
    fn double_root_is_found_once() {
        // 1 - cos t has a double root at 0
        let f = Trig2 { a0: 1.0, a1: -1.0, b1: 0.0, a2: 0.0, b2: 0.0 };
        let r = roots_of(f);
        assert_eq!(r.len(), 1);
        assert!(r[0].abs() < 1e-7);
    }

    #[test]
    fn cubic_root() {
        // (x-1)(x-2)(x-3)
        let x = largest_cubic_root(-6.0, 11.0, -6.0);
        assert!((x - 3.0).abs() < 1e-12);
    }
}
