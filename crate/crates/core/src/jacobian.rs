//! Jacobians of the moment map and the largest singular value field `S`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::moments::{check_point, MomentPair, SeluParams, Terms, WeightMoments};

/// A 2x2 matrix `[[j11, j12], [j21, j22]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jacobian2x2 {
    pub j11: f64,
    pub j12: f64,
    pub j21: f64,
    pub j22: f64,
}

impl Jacobian2x2 {
    pub fn determinant(&self) -> f64 {
        self.j11 * self.j22 - self.j12 * self.j21
    }

    pub fn singular_values(&self) -> SingularPair {
        singular_values_2x2(self.j11, self.j12, self.j21, self.j22)
    }

    pub fn entries(&self) -> [f64; 4] {
        [self.j11, self.j12, self.j21, self.j22]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingularPair {
    pub s1: f64,
    pub s2: f64,
}

/// Partial derivatives of `(mu~, xi~)` with respect to `(mu, nu)`.
pub fn jacobian_j(m: MomentPair, w: WeightMoments, p: SeluParams) -> Result<Jacobian2x2> {
    let (y, x) = check_point(&m, &w)?;
    Ok(j_from_terms(&Terms::new(y, x), w, &p))
}

/// Partial derivatives of `(mu~, nu~)` with respect to `(mu, nu)`.
pub fn jacobian_h(m: MomentPair, w: WeightMoments, p: SeluParams) -> Result<Jacobian2x2> {
    let (y, x) = check_point(&m, &w)?;
    let t = Terms::new(y, x);
    Ok(h_from_terms(&t, w, &p))
}

#[inline]
fn j_from_terms(t: &Terms, w: WeightMoments, p: &SeluParams) -> Jacobian2x2 {
    let Terms { y, x, sqrt_x, gauss, e0, e1, e2 } = *t;
    let (l, a) = (p.lambda, p.alpha);
    let a2 = a * a;
    let j11 = 0.5 * l * w.omega * (a * e1 - e0 + 2.0);
    let j12 = 0.25 * l * w.tau * (a * e1 - (a - 1.0) * (2.0 / (PI * x)).sqrt() * gauss);
    let j21 = l * l * w.omega
        * (-a2 * e1 + a2 * e2 + y * (2.0 - e0) + (2.0 / PI).sqrt() * sqrt_x * gauss);
    let j22 = 0.5 * l * l * w.tau * (-a2 * e1 + 2.0 * a2 * e2 - e0 + 2.0);
    Jacobian2x2 { j11, j12, j21, j22 }
}

#[inline]
fn h_from_terms(t: &Terms, w: WeightMoments, p: &SeluParams) -> Jacobian2x2 {
    let j = j_from_terms(t, w, p);
    let mu_next = t.mu_next(p);
    Jacobian2x2 {
        j11: j.j11,
        j12: j.j12,
        j21: j.j21 - 2.0 * mu_next * j.j11,
        j22: j.j22 - 2.0 * mu_next * j.j12,
    }
}

/// Closed-form singular values of a real 2x2 matrix.
pub fn singular_values_2x2(a11: f64, a12: f64, a21: f64, a22: f64) -> SingularPair {
    let r1 = ((a11 + a22).powi(2) + (a21 - a12).powi(2)).sqrt();
    let r2 = ((a11 - a22).powi(2) + (a12 + a21).powi(2)).sqrt();
    SingularPair {
        s1: 0.5 * (r1 + r2),
        s2: 0.5 * (r1 - r2).abs(),
    }
}

/// Largest singular value of `H` at `(mu, omega, nu, tau)`.
pub fn spectral_norm_s(mu: f64, omega: f64, nu: f64, tau: f64, p: SeluParams) -> Result<f64> {
    let (m, w) = (MomentPair::new(mu, nu), WeightMoments::new(omega, tau));
    let (y, x) = check_point(&m, &w)?;
    Ok(spectral_norm_unchecked(y, x, w, &p))
}

/// [`spectral_norm_s`] for a point already known to be admissible.
#[inline]
pub(crate) fn spectral_norm_unchecked(y: f64, x: f64, w: WeightMoments, p: &SeluParams) -> f64 {
    h_from_terms(&Terms::new(y, x), w, p).singular_values().s1
}

/// Which input a partial derivative is taken with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variable {
    Mu,
    Omega,
    Nu,
    Tau,
}

impl Variable {
    pub const ALL: [Variable; 4] = [Variable::Mu, Variable::Omega, Variable::Nu, Variable::Tau];

    fn index(self) -> usize {
        self as usize
    }
}

/// Central difference of `f` at `point` along `var` with step `h`.
pub fn central_difference<F>(f: F, point: [f64; 4], var: Variable, h: f64) -> Result<f64>
where
    F: Fn([f64; 4]) -> Result<f64>,
{
    let (mut hi, mut lo) = (point, point);
    hi[var.index()] += h;
    lo[var.index()] -= h;
    Ok((f(hi)? - f(lo)?) / (2.0 * h))
}

/// `S` as a function of the packed point `[mu, omega, nu, tau]`.
pub fn s_at(p: SeluParams) -> impl Fn([f64; 4]) -> Result<f64> {
    move |v| spectral_norm_s(v[0], v[1], v[2], v[3], p)
}

/// Entry `(row, col)` of `J` as a function of the packed point.
pub fn j_entry_at(p: SeluParams, row: usize, col: usize) -> impl Fn([f64; 4]) -> Result<f64> {
    move |v| {
        let j = jacobian_j(MomentPair::new(v[0], v[2]), WeightMoments::new(v[1], v[3]), p)?;
        Ok(j.entries()[2 * row + col])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::map_moments;
    use rand::{Rng, SeedableRng};

    fn p01() -> SeluParams {
        SeluParams::standard()
    }

    #[test]
    fn fixed_point_matrix() {
        let m = MomentPair::new(0.0, 1.0);
        let h = jacobian_h(m, WeightMoments::NORMALIZED, p01()).unwrap();
        let j = jacobian_j(m, WeightMoments::NORMALIZED, p01()).unwrap();
        assert!((h.j11).abs() < 1e-15 && (h.j21).abs() < 1e-15);
        assert!((h.j12 - 0.088834).abs() < 1e-6);
        assert!((h.j22 - 0.782648).abs() < 1e-6);
        assert!((h.j12 - j.j12).abs() < 1e-15 && (h.j22 - j.j22).abs() < 1e-15);
        let s = spectral_norm_s(0.0, 0.0, 1.0, 1.0, p01()).unwrap();
        assert!((s - 0.7877).abs() < 1e-4);
    }

    fn fd_check(point: [f64; 4]) {
        let p = p01();
        let (m, w) = (MomentPair::new(point[0], point[2]), WeightMoments::new(point[1], point[3]));
        let j = jacobian_j(m, w, p).unwrap();
        let h = jacobian_h(m, w, p).unwrap();
        let comp = |k: usize| {
            move |v: [f64; 4]| {
                let r = map_moments(MomentPair::new(v[0], v[2]), WeightMoments::new(v[1], v[3]), p)?;
                Ok([r.mu_next, r.xi_next, r.nu_next][k])
            }
        };
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-5 * b.abs().max(1e-3);
        for (k, want) in [(0, [j.j11, j.j12]), (1, [j.j21, j.j22]), (2, [h.j21, h.j22])] {
            let d_mu = central_difference(comp(k), point, Variable::Mu, 1e-6).unwrap();
            let d_nu = central_difference(comp(k), point, Variable::Nu, 1e-6).unwrap();
            assert!(close(want[0], d_mu), "{k} mu {point:?}: {} vs {d_mu}", want[0]);
            assert!(close(want[1], d_nu), "{k} nu {point:?}: {} vs {d_nu}", want[1]);
        }
    }

    #[test]
    fn finite_difference_examples() {
        // (mu, omega, nu, tau)
        fd_check([0.05, -0.03, 1.1, 0.9]);
        fd_check([0.1, 0.1, 0.8, 1.25]);
    }

    #[test]
    fn finite_difference_random() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            fd_check([
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(0.8..1.5),
                rng.random_range(0.8..1.25),
            ]);
        }
    }

    #[test]
    fn singular_value_examples() {
        let s = singular_values_2x2(1.0, 0.0, 0.0, 1.0);
        assert_eq!((s.s1, s.s2), (1.0, 1.0));
        let s = singular_values_2x2(3.0, 0.0, 0.0, 1.0);
        assert_eq!((s.s1, s.s2), (3.0, 1.0));
        let s = singular_values_2x2(0.0, 2.0, 0.0, 0.0);
        assert_eq!((s.s1, s.s2), (2.0, 0.0));
    }

    #[test]
    fn corners_contract() {
        for mu in [-0.1, 0.1] {
            for omega in [-0.1, 0.1] {
                for nu in [0.8, 1.5] {
                    for tau in [0.8, 1.25] {
                        let s = spectral_norm_s(mu, omega, nu, tau, p01()).unwrap();
                        assert!(s < 1.0, "S({mu}, {omega}, {nu}, {tau}) = {s}");
                    }
                }
            }
        }
    }

    #[test]
    fn domain_error_propagates() {
        assert!(spectral_norm_s(0.0, 0.0, 0.0, 1.0, p01()).is_err());
        assert!(jacobian_h(MomentPair::new(0.0, 1.0), WeightMoments::new(0.0, 0.0), p01()).is_err());
    }
}
