//! The moment map `g: (mu, nu) -> (mu~, nu~)` of a SELU layer under a
//! Gaussian pre-activation, its fixed points and iteration.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::quadrature;
use crate::special::{erfc_scaled_unchecked, erfc_unchecked};

/// Smallest admissible `nu * tau`; the closed forms divide by its square root.
pub const MIN_VARIANCE_PRODUCT: f64 = 1e-12;

/// Mean and variance of the activations of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentPair {
    pub mu: f64,
    pub nu: f64,
}

impl MomentPair {
    pub const fn new(mu: f64, nu: f64) -> Self {
        Self { mu, nu }
    }

    pub fn max_norm_distance(&self, other: &MomentPair) -> f64 {
        (self.mu - other.mu).abs().max((self.nu - other.nu).abs())
    }
}

/// `omega = sum w_i` and `tau = sum w_i^2` of a unit's incoming weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightMoments {
    pub omega: f64,
    pub tau: f64,
}

impl WeightMoments {
    pub const NORMALIZED: WeightMoments = WeightMoments { omega: 0.0, tau: 1.0 };

    pub const fn new(omega: f64, tau: f64) -> Self {
        Self { omega, tau }
    }
}

/// SELU scale `lambda` and negative-branch coefficient `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeluParams {
    pub lambda: f64,
    pub alpha: f64,
}

impl SeluParams {
    pub fn new(lambda: f64, alpha: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite() && alpha > 0.0 && alpha.is_finite()) {
            return Err(domain(format!(
                "SELU parameters must be positive and finite, got lambda={lambda} alpha={alpha}"
            )));
        }
        Ok(Self { lambda, alpha })
    }

    /// Parameters whose moment map has the fixed point (0, 1) for normalized
    /// weights, solved numerically once and cached.
    pub fn standard() -> SeluParams {
        static CACHE: OnceLock<SeluParams> = OnceLock::new();
        *CACHE.get_or_init(|| {
            solve_selu_params(MomentPair::new(0.0, 1.0), WeightMoments::NORMALIZED)
                .expect("fixed point (0, 1) is solvable")
        })
    }

    /// Closed-form solution for the (0, 1) fixed point.
    pub fn standard_closed_form() -> SeluParams {
        let e = std::f64::consts::E;
        let c = erfc_unchecked(std::f64::consts::FRAC_1_SQRT_2);
        let c2 = erfc_unchecked(std::f64::consts::SQRT_2);
        let alpha = -(2.0 / PI).sqrt() / (c * 0.5f64.exp() - 1.0);
        let denom = 2.0 * c2 * e * e + PI * c * c * e - 2.0 * (2.0 + PI) * c * e.sqrt() + PI + 2.0;
        let lambda = (1.0 - c * e.sqrt()) * (2.0 * PI).sqrt() / denom.sqrt();
        SeluParams { lambda, alpha }
    }

    /// Activation value as `x -> -inf`.
    pub fn saturation(&self) -> f64 {
        -self.lambda * self.alpha
    }
}

/// Next-layer mean, second moment and variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub mu_next: f64,
    pub xi_next: f64,
    pub nu_next: f64,
}

impl MapResult {
    pub fn moments(&self) -> MomentPair {
        MomentPair::new(self.mu_next, self.nu_next)
    }
}

/// Shared sub-expressions of the closed forms at one point.
///
/// With `y = mu*omega`, `x = nu*tau`, `r = sqrt(2x)` and `q = exp(-y^2/(2x))`:
/// `e0 = erfc(y/r)`, `e1 = exp(y + x/2) erfc((y+x)/r)`,
/// `e2 = exp(2y + 2x) erfc((y+2x)/r)`. The last two are formed as
/// `q * erfcx(..)`, which is the same quantity without the overflow.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Terms {
    pub y: f64,
    pub x: f64,
    pub sqrt_x: f64,
    pub gauss: f64,
    pub e0: f64,
    pub e1: f64,
    pub e2: f64,
}

impl Terms {
    #[inline]
    pub fn new(y: f64, x: f64) -> Terms {
        let sqrt_x = x.sqrt();
        let r = std::f64::consts::SQRT_2 * sqrt_x;
        let gauss = (-y * y / (2.0 * x)).exp();
        let e0 = erfc_unchecked(y / r);
        let e1 = gauss * erfc_scaled_unchecked((y + x) / r);
        let e2 = gauss * erfc_scaled_unchecked((y + 2.0 * x) / r);
        Terms { y, x, sqrt_x, gauss, e0, e1, e2 }
    }

    #[inline]
    pub fn mu_next(&self, p: &SeluParams) -> f64 {
        let Terms { y, sqrt_x, gauss, e0, e1, .. } = *self;
        0.5 * p.lambda
            * (-(p.alpha + y) * e0 + p.alpha * e1 + (2.0 / PI).sqrt() * sqrt_x * gauss + 2.0 * y)
    }

    #[inline]
    pub fn xi_next(&self, p: &SeluParams) -> f64 {
        let Terms { y, x, sqrt_x, gauss, e0, e1, e2 } = *self;
        let a2 = p.alpha * p.alpha;
        0.5 * p.lambda
            * p.lambda
            * ((y * y + x) * (2.0 - e0)
                + a2 * (-2.0 * e1 + e2 + e0)
                + (2.0 / PI).sqrt() * y * sqrt_x * gauss)
    }
}

pub(crate) fn check_point(m: &MomentPair, w: &WeightMoments) -> Result<(f64, f64)> {
    for (name, v) in [("mu", m.mu), ("nu", m.nu), ("omega", w.omega), ("tau", w.tau)] {
        if !v.is_finite() {
            return Err(domain(format!("{name} must be finite, got {v}")));
        }
    }
    let x = m.nu * w.tau;
    if !(x >= MIN_VARIANCE_PRODUCT) {
        return Err(domain(format!(
            "nu*tau must be at least {MIN_VARIANCE_PRODUCT:e}, got {x:e}"
        )));
    }
    Ok((m.mu * w.omega, x))
}

/// Closed-form next-layer moments.
pub fn map_moments(m: MomentPair, w: WeightMoments, p: SeluParams) -> Result<MapResult> {
    let (y, x) = check_point(&m, &w)?;
    Ok(map_products(y, x, &p))
}

/// The map depends on its four inputs only through `y = mu*omega` and `x = nu*tau`.
pub(crate) fn map_products(y: f64, x: f64, p: &SeluParams) -> MapResult {
    let t = Terms::new(y, x);
    let mu_next = t.mu_next(p);
    let xi_next = t.xi_next(p);
    MapResult { mu_next, xi_next, nu_next: xi_next - mu_next * mu_next }
}

/// Absolute tolerance of the quadrature oracle.
pub const QUADRATURE_TOLERANCE: f64 = 1e-10;

/// Next-layer moments by direct numerical integration of
/// `E[selu(z)]` and `E[selu(z)^2]` for `z ~ N(mu*omega, nu*tau)`.
///
/// Independent of the closed forms: only `exp` enters the integrands.
pub fn quadrature_oracle(m: MomentPair, w: WeightMoments, p: SeluParams) -> Result<MapResult> {
    let (y, x) = check_point(&m, &w)?;
    let s = x.sqrt();
    let selu = |z: f64| {
        if z > 0.0 {
            p.lambda * z
        } else {
            p.lambda * p.alpha * z.exp_m1()
        }
    };
    let density = |t: f64| (-0.5 * t * t).exp() / (2.0 * PI).sqrt();
    // z = y + s t; the kink of selu sits at t0 = -y/s
    let t0 = -y / s;
    let first = |t: f64| selu(y + s * t) * density(t);
    let second = |t: f64| {
        let v = selu(y + s * t);
        v * v * density(t)
    };
    let half_tol = 0.5 * QUADRATURE_TOLERANCE;
    let mu_next = quadrature::integrate_semi_infinite(&first, t0, half_tol)?;
    let xi_next = quadrature::integrate_semi_infinite(&second, t0, half_tol)?;
    Ok(MapResult { mu_next, xi_next, nu_next: xi_next - mu_next * mu_next })
}

/// Solves `g(target) = target` for `(lambda, alpha)` by damped Newton on the
/// residual `(mu~ - mu*, nu~ - nu*)` with a finite-difference Jacobian.
pub fn solve_selu_params(target: MomentPair, w: WeightMoments) -> Result<SeluParams> {
    if w != WeightMoments::NORMALIZED {
        return Err(domain(format!(
            "fixed-point solving expects normalized weights (0, 1), got ({}, {})",
            w.omega, w.tau
        )));
    }
    if !(target.nu > 0.0 && target.nu.is_finite() && target.mu.is_finite()) {
        return Err(domain(format!("target variance must be positive, got {}", target.nu)));
    }
    let (y, x) = check_point(&target, &w)?;
    let residual = |lambda: f64, alpha: f64| {
        let r = map_products(y, x, &SeluParams { lambda, alpha });
        [r.mu_next - target.mu, r.nu_next - target.nu]
    };
    let norm = |r: [f64; 2]| r[0].abs().max(r[1].abs());

    let (mut lambda, mut alpha) = (1.0, 1.5);
    let mut r = residual(lambda, alpha);
    for _ in 0..100 {
        if norm(r) < 1e-14 {
            break;
        }
        let hl = 1e-7 * lambda.abs().max(1.0);
        let ha = 1e-7 * alpha.abs().max(1.0);
        let rl_p = residual(lambda + hl, alpha);
        let rl_m = residual(lambda - hl, alpha);
        let ra_p = residual(lambda, alpha + ha);
        let ra_m = residual(lambda, alpha - ha);
        let j = [
            [(rl_p[0] - rl_m[0]) / (2.0 * hl), (ra_p[0] - ra_m[0]) / (2.0 * ha)],
            [(rl_p[1] - rl_m[1]) / (2.0 * hl), (ra_p[1] - ra_m[1]) / (2.0 * ha)],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-300 || !det.is_finite() {
            return Err(Error::NoSolution(format!("singular Jacobian at lambda={lambda} alpha={alpha}")));
        }
        let dl = (j[1][1] * r[0] - j[0][1] * r[1]) / det;
        let da = (-j[1][0] * r[0] + j[0][0] * r[1]) / det;

        let mut step = 1.0;
        loop {
            let (nl, na) = (lambda - step * dl, alpha - step * da);
            if nl > 0.0 && na > 0.0 {
                let nr = residual(nl, na);
                if nr.iter().all(|v| v.is_finite()) && norm(nr) < norm(r) {
                    lambda = nl;
                    alpha = na;
                    r = nr;
                    break;
                }
            }
            step *= 0.5;
            if step < 1e-10 {
                // no further decrease available; accept if already converged
                break;
            }
        }
        if step < 1e-10 {
            break;
        }
    }
    if norm(r) < 1e-12 {
        SeluParams::new(lambda, alpha)
    } else {
        Err(Error::NoSolution(format!(
            "residual {:e} after Newton iterations (lambda={lambda}, alpha={alpha})",
            norm(r)
        )))
    }
}

/// Variances outside `(0, DIVERGENCE_LIMIT)` count as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Default max-norm step tolerance for [`iterate_map`].
pub const DEFAULT_ITERATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<MomentPair>,
    pub converged: bool,
}

impl Trajectory {
    pub fn last(&self) -> MomentPair {
        *self.points.last().expect("trajectory holds the start point")
    }
}

/// Iterates the moment map from `start` until successive points differ by
/// less than `tol` in max-norm, or `max_steps` applications.
pub fn iterate_map(
    start: MomentPair,
    w: WeightMoments,
    p: SeluParams,
    max_steps: usize,
    tol: f64,
) -> Result<Trajectory> {
    check_point(&start, &w)?;
    let mut points = vec![start];
    let mut current = start;
    for _ in 0..max_steps {
        let next = match map_moments(current, w, p) {
            Ok(r) => r.moments(),
            Err(_) => return Err(Error::Divergence { trajectory: points }),
        };
        points.push(next);
        if !(next.nu > 0.0 && next.nu < DIVERGENCE_LIMIT) || !next.mu.is_finite() {
            return Err(Error::Divergence { trajectory: points });
        }
        if next.max_norm_distance(&current) < tol {
            return Ok(Trajectory { points, converged: true });
        }
        current = next;
    }
    Ok(Trajectory { points, converged: false })
}
