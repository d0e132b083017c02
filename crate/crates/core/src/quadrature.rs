//! Globally adaptive Gauss-Kronrod (7/15) integration.

#![allow(clippy::excessive_precision)]

use crate::error::{Error, Result};

/// Subdivision cap for [`integrate`].
pub const MAX_SUBDIVISIONS: usize = 2000;

/// Beyond this many standard deviations the Gaussian weight is below `1e-347`.
const GAUSS_CUTOFF: f64 = 40.0;

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];

const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    Segment {
        a,
        b,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    }
}

/// Integrates `f` over the finite interval `[a, b]` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let mut segments = vec![kronrod(f, a, b)];
    loop {
        let total_error: f64 = segments.iter().map(|s| s.error).sum();
        let value: f64 = segments.iter().map(|s| s.value).sum();
        if !value.is_finite() {
            return Err(Error::Convergence {
                tolerance: tol,
                max_subdivisions: MAX_SUBDIVISIONS,
                estimate: value,
            });
        }
        if total_error <= tol {
            return Ok(value);
        }
        if segments.len() >= MAX_SUBDIVISIONS {
            return Err(Error::Convergence {
                tolerance: tol,
                max_subdivisions: MAX_SUBDIVISIONS,
                estimate: value,
            });
        }
        let worst = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .map(|(i, _)| i)
            .expect("at least one segment");
        let s = segments.swap_remove(worst);
        let mid = 0.5 * (s.a + s.b);
        segments.push(kronrod(f, s.a, mid));
        segments.push(kronrod(f, mid, s.b));
    }
}

/// Integrates `f(t)` over the real line for an integrand carrying a standard
/// Gaussian factor, splitting at `split` (a kink of `f`).
pub fn integrate_semi_infinite<F: Fn(f64) -> f64>(f: &F, split: f64, tol: f64) -> Result<f64> {
    let split = split.clamp(-GAUSS_CUTOFF, GAUSS_CUTOFF);
    Ok(integrate(f, -GAUSS_CUTOFF, split, 0.5 * tol)? + integrate(f, split, GAUSS_CUTOFF, 0.5 * tol)?)
}
