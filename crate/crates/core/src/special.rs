//! Complementary error function and the bounds used on it.
//!
//! `erfc` is a port of the FreeBSD `s_erf.c` rational approximations (see the
//! notice below). `erfc_scaled` reuses the same asymptotic rational fits on
//! `[1.25, 4]` without ever forming `exp(-x^2)`, and switches to the Laplace
//! continued fraction above 4, so it stays finite for arguments far past the
//! point where `exp(x^2)` overflows.
//!
//! Measured accuracy against correctly rounded reference values is recorded in the
//! tests: at most 2 ulp for `erfc` on `[-6, 6]`, and at most 3 ulp for
//! `erfc_scaled` on `[0.1, 1000]`.

#![allow(clippy::excessive_precision)]

// ====================================================
// Copyright (C) 1993 by Sun Microsystems, Inc. All rights reserved.
//
// Developed at SunPro, a Sun Microsystems, Inc. business.
// Permission to use, copy, modify, and distribute this
// software is freely granted, provided that this notice
// is preserved.
// ====================================================

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

const ERX: f64 = 8.45062911510467529297e-01;

// erf on [0, 0.84375]
const PP0: f64 = 1.28379167095512558561e-01;
const PP1: f64 = -3.25042107247001499370e-01;
const PP2: f64 = -2.84817495755985104766e-02;
const PP3: f64 = -5.77027029648944159157e-03;
const PP4: f64 = -2.37630166566501626084e-05;
const QQ1: f64 = 3.97917223959155352819e-01;
const QQ2: f64 = 6.50222499887672944485e-02;
const QQ3: f64 = 5.08130628187576562776e-03;
const QQ4: f64 = 1.32494738004321644526e-04;
const QQ5: f64 = -3.96022827877536812320e-06;

// erf on [0.84375, 1.25]
const PA0: f64 = -2.36211856075265944077e-03;
const PA1: f64 = 4.14856118683748331666e-01;
const PA2: f64 = -3.72207876035701323847e-01;
const PA3: f64 = 3.18346619901161753674e-01;
const PA4: f64 = -1.10894694282396677476e-01;
const PA5: f64 = 3.54783043256182359371e-02;
const PA6: f64 = -2.16637559486879084300e-03;
const QA1: f64 = 1.06420880400844228286e-01;
const QA2: f64 = 5.40397917702171048937e-01;
const QA3: f64 = 7.18286544141962662868e-02;
const QA4: f64 = 1.26171219808761642112e-01;
const QA5: f64 = 1.36370839120290507362e-02;
const QA6: f64 = 1.19844998467991074170e-02;

// erfc on [1.25, 1/0.35]
const RA0: f64 = -9.86494403484714822705e-03;
const RA1: f64 = -6.93858572707181764372e-01;
const RA2: f64 = -1.05586262253232909814e+01;
const RA3: f64 = -6.23753324503260060396e+01;
const RA4: f64 = -1.62396669462573470355e+02;
const RA5: f64 = -1.84605092906711035994e+02;
const RA6: f64 = -8.12874355063065934246e+01;
const RA7: f64 = -9.81432934416914548592e+00;
const SA1: f64 = 1.96512716674392571292e+01;
const SA2: f64 = 1.37657754143519042600e+02;
const SA3: f64 = 4.34565877475229228821e+02;
const SA4: f64 = 6.45387271733267880336e+02;
const SA5: f64 = 4.29008140027567833386e+02;
const SA6: f64 = 1.08635005541779435134e+02;
const SA7: f64 = 6.57024977031928170135e+00;
const SA8: f64 = -6.04244152148580987438e-02;

// erfc on [1/0.35, 28]
const RB0: f64 = -9.86494292470009928597e-03;
const RB1: f64 = -7.99283237680523006574e-01;
const RB2: f64 = -1.77579549177547519889e+01;
const RB3: f64 = -1.60636384855821916062e+02;
const RB4: f64 = -6.37566443368389627722e+02;
const RB5: f64 = -1.02509513161107724954e+03;
const RB6: f64 = -4.83519191608651397019e+02;
const SB1: f64 = 3.03380607434824582924e+01;
const SB2: f64 = 3.25792512996573918826e+02;
const SB3: f64 = 1.53672958608443695994e+03;
const SB4: f64 = 3.19985821950859553908e+03;
const SB5: f64 = 2.55305040643316442583e+03;
const SB6: f64 = 4.74528541206955367215e+02;
const SB7: f64 = -2.24409524465858183362e+01;

const TINY: f64 = 1.387_778_780_781_445_7e-17; // 2^-56

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// Above this argument `erfc_scaled` uses the continued fraction.
const CONTINUED_FRACTION_START: f64 = 4.0;

/// Lower/upper pair bracketing a quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundPair {
    pub lower: f64,
    pub upper: f64,
}

impl BoundPair {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower <= upper) {
            return Err(domain(format!("bound pair requires lower <= upper, got [{lower}, {upper}]")));
        }
        Ok(Self { lower, upper })
    }

    /// `lower < value <= upper`, the shape of the Abramowitz inequality.
    pub fn brackets(&self, value: f64) -> bool {
        self.lower < value && value <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

fn check_finite(x: f64, what: &str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("{what} requires a finite argument, got {x}")))
    }
}

/// Complementary error function `1 - erf(x)`.
pub fn erfc(x: f64) -> Result<f64> {
    check_finite(x, "erfc")?;
    Ok(erfc_unchecked(x))
}

/// `exp(x^2) * erfc(x)`, evaluated without forming either factor for large x.
pub fn erfc_scaled(x: f64) -> Result<f64> {
    check_finite(x, "erfc_scaled")?;
    Ok(erfc_scaled_unchecked(x))
}

/// Rational part `R/S` of `log(x * erfc(x)) + x^2 + 0.5625` for `x >= 1.25`.
#[inline]
fn tail_ratio(x: f64) -> f64 {
    let s = 1.0 / (x * x);
    if x < 1.0 / 0.35 {
        let r = RA0 + s * (RA1 + s * (RA2 + s * (RA3 + s * (RA4 + s * (RA5 + s * (RA6 + s * RA7))))));
        let q = 1.0
            + s * (SA1 + s * (SA2 + s * (SA3 + s * (SA4 + s * (SA5 + s * (SA6 + s * (SA7 + s * SA8)))))));
        r / q
    } else {
        let r = RB0 + s * (RB1 + s * (RB2 + s * (RB3 + s * (RB4 + s * (RB5 + s * RB6)))));
        let q = 1.0 + s * (SB1 + s * (SB2 + s * (SB3 + s * (SB4 + s * (SB5 + s * (SB6 + s * SB7))))));
        r / q
    }
}

/// `erfc` for callers that have already validated their input. NaN propagates.
pub fn erfc_unchecked(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    if x == f64::NEG_INFINITY {
        return 2.0;
    }
    let negative = x < 0.0;
    let ax = x.abs();
    if ax < 0.84375 {
        let t = if ax < TINY {
            ax
        } else {
            let z = ax * ax;
            let r = PP0 + z * (PP1 + z * (PP2 + z * (PP3 + z * PP4)));
            let s = 1.0 + z * (QQ1 + z * (QQ2 + z * (QQ3 + z * (QQ4 + z * QQ5))));
            let y = r / s;
            if ax < 0.25 {
                ax + ax * y
            } else {
                0.5 + (ax * y + (ax - 0.5))
            }
        };
        return if negative { 1.0 + t } else { 1.0 - t };
    }
    if ax < 1.25 {
        let s = ax - 1.0;
        let p = PA0 + s * (PA1 + s * (PA2 + s * (PA3 + s * (PA4 + s * (PA5 + s * PA6)))));
        let q = 1.0 + s * (QA1 + s * (QA2 + s * (QA3 + s * (QA4 + s * (QA5 + s * QA6)))));
        return if negative { 1.0 + ERX + p / q } else { 1.0 - ERX - p / q };
    }
    if ax < 28.0 {
        if negative && ax > 6.0 {
            return 2.0;
        }
        let ratio = tail_ratio(ax);
        // z carries the high 32 bits of ax so z*z is exact
        let z = f64::from_bits(ax.to_bits() & 0xffff_ffff_0000_0000);
        let r = (-z * z - 0.5625).exp() * ((z - ax) * (z + ax) + ratio).exp();
        return if negative { 2.0 - r / ax } else { r / ax };
    }
    if negative {
        2.0
    } else {
        0.0
    }
}

/// `erfc_scaled` for pre-validated input.
pub fn erfc_scaled_unchecked(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        // reflection; overflows to +inf for x below about -26.6
        return 2.0 * (x * x).exp() - erfc_scaled_unchecked(-x);
    }
    if x < 1.25 {
        return (x * x).exp() * erfc_unchecked(x);
    }
    if x <= CONTINUED_FRACTION_START {
        return (tail_ratio(x) - 0.5625).exp() / x;
    }
    continued_fraction(x)
}

/// Laplace continued fraction
/// `erfcx(x) = (1/sqrt(pi)) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))`,
/// evaluated with the modified Lentz algorithm.
fn continued_fraction(x: f64) -> f64 {
    const FLOOR: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..=200 {
        let a = 0.5 * k as f64;
        d = x + a * d;
        if d.abs() < FLOOR {
            d = FLOOR;
        }
        c = x + a / c;
        if c.abs() < FLOOR {
            c = FLOOR;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 0.5 * f64::EPSILON {
            break;
        }
    }
    FRAC_1_SQRT_PI / f
}

/// The classical inequality
/// `2e^{-x^2}/(sqrt(pi)(sqrt(x^2+2)+x)) < erfc(x) <= 2e^{-x^2}/(sqrt(pi)(sqrt(x^2+4/pi)+x))`
/// valid for positive x.
pub fn abramowitz_bounds(x: f64) -> Result<BoundPair> {
    check_finite(x, "abramowitz_bounds")?;
    if x <= 0.0 {
        return Err(domain(format!("abramowitz_bounds is stated for x > 0, got {x}")));
    }
    let gauss = (-x * x).exp();
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let lower = 2.0 * gauss / (sqrt_pi * ((x * x + 2.0).sqrt() + x));
    let upper = 2.0 * gauss / (sqrt_pi * ((x * x + 4.0 / std::f64::consts::PI).sqrt() + x));
    BoundPair::new(lower, upper)
}

/// Rational approximation of `exp(z^2) erfc(z)`:
/// `2.911 / (sqrt(pi)(2.911 - 1) z + sqrt(pi z^2 + 2.911^2))`.
///
/// Tuned for z in roughly [0.175, 3.2]; it is a plain formula and accepts any z.
pub fn ren_scaled_erfc(z: f64) -> f64 {
    const K: f64 = 2.911;
    let pi = std::f64::consts::PI;
    K / (pi.sqrt() * (K - 1.0) * z + (pi * z * z + K * K).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    // 60-digit mpmath values, rounded to nearest double.
    const ERFC_TABLE: [(f64, f64); 30] = [
        (-6.0, 2.0),
        (-4.5, 1.999999999803384),
        (-3.0, 1.9999779095030015),
        (-2.2, 1.998137153702018),
        (-1.5, 1.9661051464753108),
        (-1.0, 1.8427007929497148),
        (-0.7, 1.6778011938374184),
        (-0.4, 1.4283923550466684),
        (-0.1, 1.1124629160182848),
        (0.0, 1.0),
        (1e-10, 0.999999999887162),
        (0.05, 0.9436280222029834),
        (0.2, 0.7772974107895215),
        (0.3, 0.6713732405408726),
        (0.5, 0.4795001221869535),
        (std::f64::consts::FRAC_1_SQRT_2, 0.3173105078629141),
        (0.84375, 0.23277433876765838),
        (0.9, 0.20309178757716786),
        (1.0, 0.15729920705028513),
        (1.2, 0.08968602177036464),
        (1.25, 0.07709987174354177),
        (1.5, 0.033894853524689274),
        (2.0, 0.004677734981047266),
        (2.5, 0.0004069520174449589),
        (2.857142857142857, 5.3312311388322795e-05),
        (3.5, 7.430983723414128e-07),
        (4.0, 1.541725790028002e-08),
        (5.0, 1.537459794428035e-12),
        (5.5, 7.357847917974398e-15),
        (6.0, 2.1519736712498913e-17),
    ];

    const ERFCX_TABLE: [(f64, f64); 15] = [
        (0.1, 0.8964569799691267),
        (0.5, 0.6156903441929259),
        (1.0, 0.427583576155807),
        (1.3, 0.3576426690860903),
        (2.0, 0.25539567631050575),
        (3.0, 0.17900115118138996),
        (3.9, 0.14031418160068973),
        (4.0, 0.13699945762506138),
        (4.1, 0.133834116418652),
        (5.0, 0.11070463773306863),
        (8.0, 0.06998516620088092),
        (10.0, 0.05614099274382259),
        (30.0, 0.01879588886141675),
        (100.0, 0.005641613782989433),
        (1000.0, 0.0005641893014533876),
    ];

    fn ulps(a: f64, b: f64) -> f64 {
        if a == b {
            return 0.0;
        }
        let b = b.abs();
        (a.abs() - b).abs() / (b.next_up() - b)
    }

    #[test]
    fn erfc_matches_reference_table() {
        let mut worst = 0.0f64;
        for &(x, want) in &ERFC_TABLE {
            let got = erfc(x).unwrap();
            assert!((got - want).abs() <= 1e-15, "erfc({x}) = {got}, want {want}");
            worst = worst.max(ulps(got, want));
        }
        assert!(worst <= 2.0, "erfc worst error {worst} ulp");
    }

    #[test]
    fn erfc_scaled_matches_reference_table() {
        let mut worst = 0.0f64;
        for &(x, want) in &ERFCX_TABLE {
            let got = erfc_scaled(x).unwrap();
            worst = worst.max(ulps(got, want));
        }
        assert!(worst <= 3.0, "erfc_scaled worst error {worst} ulp");
    }

    #[test]
    fn erfc_examples() {
        assert_eq!(erfc(0.0).unwrap(), 1.0);
        let v = erfc(std::f64::consts::FRAC_1_SQRT_2).unwrap();
        assert!((v - 0.31731050786291410).abs() < 1e-15);
        let x = 0.7;
        assert!((erfc(-x).unwrap() - (2.0 - erfc(x).unwrap())).abs() < 1e-15);
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        assert!(erfc(f64::NAN).is_err());
        assert!(erfc(f64::INFINITY).is_err());
        assert!(erfc_scaled(f64::NEG_INFINITY).is_err());
        assert!(abramowitz_bounds(f64::NAN).is_err());
    }

    #[test]
    fn erfc_scaled_examples() {
        assert_eq!(erfc_scaled(0.0).unwrap(), 1.0);
        // e^{y + x/2} erfc((y + x)/sqrt(2x)) at y = -0.01, x = 0.64
        let (y, x) = (-0.01f64, 0.64f64);
        let z = (y + x) / (2.0 * x).sqrt();
        let v = (-y * y / (2.0 * x)).exp() * erfc_scaled(z).unwrap();
        assert!((v - 0.587622).abs() < 5e-7, "{v}");
        let b = abramowitz_bounds(2.0).unwrap();
        let scale = (4.0f64).exp();
        let v = erfc_scaled(2.0).unwrap();
        assert!(b.lower * scale < v && v <= b.upper * scale);
        assert!(erfc_scaled(1e3).unwrap().is_finite());
    }

    #[test]
    fn abramowitz_examples() {
        let b = abramowitz_bounds(1.0).unwrap();
        assert!((b.lower - 0.15193988935732100).abs() < 1e-15);
        assert!((b.upper - 0.16553140002740542).abs() < 1e-15);
        for x in [0.1, 1.0, 5.0] {
            let b = abramowitz_bounds(x).unwrap();
            assert!(b.brackets(erfc(x).unwrap()), "x = {x}");
        }
        // relative gap at 20 is about 4.5e-4 and keeps shrinking
        let gap = |x: f64| {
            let b = abramowitz_bounds(x).unwrap();
            b.width() / b.lower
        };
        assert!((gap(20.0) - 4.5294e-4).abs() < 1e-7, "{}", gap(20.0));
        assert!(gap(20.0) < gap(15.0) && gap(15.0) < gap(10.0));
        assert!(abramowitz_bounds(0.0).is_err());
        assert!(abramowitz_bounds(-1.0).is_err());
    }

    #[test]
    fn ren_examples() {
        assert_eq!(ren_scaled_erfc(0.0), 1.0);
        assert!((ren_scaled_erfc(1.0) - 0.42838348575551529).abs() < 1e-15);
        // the approximation overshoots from z = 0.70990 on and undershoots below
        for i in 0..=249 {
            let z = 0.71 + 2.49 * i as f64 / 249.0;
            assert!(ren_scaled_erfc(z) - erfc_scaled(z).unwrap() > 0.0, "z = {z}");
        }
        assert!(ren_scaled_erfc(0.7) < erfc_scaled(0.7).unwrap());
    }

    #[test]
    fn reflection_identity_random() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let x: f64 = rng.random_range(-6.0..6.0);
            let s = erfc(x).unwrap() + erfc(-x).unwrap();
            assert!((s - 2.0).abs() < 1e-14, "x = {x}");
        }
    }

    #[test]
    fn erfc_scaled_strictly_decreasing() {
        let mut prev = erfc_scaled(1e-3).unwrap();
        for i in 2..=10_000 {
            let v = erfc_scaled(i as f64 * 1e-3).unwrap();
            assert!(v < prev, "not decreasing at {}", i as f64 * 1e-3);
            prev = v;
        }
    }

    #[test]
    fn x_times_erfc_scaled_increases_to_limit() {
        let limit = FRAC_1_SQRT_PI;
        let mut prev = 0.0;
        for i in 1..=100_000 {
            let x = i as f64 * 1e-3;
            let v = x * erfc_scaled(x).unwrap();
            assert!(v <= limit, "exceeds 1/sqrt(pi) at {x}");
            // near the limit successive values differ by less than an ulp
            assert!(v > prev || limit - v < 1e-12, "not increasing at {x}");
            prev = v;
        }
    }

    #[test]
    fn abramowitz_brackets_on_grid() {
        for i in 1..=1000 {
            let x = i as f64 * 0.01;
            let b = abramowitz_bounds(x).unwrap();
            assert!(b.brackets(erfc(x).unwrap()), "x = {x}");
        }
    }
}
