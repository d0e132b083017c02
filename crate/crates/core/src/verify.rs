//! Grid verification of the contraction, domain-mapping and variance bounds.
//!
//! Every check evaluates a function on a closed lattice (both endpoints of
//! each interval included), reduces to an extremum and compares
//! `extremum ± slack ± error_budget` against a threshold. The lattice is cut
//! into a fixed number of contiguous partitions whose partial extrema are
//! merged in order, so reports do not depend on the worker count.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jacobian::{central_difference, s_at, spectral_norm_unchecked, Variable};
use crate::moments::{map_products, MomentPair, SeluParams, WeightMoments};
use crate::rng;

/// Number of lattice partitions; fixed so the reduction order never changes.
const PARTITIONS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min <= max) {
            return Err(Error::Config(format!("invalid interval [{min}, {max}]")));
        }
        Ok(Self { min, max })
    }

    pub const fn point(v: f64) -> Self {
        Self { min: v, max: v }
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    pub fn contains(&self, v: f64) -> bool {
        self.min <= v && v <= self.max
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.min <= other.min && other.max <= self.max
    }
}

const fn iv(min: f64, max: f64) -> Interval {
    Interval { min, max }
}

/// Closed box in `(mu, omega, nu, tau)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub mu: Interval,
    pub omega: Interval,
    pub nu: Interval,
    pub tau: Interval,
}

impl DomainBox {
    pub fn new(mu: Interval, omega: Interval, nu: Interval, tau: Interval) -> Result<Self> {
        let b = Self { mu, omega, nu, tau };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for i in self.axes() {
            Interval::new(i.min, i.max)?;
        }
        if !(self.nu.min * self.tau.min > 0.0 && self.nu.min > 0.0) {
            return Err(Error::Config(format!(
                "domain needs nu.min * tau.min > 0, got {} * {}",
                self.nu.min, self.tau.min
            )));
        }
        Ok(())
    }

    pub fn axes(&self) -> [Interval; 4] {
        [self.mu, self.omega, self.nu, self.tau]
    }

    pub fn from_axes(a: [Interval; 4]) -> Self {
        Self { mu: a[0], omega: a[1], nu: a[2], tau: a[3] }
    }

    pub fn contains(&self, v: [f64; 4]) -> bool {
        self.axes().iter().zip(v).all(|(i, x)| i.contains(x))
    }

    pub fn point(mu: f64, omega: f64, nu: f64, tau: f64) -> Self {
        Self::from_axes([Interval::point(mu), Interval::point(omega), Interval::point(nu), Interval::point(tau)])
    }

    /// Domain on which iterates converge to the fixed point.
    pub const CONVERGENCE: DomainBox = DomainBox {
        mu: iv(-0.1, 0.1),
        omega: iv(-0.1, 0.1),
        nu: iv(0.8, 1.5),
        tau: iv(0.95, 1.1),
    };

    /// Domain on which the spectral norm is bounded by the grid proof.
    pub const CONTRACTION: DomainBox = DomainBox {
        mu: iv(-0.1, 0.1),
        omega: iv(-0.1, 0.1),
        nu: iv(0.8, 1.5),
        tau: iv(0.8, 1.25),
    };

    /// Large-variance domain where the variance decreases.
    pub const OMEGA_PLUS_PLUS: DomainBox = DomainBox {
        mu: iv(-1.0, 1.0),
        omega: iv(-0.1, 0.1),
        nu: iv(3.0, 16.0),
        tau: iv(0.8, 1.25),
    };

    /// First small-variance domain where the variance increases.
    pub const OMEGA1_MINUS: DomainBox = DomainBox {
        mu: iv(-0.1, 0.1),
        omega: iv(-0.1, 0.1),
        nu: iv(0.05, 0.16),
        tau: iv(0.8, 1.25),
    };

    /// Second small-variance domain where the variance increases.
    pub const OMEGA2_MINUS: DomainBox = DomainBox {
        mu: iv(-0.1, 0.1),
        omega: iv(-0.1, 0.1),
        nu: iv(0.05, 0.24),
        tau: iv(0.9, 1.25),
    };

    /// Small-variance domain of the `mu~^2` bound.
    pub const OMEGA_MINUS: DomainBox = DomainBox {
        mu: iv(-0.1, 0.1),
        omega: iv(-0.1, 0.1),
        nu: iv(0.05, 0.24),
        tau: iv(0.8, 1.25),
    };
}

/// Requested lattice spacing per axis. The realized spacing is
/// `width / ceil(width / delta)`, never larger than the request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub delta_mu: f64,
    pub delta_omega: f64,
    pub delta_nu: f64,
    pub delta_tau: f64,
}

impl GridSpec {
    /// Fine spacing whose slack leaves room for the contraction bound.
    pub const FINE_CONTRACTION: GridSpec = GridSpec {
        delta_mu: 0.0068097371,
        delta_omega: 0.0008292885,
        delta_nu: 0.0009580840,
        delta_tau: 0.0007323095,
    };

    /// Fine spacing for the `mu~^2` bound.
    pub const FINE_MU_SQUARED: GridSpec = GridSpec {
        delta_mu: 0.001498041,
        delta_omega: 0.001498041,
        delta_nu: 0.0004033190,
        delta_tau: 0.0019065994,
    };

    pub fn new(delta_mu: f64, delta_omega: f64, delta_nu: f64, delta_tau: f64) -> Result<Self> {
        let g = Self { delta_mu, delta_omega, delta_nu, delta_tau };
        if !g.deltas().iter().all(|d| *d > 0.0 && d.is_finite()) {
            return Err(Error::Config(format!("grid deltas must be positive, got {:?}", g.deltas())));
        }
        Ok(g)
    }

    /// Spacing giving `n` lattice points on every non-degenerate axis.
    pub fn with_points(domain: &DomainBox, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("need at least 2 points per axis, got {n}")));
        }
        let d = domain.axes().map(|i| if i.width() > 0.0 { i.width() / (n - 1) as f64 } else { 1.0 });
        Self::new(d[0], d[1], d[2], d[3])
    }

    pub fn deltas(&self) -> [f64; 4] {
        [self.delta_mu, self.delta_omega, self.delta_nu, self.delta_tau]
    }

    pub fn halved(&self) -> Self {
        let d = self.deltas().map(|d| d / 2.0);
        Self { delta_mu: d[0], delta_omega: d[1], delta_nu: d[2], delta_tau: d[3] }
    }

    fn check_against(&self, domain: &DomainBox) -> Result<()> {
        Self::new(self.delta_mu, self.delta_omega, self.delta_nu, self.delta_tau)?;
        domain.validate()?;
        for (i, d) in domain.axes().iter().zip(self.deltas()) {
            if i.width() > 0.0 && d > i.width() * (1.0 + 1e-12) {
                return Err(Error::Config(format!(
                    "grid delta {d} exceeds interval width {} of [{}, {}]",
                    i.width(),
                    i.min,
                    i.max
                )));
            }
        }
        Ok(())
    }
}

/// Points of a closed axis lattice with spacing at most `delta`.
pub fn axis_points(i: Interval, delta: f64) -> Vec<f64> {
    let w = i.width();
    if w == 0.0 {
        return vec![i.min];
    }
    // guard against ceil(29.000000000001) from rounding in width/delta
    let cells = ((w / delta) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    (0..=cells)
        .map(|k| if k == cells { i.max } else { i.min + w * k as f64 / cells as f64 })
        .collect()
}

fn realized_spacing(points: &[f64]) -> f64 {
    if points.len() < 2 {
        0.0
    } else {
        (points[points.len() - 1] - points[0]) / (points.len() - 1) as f64
    }
}

/// Upper bounds on `|dS/d.|` over the contraction domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeBounds {
    pub d_mu: f64,
    pub d_omega: f64,
    pub d_nu: f64,
    pub d_tau: f64,
}

impl DerivativeBounds {
    pub const CONTRACTION: DerivativeBounds = DerivativeBounds {
        d_mu: 0.32112,
        d_omega: 2.63690,
        d_nu: 2.28242,
        d_tau: 2.98610,
    };

    /// Bounds on `|d mu~^2 / d.|`: twice `MU_TILDE_BOUND` times the
    /// bounds 0.14, 0.14, 0.52, 0.11 on `|d mu~ / d.|`.
    pub const MU_SQUARED: DerivativeBounds = DerivativeBounds {
        d_mu: 2.0 * MU_TILDE_BOUND * 0.14,
        d_omega: 2.0 * MU_TILDE_BOUND * 0.14,
        d_nu: 2.0 * MU_TILDE_BOUND * 0.52,
        d_tau: 2.0 * MU_TILDE_BOUND * 0.11,
    };

    pub fn new(d_mu: f64, d_omega: f64, d_nu: f64, d_tau: f64) -> Result<Self> {
        let b = Self { d_mu, d_omega, d_nu, d_tau };
        if !b.as_array().iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("derivative bounds must be positive, got {:?}", b.as_array())));
        }
        Ok(b)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.d_mu, self.d_omega, self.d_nu, self.d_tau]
    }

    /// Mean-value slack `sum_i bound_i * delta_i`.
    pub fn slack(&self, grid: &GridSpec) -> f64 {
        self.slack_for(grid.deltas())
    }

    fn slack_for(&self, spacing: [f64; 4]) -> f64 {
        self.as_array().iter().zip(spacing).map(|(b, d)| b * d).sum()
    }
}

/// `|mu~| < MU_TILDE_BOUND` on the small-variance domain.
pub const MU_TILDE_BOUND: f64 = 0.289324;

/// Bounds on the entries of `J` over the contraction domain.
pub const J11_BOUND: f64 = 0.104497;
/// The looser of the two stated bounds on `|J12|` (the proof arrives at 0.194035).
pub const J12_BOUND: f64 = 0.194145;
pub const J12_BOUND_TIGHT: f64 = 0.194035;

/// Floating-point error bounds for one evaluation, in units of machine epsilon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub j11: f64,
    pub j12: f64,
    pub j21: f64,
    pub j22: f64,
    pub mu_tilde: f64,
    pub spectral_norm: f64,
}

/// Error bounds for evaluating `J`, `mu~` and `S` in arithmetic with unit
/// roundoff `machine_eps`. Derived for the contraction domain.
pub fn error_budget_components(machine_eps: f64) -> ErrorBudget {
    ErrorBudget {
        j11: 6.0 * machine_eps,
        j12: 78.0 * machine_eps,
        j21: 189.0 * machine_eps,
        j22: 405.0 * machine_eps,
        mu_tilde: 52.0 * machine_eps,
        spectral_norm: 292.0 * machine_eps,
    }
}

/// Evaluation error bound of `S`.
pub fn error_budget(machine_eps: f64) -> f64 {
    error_budget_components(machine_eps).spectral_norm
}

/// Evaluation error bound of `mu~^2` given the bound on `mu~`.
pub fn mu_squared_error_budget(machine_eps: f64) -> f64 {
    let d = error_budget_components(machine_eps).mu_tilde;
    2.0 * MU_TILDE_BOUND * d + d * d + machine_eps * MU_TILDE_BOUND * MU_TILDE_BOUND
}

/// Allowance for the variance checks, whose closed forms are not covered by
/// the component analysis above.
pub const GENERIC_EVALUATION_ERROR: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    fn from_bool(b: bool) -> Self {
        if b {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

/// Which inequality the report asserts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    /// `extremum + slack + error_budget < threshold`
    Below,
    /// `extremum - slack - error_budget > threshold`
    Above,
}

/// Extent of the image of the moment map over a lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageBox {
    pub mu_next: Interval,
    pub nu_next: Interval,
    pub xi_next: Interval,
    pub arg_mu_min: [f64; 4],
    pub arg_mu_max: [f64; 4],
    pub arg_nu_min: [f64; 4],
    pub arg_nu_max: [f64; 4],
    pub arg_xi_min: [f64; 4],
    pub arg_xi_max: [f64; 4],
    pub target_mu: Interval,
    pub target_nu: Interval,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check: String,
    pub verdict: Verdict,
    pub extremum: f64,
    pub arg_extremum: [f64; 4],
    pub sense: Sense,
    pub threshold: f64,
    pub slack: f64,
    pub error_budget: f64,
    pub points_evaluated: u64,
    pub lattice_points: u64,
    pub grid: GridSpec,
    pub domain: DomainBox,
    pub wall_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric_derivative_max: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl VerificationReport {
    /// Verdict implied by the recorded numbers alone.
    pub fn recompute_verdict(&self) -> Verdict {
        let ok = match self.sense {
            Sense::Below => self.extremum + self.slack + self.error_budget < self.threshold,
            Sense::Above => self.extremum - self.slack - self.error_budget > self.threshold,
        };
        Verdict::from_bool(ok)
    }

    /// Equality ignoring the wall-clock field.
    pub fn same_result(&self, other: &Self) -> bool {
        let mut a = self.clone();
        a.wall_time_s = other.wall_time_s;
        &a == other
    }

    pub fn summary(&self) -> String {
        let op = match self.sense {
            Sense::Below => format!("{} + {:.6e} + {:.3e} < {}", self.extremum, self.slack, self.error_budget, self.threshold),
            Sense::Above => format!("{} - {:.6e} - {:.3e} > {}", self.extremum, self.slack, self.error_budget, self.threshold),
        };
        let verdict = if self.verdict.passed() { "PASS" } else { "FAIL" };
        format!(
            "{}: {verdict} ({op}) at {:?}, {} points",
            self.check, self.arg_extremum, self.points_evaluated
        )
    }
}

/// Execution options shared by the verifiers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub workers: usize,
    /// Local refinement around the arg-extremum.
    pub refine: Option<Refinement>,
    /// Random interior samples added to the lattice: `(count, seed)`.
    pub samples: Option<(usize, u64)>,
    /// Points per axis for numerically re-checking the derivative bounds.
    pub recheck_bounds: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { workers: 1, refine: Some(Refinement::DEFAULT), samples: None, recheck_bounds: None }
    }
}

/// Re-scan `cells` coarse cells either side of the arg-extremum with
/// spacing divided by `factor`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Refinement {
    pub cells: usize,
    pub factor: usize,
}

impl Refinement {
    pub const DEFAULT: Refinement = Refinement { cells: 2, factor: 20 };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Goal {
    Max,
    Min,
}

#[derive(Debug, Clone, Copy)]
struct Extremum {
    value: f64,
    arg: [f64; 4],
}

impl Extremum {
    fn empty(goal: Goal) -> Self {
        let value = match goal {
            Goal::Max => f64::NEG_INFINITY,
            Goal::Min => f64::INFINITY,
        };
        Self { value, arg: [f64::NAN; 4] }
    }

    /// Strict comparison keeps the earliest point on ties.
    fn offer(&mut self, goal: Goal, value: f64, arg: [f64; 4]) {
        let better = match goal {
            Goal::Max => value > self.value,
            Goal::Min => value < self.value,
        } || value.is_nan() && !self.value.is_nan();
        if better {
            self.value = value;
            self.arg = arg;
        }
    }
}

struct Lattice {
    axes: [Vec<f64>; 4],
}

impl Lattice {
    fn new(domain: &DomainBox, grid: &GridSpec) -> Self {
        let d = grid.deltas();
        let a = domain.axes();
        Self { axes: [0, 1, 2, 3].map(|k| axis_points(a[k], d[k])) }
    }

    fn len(&self) -> u64 {
        self.axes.iter().map(|a| a.len() as u64).product()
    }

    fn spacing(&self) -> [f64; 4] {
        [0, 1, 2, 3].map(|k| realized_spacing(&self.axes[k]))
    }

    #[inline]
    fn point(&self, mut idx: u64) -> [f64; 4] {
        let mut out = [0.0; 4];
        for k in (0..4).rev() {
            let n = self.axes[k].len() as u64;
            out[k] = self.axes[k][(idx % n) as usize];
            idx /= n;
        }
        out
    }

    /// Extrema of the `K` components of `f`, reduced in lattice order.
    fn scan<const K: usize, F>(&self, workers: usize, goals: [Goal; K], f: F) -> Result<[Extremum; K]>
    where
        F: Fn([f64; 4]) -> [f64; K] + Sync,
    {
        let total = self.len();
        let parts = PARTITIONS as u64;
        let chunk = total.div_ceil(parts).max(1);
        let run = || {
            (0..parts)
                .into_par_iter()
                .map(|part| {
                    let mut best = goals.map(Extremum::empty);
                    let (lo, hi) = (part * chunk, ((part + 1) * chunk).min(total));
                    for idx in lo..hi {
                        let v = self.point(idx);
                        let vals = f(v);
                        for k in 0..K {
                            best[k].offer(goals[k], vals[k], v);
                        }
                    }
                    best
                })
                .collect::<Vec<_>>()
        };
        let partials = with_workers(workers, run)?;
        let mut best = goals.map(Extremum::empty);
        for p in partials {
            for k in 0..K {
                if p[k].value.is_finite() || p[k].value.is_nan() {
                    best[k].offer(goals[k], p[k].value, p[k].arg);
                }
            }
        }
        Ok(best)
    }
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Err(Error::Config("worker count must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn refined_box(domain: &DomainBox, spacing: [f64; 4], center: [f64; 4], r: Refinement) -> (DomainBox, GridSpec) {
    let axes = domain.axes();
    let mut out = axes;
    let mut deltas = [1.0; 4];
    for k in 0..4 {
        if spacing[k] == 0.0 {
            continue;
        }
        let half = r.cells as f64 * spacing[k];
        out[k] = Interval {
            min: (center[k] - half).max(axes[k].min),
            max: (center[k] + half).min(axes[k].max),
        };
        deltas[k] = (spacing[k] / r.factor as f64).min(out[k].width().max(f64::MIN_POSITIVE));
    }
    let grid = GridSpec { delta_mu: deltas[0], delta_omega: deltas[1], delta_nu: deltas[2], delta_tau: deltas[3] };
    (DomainBox::from_axes(out), grid)
}

fn sample_points(domain: &DomainBox, count: usize, seed: u64) -> Vec<[f64; 4]> {
    let mut r = rng::seeded(seed);
    let axes = domain.axes();
    (0..count)
        .map(|_| axes.map(|i| if i.width() > 0.0 { r.random_range(i.min..=i.max) } else { i.min }))
        .collect()
}

#[inline]
fn split(v: [f64; 4]) -> (f64, f64, WeightMoments) {
    (v[0] * v[1], v[2] * v[3], WeightMoments::new(v[1], v[3]))
}

/// Checks `max S + slack + error_budget < 1` on the lattice.
pub fn verify_contraction(
    domain: &DomainBox,
    grid: &GridSpec,
    bounds: &DerivativeBounds,
    p: SeluParams,
    opts: &RunOptions,
) -> Result<VerificationReport> {
    let start = Instant::now();
    grid.check_against(domain)?;
    let s = |v: [f64; 4]| {
        let (y, x, w) = split(v);
        [spectral_norm_unchecked(y, x, w, &p)]
    };
    let lattice = Lattice::new(domain, grid);
    let spacing = lattice.spacing();
    let [mut best] = lattice.scan(opts.workers, [Goal::Max], s)?;
    let mut evaluated = lattice.len();

    if let Some(r) = opts.refine {
        let (sub_domain, sub_grid) = refined_box(domain, spacing, best.arg, r);
        let sub = Lattice::new(&sub_domain, &sub_grid);
        let [local] = sub.scan(opts.workers, [Goal::Max], s)?;
        evaluated += sub.len();
        best.offer(Goal::Max, local.value, local.arg);
    }
    if let Some((count, seed)) = opts.samples {
        for v in sample_points(domain, count, seed) {
            best.offer(Goal::Max, s(v)[0], v);
        }
        evaluated += count as u64;
    }

    let mut warnings = Vec::new();
    let numeric_derivative_max = match opts.recheck_bounds {
        Some(n) => {
            let m = max_abs_partials(domain, n, p, opts.workers)?;
            for (k, (got, bound)) in m.iter().zip(bounds.as_array()).enumerate() {
                if *got > bound {
                    warnings.push(format!(
                        "numeric |dS/d{}| = {got} exceeds the bound {bound}",
                        ["mu", "omega", "nu", "tau"][k]
                    ));
                }
            }
            Some(m)
        }
        None => None,
    };
    if !DomainBox::CONTRACTION.contains_box(domain) {
        warnings.push("domain extends beyond the box the derivative bounds and error budget were derived for".into());
    }

    let mut report = VerificationReport {
        check: "contraction".into(),
        verdict: Verdict::Fail,
        extremum: best.value,
        arg_extremum: best.arg,
        sense: Sense::Below,
        threshold: 1.0,
        slack: bounds.slack_for(spacing),
        error_budget: error_budget(f64::EPSILON),
        points_evaluated: evaluated,
        lattice_points: lattice.len(),
        grid: *grid,
        domain: *domain,
        wall_time_s: 0.0,
        image: None,
        numeric_derivative_max,
        warnings,
    };
    report.verdict = report.recompute_verdict();
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}

impl DomainBox {
    pub fn contains_box(&self, other: &DomainBox) -> bool {
        self.axes().iter().zip(other.axes()).all(|(a, b)| a.contains_interval(&b))
    }
}

/// Step of the central differences in [`max_abs_partials`].
pub const DERIVATIVE_STEP: f64 = 1e-6;

/// Largest `|dS/d.|` over an `n`-per-axis lattice, by central differences.
/// Points within one step of the boundary are differenced inside the box.
pub fn max_abs_partials(domain: &DomainBox, n: usize, p: SeluParams, workers: usize) -> Result<[f64; 4]> {
    let grid = GridSpec::with_points(domain, n)?;
    let lattice = Lattice::new(domain, &grid);
    let axes = domain.axes();
    let s = s_at(p);
    let partial = |v: [f64; 4]| {
        let mut out = [0.0; 4];
        for (k, var) in Variable::ALL.into_iter().enumerate() {
            let mut c = v;
            c[k] = c[k].clamp(axes[k].min + DERIVATIVE_STEP, (axes[k].max - DERIVATIVE_STEP).max(axes[k].min + DERIVATIVE_STEP));
            out[k] = central_difference(&s, c, var, DERIVATIVE_STEP).map(f64::abs).unwrap_or(f64::NAN);
        }
        out
    };
    let best = lattice.scan(workers, [Goal::Max; 4], partial)?;
    Ok(best.map(|e| e.value))
}

/// Target box of the domain-mapping check.
pub const IMAGE_MU: Interval = iv(-0.03106, 0.06773);
pub const IMAGE_NU: Interval = iv(0.80009, 1.48617);

/// Checks that `g` maps the lattice on `moments x weights` into
/// `target_mu x target_nu`, allowing an overshoot of `tolerance`.
///
/// `weights` must lie within `omega in [-0.1, 0.1]`, `tau in [0.95, 1.1]`.
#[allow(clippy::too_many_arguments)]
pub fn verify_domain_mapping(
    mu: Interval,
    nu: Interval,
    omega: Interval,
    tau: Interval,
    grid: &GridSpec,
    p: SeluParams,
    tolerance: f64,
    opts: &RunOptions,
) -> Result<VerificationReport> {
    verify_domain_mapping_into(mu, nu, omega, tau, grid, p, IMAGE_MU, IMAGE_NU, tolerance, opts)
}

#[allow(clippy::too_many_arguments)]
pub fn verify_domain_mapping_into(
    mu: Interval,
    nu: Interval,
    omega: Interval,
    tau: Interval,
    grid: &GridSpec,
    p: SeluParams,
    target_mu: Interval,
    target_nu: Interval,
    tolerance: f64,
    opts: &RunOptions,
) -> Result<VerificationReport> {
    let start = Instant::now();
    let allowed = DomainBox::CONVERGENCE;
    if !(allowed.omega.contains_interval(&omega) && allowed.tau.contains_interval(&tau)) {
        return Err(Error::Config(format!(
            "weight box omega [{}, {}] x tau [{}, {}] must lie within omega [-0.1, 0.1] x tau [0.95, 1.1]",
            omega.min, omega.max, tau.min, tau.max
        )));
    }
    if !(tolerance >= 0.0) {
        return Err(Error::Config(format!("tolerance must be nonnegative, got {tolerance}")));
    }
    let domain = DomainBox::new(mu, omega, nu, tau)?;
    grid.check_against(&domain)?;
    let lattice = Lattice::new(&domain, grid);
    let f = |v: [f64; 4]| {
        let (y, x, _) = split(v);
        let r = map_products(y, x, &p);
        [r.mu_next, r.mu_next, r.nu_next, r.nu_next, r.xi_next, r.xi_next]
    };
    let goals = [Goal::Min, Goal::Max, Goal::Min, Goal::Max, Goal::Min, Goal::Max];
    let mut ext = lattice.scan(opts.workers, goals, f)?;
    let mut evaluated = lattice.len();
    if let Some((count, seed)) = opts.samples {
        for v in sample_points(&domain, count, seed) {
            let vals = f(v);
            for k in 0..6 {
                ext[k].offer(goals[k], vals[k], v);
            }
        }
        evaluated += count as u64;
    }
    let [mu_min, mu_max, nu_min, nu_max, xi_min, xi_max] = ext;
    let excess = [
        (target_mu.min - mu_min.value, mu_min.arg),
        (mu_max.value - target_mu.max, mu_max.arg),
        (target_nu.min - nu_min.value, nu_min.arg),
        (nu_max.value - target_nu.max, nu_max.arg),
    ];
    let worst = excess
        .iter()
        .copied()
        .reduce(|a, b| if b.0 > a.0 { b } else { a })
        .expect("four margins");
    let image = ImageBox {
        mu_next: iv(mu_min.value, mu_max.value),
        nu_next: iv(nu_min.value, nu_max.value),
        xi_next: iv(xi_min.value, xi_max.value),
        arg_mu_min: mu_min.arg,
        arg_mu_max: mu_max.arg,
        arg_nu_min: nu_min.arg,
        arg_nu_max: nu_max.arg,
        arg_xi_min: xi_min.arg,
        arg_xi_max: xi_max.arg,
        target_mu,
        target_nu,
        tolerance,
    };
    let mut warnings = Vec::new();
    if worst.0 > 0.0 {
        warnings.push(format!("image leaves the target box by {:e} before tolerance", worst.0));
    }
    let mut report = VerificationReport {
        check: "domain-mapping".into(),
        verdict: Verdict::Fail,
        extremum: worst.0,
        arg_extremum: worst.1,
        sense: Sense::Below,
        // the margin must stay at or under the tolerance; the tiny offset
        // turns the strict test into a non-strict one
        threshold: tolerance + f64::MIN_POSITIVE,
        slack: 0.0,
        error_budget: 0.0,
        points_evaluated: evaluated,
        lattice_points: lattice.len(),
        grid: *grid,
        domain,
        wall_time_s: 0.0,
        image: Some(image),
        numeric_derivative_max: None,
        warnings,
    };
    report.verdict = report.recompute_verdict();
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}

fn variance_check(
    name: &str,
    domain: &DomainBox,
    grid: &GridSpec,
    opts: &RunOptions,
    goal: Goal,
    f: impl Fn([f64; 4]) -> f64 + Sync,
) -> Result<VerificationReport> {
    let start = Instant::now();
    grid.check_against(domain)?;
    let lattice = Lattice::new(domain, grid);
    let [mut best] = lattice.scan(opts.workers, [goal], |v| [f(v)])?;
    let mut evaluated = lattice.len();
    if let Some((count, seed)) = opts.samples {
        for v in sample_points(domain, count, seed) {
            best.offer(goal, f(v), v);
        }
        evaluated += count as u64;
    }
    let mut report = VerificationReport {
        check: name.into(),
        verdict: Verdict::Fail,
        extremum: best.value,
        arg_extremum: best.arg,
        sense: if goal == Goal::Max { Sense::Below } else { Sense::Above },
        threshold: 0.0,
        slack: 0.0,
        error_budget: GENERIC_EVALUATION_ERROR,
        points_evaluated: evaluated,
        lattice_points: lattice.len(),
        grid: *grid,
        domain: *domain,
        wall_time_s: 0.0,
        image: None,
        numeric_derivative_max: None,
        warnings: vec!["sampling check without mean-value slack".into()],
    };
    report.verdict = report.recompute_verdict();
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// `xi~ - nu`, negative where the variance decreases.
pub fn variance_decrease_margin(v: [f64; 4], p: &SeluParams) -> f64 {
    let (y, x, _) = split(v);
    map_products(y, x, p).xi_next - v[2]
}

/// `nu~ - nu`, positive where the variance increases.
pub fn variance_increase_margin(v: [f64; 4], p: &SeluParams) -> f64 {
    let (y, x, _) = split(v);
    map_products(y, x, p).nu_next - v[2]
}

/// Checks `max (xi~ - nu) < 0`, which bounds `nu~ < nu` as well.
pub fn verify_variance_decrease(
    domain: &DomainBox,
    grid: &GridSpec,
    p: SeluParams,
    opts: &RunOptions,
) -> Result<VerificationReport> {
    variance_check("variance-decrease", domain, grid, opts, Goal::Max, |v| variance_decrease_margin(v, &p))
}

/// Checks `min (nu~ - nu) > 0`.
pub fn verify_variance_increase(
    domain: &DomainBox,
    grid: &GridSpec,
    p: SeluParams,
    opts: &RunOptions,
) -> Result<VerificationReport> {
    variance_check("variance-increase", domain, grid, opts, Goal::Min, |v| variance_increase_margin(v, &p))
}

/// Bound checked by [`verify_mu_squared_bound`].
pub const MU_SQUARED_LIMIT: f64 = 0.005;

/// Checks `max mu~^2 + slack + error_budget < 0.005`.
///
/// `mu~` depends on the lattice only through `y = mu*omega` and
/// `x = nu*tau` and is strictly increasing in `y`, so for each distinct
/// `x` only the smallest and largest `y` of the lattice can attain the
/// maximum of `mu~^2`. The scan therefore costs two evaluations per
/// `(nu, tau)` pair instead of one per lattice point.
pub fn verify_mu_squared_bound(
    domain: &DomainBox,
    grid: &GridSpec,
    p: SeluParams,
    opts: &RunOptions,
) -> Result<VerificationReport> {
    let start = Instant::now();
    grid.check_against(domain)?;
    let lattice = Lattice::new(domain, grid);
    let spacing = lattice.spacing();
    let (mut best, mut evaluated) = mu_squared_scan(&lattice, &p, opts.workers)?;
    if let Some(r) = opts.refine {
        let (sub_domain, sub_grid) = refined_box(domain, spacing, best.arg, r);
        let sub = Lattice::new(&sub_domain, &sub_grid);
        let (local, n) = mu_squared_scan(&sub, &p, opts.workers)?;
        best.offer(Goal::Max, local.value, local.arg);
        evaluated += n;
    }
    if let Some((count, seed)) = opts.samples {
        for v in sample_points(domain, count, seed) {
            let (y, x, _) = split(v);
            best.offer(Goal::Max, map_products(y, x, &p).mu_next.powi(2), v);
        }
        evaluated += count as u64;
    }
    let mut report = VerificationReport {
        check: "mu-squared".into(),
        verdict: Verdict::Fail,
        extremum: best.value,
        arg_extremum: best.arg,
        sense: Sense::Below,
        threshold: MU_SQUARED_LIMIT,
        slack: DerivativeBounds::MU_SQUARED.slack_for(spacing),
        error_budget: mu_squared_error_budget(f64::EPSILON),
        points_evaluated: evaluated,
        lattice_points: lattice.len(),
        grid: *grid,
        domain: *domain,
        wall_time_s: 0.0,
        image: None,
        numeric_derivative_max: None,
        warnings: Vec::new(),
    };
    if !DomainBox::OMEGA_MINUS.contains_box(domain) {
        report.warnings.push("domain extends beyond the box the derivative bounds were derived for".into());
    }
    report.verdict = report.recompute_verdict();
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Lattice point of smallest and of largest `mu*omega`, earliest on ties.
fn product_extremes(mu: &[f64], omega: &[f64]) -> [(f64, f64); 2] {
    let mut lo = (mu[0], omega[0]);
    let mut hi = lo;
    for &m in mu {
        for &o in omega {
            if m * o < lo.0 * lo.1 {
                lo = (m, o);
            }
            if m * o > hi.0 * hi.1 {
                hi = (m, o);
            }
        }
    }
    [lo, hi]
}

fn mu_squared_scan(lattice: &Lattice, p: &SeluParams, workers: usize) -> Result<(Extremum, u64)> {
    let corners = product_extremes(&lattice.axes[0], &lattice.axes[1]);
    let reduced = Lattice {
        axes: [
            vec![0.0, 1.0],
            vec![0.0],
            lattice.axes[2].clone(),
            lattice.axes[3].clone(),
        ],
    };
    let [best] = reduced.scan(workers, [Goal::Max], |v| {
        let (mu, omega) = corners[v[0] as usize];
        [map_products(mu * omega, v[2] * v[3], p).mu_next.powi(2)]
    })?;
    let (mu, omega) = corners[best.arg[0] as usize];
    let arg = [mu, omega, best.arg[2], best.arg[3]];
    Ok((Extremum { value: best.value, arg }, reduced.len()))
}

/// Writes `mu,omega,nu,tau,S` for every lattice point.
pub fn write_lattice_csv<W: Write>(
    domain: &DomainBox,
    grid: &GridSpec,
    p: SeluParams,
    out: W,
) -> Result<u64> {
    grid.check_against(domain)?;
    let lattice = Lattice::new(domain, grid);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["mu", "omega", "nu", "tau", "S"])?;
    for idx in 0..lattice.len() {
        let v = lattice.point(idx);
        let (y, x, wm) = split(v);
        let s = spectral_norm_unchecked(y, x, wm, &p);
        w.serialize((v[0], v[1], v[2], v[3], s))?;
    }
    w.flush()?;
    Ok(lattice.len())
}

/// `S` at a single admissible point; convenience for reports.
pub fn spectral_norm_at(v: [f64; 4], p: SeluParams) -> Result<f64> {
    crate::jacobian::spectral_norm_s(v[0], v[1], v[2], v[3], p)
}

/// `mu~` at a packed point.
pub fn mu_next_at(v: [f64; 4], p: SeluParams) -> Result<f64> {
    Ok(crate::moments::map_moments(MomentPair::new(v[0], v[2]), WeightMoments::new(v[1], v[3]), p)?.mu_next)
}
