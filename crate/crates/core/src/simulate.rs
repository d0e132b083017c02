//! Monte-Carlo propagation of activation moments through deep random SELU
//! networks, and a normality statistic for network inputs.

use ndarray::{Array2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::moments::{map_moments, MomentPair, SeluParams, WeightMoments};
use crate::primitives::{lecun_init, selu};
use crate::rng;
use crate::special::erfc_unchecked;

/// How each unit's incoming weights are set after LeCun sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum WeightMode {
    /// Raw `N(0, 1/n)` draws; `omega` and `tau` vary per unit.
    Lecun,
    /// Each unit rescaled to `omega = 0`, `tau = 1` exactly.
    Normalized,
    /// Each unit rescaled to the given `omega` and `tau` exactly.
    Perturbed { omega: f64, tau: f64 },
}

impl WeightMode {
    /// Weight moments the analytic prediction uses.
    pub fn nominal(&self) -> WeightMoments {
        match *self {
            WeightMode::Lecun | WeightMode::Normalized => WeightMoments::NORMALIZED,
            WeightMode::Perturbed { omega, tau } => WeightMoments::new(omega, tau),
        }
    }
}

/// One layer of a [`PropagationTrace`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub layer: usize,
    pub mean: f64,
    pub var: f64,
    /// `g` applied to the previous row's empirical moments.
    pub prediction: MomentPair,
    /// Standard errors of `mean` and `var` given the previous layer.
    pub se_mean: f64,
    pub se_var: f64,
    /// `g` iterated from the input moments without looking at samples.
    pub analytic: MomentPair,
}

impl TraceRow {
    pub fn z_mean(&self) -> f64 {
        (self.mean - self.prediction.mu) / self.se_mean
    }

    pub fn z_var(&self) -> f64 {
        (self.var - self.prediction.nu) / self.se_var
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationTrace {
    pub rows: Vec<TraceRow>,
    pub weight_mode: WeightMode,
    pub width: usize,
    pub n_samples: usize,
    pub seed: u64,
}

impl PropagationTrace {
    pub fn last(&self) -> &TraceRow {
        self.rows.last().expect("trace holds the input row")
    }

    /// Largest `|z|` of empirical against predicted moments over layers `1..`.
    pub fn max_abs_z(&self) -> f64 {
        self.rows[1..].iter().map(|r| r.z_mean().abs().max(r.z_var().abs())).fold(0.0, f64::max)
    }

    /// CSV with columns `layer,mean,var,pred_mean,pred_var`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "mean", "var", "pred_mean", "pred_var"])?;
        for r in &self.rows {
            w.serialize((r.layer, r.mean, r.var, r.prediction.mu, r.prediction.nu))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Rescales every column of `w` to sum `omega` and squared sum `tau`.
fn rescale_columns(w: &mut Array2<f64>, omega: f64, tau: f64) -> Result<()> {
    let n = w.nrows() as f64;
    let target = tau - omega * omega / n;
    if !(target > 0.0) {
        return Err(domain(format!("tau = {tau} is unreachable with omega = {omega} and {n} inputs")));
    }
    for mut col in w.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / n;
        col.mapv_inplace(|v| v - mean);
        let norm = col.dot(&col).sqrt();
        let k = target.sqrt() / norm;
        col.mapv_inplace(|v| v * k + omega / n);
    }
    Ok(())
}

/// Per-unit moments of `a` (samples in rows, units in columns) pooled into
/// layer moments with their standard errors.
fn layer_moments(a: &Array2<f64>) -> (f64, f64, f64, f64) {
    let n = a.nrows() as f64;
    let units = a.ncols() as f64;
    let um = a.sum_axis(Axis(0)) / n;
    let uq = a.mapv(|v| v * v).sum_axis(Axis(0)) / n;
    let mean = um.mean().expect("units");
    let var = uq.mean().expect("units") - mean * mean;
    let sd = |x: &ndarray::Array1<f64>| {
        let m = x.mean().expect("units");
        (x.mapv(|v| (v - m) * (v - m)).sum() / (units - 1.0)).sqrt()
    };
    // the variance estimate is linear in (um, uq) to first order around the pooled mean
    let lin = &uq - &(um.mapv(|v| 2.0 * mean * v));
    (mean, var, sd(&um) / units.sqrt(), sd(&lin) / units.sqrt())
}

/// Propagates `n_samples` standard-normal inputs through `depth` random
/// layers of `width` SELU units and records empirical against analytic moments.
pub fn propagate_moments_mc(
    depth: usize,
    width: usize,
    n_samples: usize,
    mode: WeightMode,
    p: SeluParams,
    seed: u64,
) -> Result<PropagationTrace> {
    if width < 16 {
        return Err(domain(format!("width must be at least 16, got {width}")));
    }
    if n_samples < 1000 {
        return Err(domain(format!("need at least 1000 samples, got {n_samples}")));
    }
    let w_nominal = mode.nominal();
    let mut r = rng::stream(seed, 0);
    let mut a = Array2::from_shape_simple_fn((n_samples, width), || StandardNormal.sample(&mut r));

    let (mean, var, se_mean, se_var) = layer_moments(&a);
    let input = MomentPair::new(0.0, 1.0);
    let mut rows = vec![TraceRow {
        layer: 0,
        mean,
        var,
        prediction: input,
        se_mean,
        se_var,
        analytic: MomentPair::new(mean, var),
    }];

    for layer in 1..=depth {
        let mut spec = lecun_init(width, width, rng_seed(seed, layer))?;
        match mode {
            WeightMode::Lecun => {}
            WeightMode::Normalized => rescale_columns(&mut spec.weights, 0.0, 1.0)?,
            WeightMode::Perturbed { omega, tau } => rescale_columns(&mut spec.weights, omega, tau)?,
        }
        a = a.dot(&spec.weights).mapv_into(|z| selu(z, p));
        let prev = rows.last().expect("input row");
        let prediction = map_moments(MomentPair::new(prev.mean, prev.var), w_nominal, p)?.moments();
        let analytic = map_moments(prev.analytic, w_nominal, p)?.moments();
        let (mean, var, se_mean, se_var) = layer_moments(&a);
        rows.push(TraceRow { layer, mean, var, prediction, se_mean, se_var, analytic });
    }
    Ok(PropagationTrace { rows, weight_mode: mode, width, n_samples, seed })
}

fn rng_seed(seed: u64, layer: usize) -> u64 {
    use rand::RngCore;
    rng::stream(seed, layer as u64).next_u64()
}

/// Standard normal CDF.
fn phi(x: f64) -> f64 {
    0.5 * erfc_unchecked(-x / std::f64::consts::SQRT_2)
}

/// Kolmogorov-Smirnov distance between the standardized sample and `N(0, 1)`.
/// A constant sample is a point mass at its mean and scores 0.5.
pub fn normality_check(samples: &[f64]) -> Result<f64> {
    if samples.len() < 100 {
        return Err(domain(format!("need at least 100 samples, got {}", samples.len())));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(domain("samples must be finite"));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Ok(0.5);
    }
    let sd = var.sqrt();
    let mut z: Vec<f64> = samples.iter().map(|v| (v - mean) / sd).collect();
    z.sort_by(f64::total_cmp);
    let mut d = 0.0f64;
    for (i, x) in z.iter().enumerate() {
        let f = phi(*x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}
