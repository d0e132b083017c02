use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use snn_core::jacobian::{central_difference, j_entry_at, jacobian_j, Variable};
use snn_core::moments::{map_moments, MomentPair, SeluParams, WeightMoments};
use snn_core::primitives::{forward, lecun_init, make_dropout_config, selu, DropoutConfig};
use snn_core::simulate::{normality_check, propagate_moments_mc, WeightMode};
use snn_core::verify::{axis_points, DomainBox, Interval, J11_BOUND, J12_BOUND, MU_TILDE_BOUND};

fn p01() -> SeluParams {
    SeluParams::standard()
}

fn lattice(d: &DomainBox, n: usize) -> impl Iterator<Item = [f64; 4]> {
    let axes: Vec<Vec<f64>> = d.axes().iter().map(|i| axis_points(*i, i.width().max(1e-300) / (n - 1) as f64)).collect();
    let mut out = Vec::new();
    for &a in &axes[0] {
        for &b in &axes[1] {
            for &c in &axes[2] {
                for &e in &axes[3] {
                    out.push([a, b, c, e]);
                }
            }
        }
    }
    out.into_iter()
}

fn j_at(v: [f64; 4]) -> snn_core::jacobian::Jacobian2x2 {
    jacobian_j(MomentPair::new(v[0], v[2]), WeightMoments::new(v[1], v[3]), p01()).unwrap()
}

#[test]
fn mean_stays_small_on_low_variance_box() {
    let worst = lattice(&DomainBox::OMEGA_MINUS, 20)
        .map(|v| map_moments(MomentPair::new(v[0], v[2]), WeightMoments::new(v[1], v[3]), p01()).unwrap().mu_next.abs())
        .fold(0.0, f64::max);
    assert!(worst < MU_TILDE_BOUND, "{worst}");
}

#[test]
fn first_row_entries_are_bounded() {
    let (mut j11, mut j12) = (0.0f64, 0.0f64);
    for v in lattice(&DomainBox::CONTRACTION, 20) {
        let j = j_at(v);
        j11 = j11.max(j.j11.abs());
        j12 = j12.max(j.j12.abs());
    }
    assert!(j11 <= J11_BOUND, "{j11}");
    assert!(j12 <= J12_BOUND, "{j12}");
}

#[test]
fn second_derivative_of_mean_matches_reported_maximum() {
    let d = DomainBox::CONTRACTION;
    let f = j_entry_at(p01(), 0, 0);
    let axes = d.axes();
    let dj = |v: [f64; 4]| {
        let mut c = v;
        c[0] = c[0].clamp(axes[0].min + 1e-5, axes[0].max - 1e-5);
        central_difference(&f, c, Variable::Mu, 1e-5).unwrap().abs()
    };
    let seed = dj([-0.1, 0.1, 1.47845, 0.883374]);
    let best = lattice(&d, 50).map(dj).fold(seed, f64::max);
    assert!((best / 0.00182415 - 1.0).abs() < 0.05, "max |dJ11/dmu| = {best}, seed point {seed}");
}

#[test]
fn variance_derivative_lower_bounds_on_small_variance_boxes() {
    for (d, bound) in [(DomainBox::OMEGA1_MINUS, 0.969231), (DomainBox::OMEGA2_MINUS, 0.976952)] {
        let worst = lattice(&d, 12).map(|v| j_at(v).j22).fold(f64::MAX, f64::min);
        assert!(worst > bound, "min dxi~/dnu = {worst} on {d:?}");
    }
}

fn selu_inputs(n: usize, width: usize, seed: u64) -> Array2<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, width), || selu(StandardNormal.sample(&mut r), p01()))
}

#[test]
fn wide_layer_inputs_are_nearly_normal() {
    let x = selu_inputs(4000, 512, 1);
    let layer = lecun_init(512, 1, 2).unwrap();
    let z = forward(&[layer], p01(), x.view()).unwrap().remove(0).z;
    let d = normality_check(z.as_slice().unwrap()).unwrap();
    assert!(d < 0.02, "KS distance {d}");
}

#[test]
fn wide_layer_moments_match_the_map() {
    let x = selu_inputs(20_000, 512, 3);
    let (m_in, v_in) = (x.mean().unwrap(), x.var(0.0));
    let layer = lecun_init(512, 64, 4).unwrap();
    let a = forward(std::slice::from_ref(&layer), p01(), x.view()).unwrap().remove(0).a;
    let w = &layer.weights;
    let cols = a.mean_axis(Axis(0)).unwrap();
    for (k, col) in w.axis_iter(Axis(1)).enumerate() {
        let wm = WeightMoments::new(col.sum(), col.dot(&col));
        let want = map_moments(MomentPair::new(m_in, v_in), wm, p01()).unwrap().mu_next;
        let unit = a.column(k);
        let se = unit.std(1.0) / (unit.len() as f64).sqrt();
        assert!((cols[k] - want).abs() < 5.0 * se, "unit {k}: {} vs {want} (se {se})", cols[k]);
    }
}

#[test]
fn analytic_chain_converges_monotonically() {
    let t = propagate_moments_mc(12, 32, 1000, WeightMode::Perturbed { omega: 0.05, tau: 1.05 }, p01(), 5).unwrap();
    let fixed = {
        let mut m = t.rows[0].analytic;
        for _ in 0..500 {
            m = map_moments(m, WeightMoments::new(0.05, 1.05), p01()).unwrap().moments();
        }
        m
    };
    let dist: Vec<f64> = t.rows.iter().map(|r| r.analytic.max_norm_distance(&fixed)).collect();
    for w in dist[3..].windows(2) {
        assert!(w[1] <= w[0], "{dist:?}");
    }
}

#[test]
fn moment_field_points_toward_the_fixed_point() {
    let target = MomentPair::new(0.0, 1.0);
    let d = DomainBox::new(Interval::new(-0.1, 0.1).unwrap(), Interval::point(0.0), Interval::new(0.8, 1.5).unwrap(), Interval::point(1.0)).unwrap();
    for v in lattice(&d, 15) {
        let m = MomentPair::new(v[0], v[2]);
        let next = map_moments(m, WeightMoments::NORMALIZED, p01()).unwrap().moments();
        let before = ((m.mu - target.mu).powi(2) + (m.nu - target.nu).powi(2)).sqrt();
        let after = ((next.mu - target.mu).powi(2) + (next.nu - target.nu).powi(2)).sqrt();
        assert!(after <= before, "{m:?} -> {next:?}");
    }
}

#[test]
fn alpha_dropout_keeps_standard_moments() {
    let mut r = ChaCha8Rng::seed_from_u64(12);
    let n = 1_000_000;
    let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
    for q in [0.8, 0.9, 0.95] {
        let cfg: DropoutConfig = make_dropout_config(q, p01()).unwrap();
        let mut y = x.clone();
        cfg.apply(&mut y, &mut r);
        let nf = n as f64;
        let mean = y.iter().sum::<f64>() / nf;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
        assert!(mean.abs() < 4.0 * (var / nf).sqrt(), "q = {q}: mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "q = {q}: var {var}");
    }
}

#[test]
fn lecun_weights_have_unit_scale() {
    let taus: Vec<f64> = (0..200)
        .map(|seed| {
            let w = lecun_init(1000, 1, seed).unwrap().weights;
            w.iter().map(|v| v * v).sum::<f64>()
        })
        .collect();
    let mean = taus.iter().sum::<f64>() / 200.0;
    // tau is a scaled chi-square with 1000 degrees of freedom, sd sqrt(2/1000)
    assert!((mean - 1.0).abs() < 4.0 * (0.002f64).sqrt() / (200f64).sqrt(), "{mean}");
}
