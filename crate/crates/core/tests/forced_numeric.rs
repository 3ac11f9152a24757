mod common;

use std::f64::consts::PI;

use common::{c, circ_dist, cycle_and_adjoint, planar};
use malkin_core::forced::{
    find_all_fixed_points, newton_fixed_point, poincare, sweep_verify, GammaT, MultistartConfig, NewtonConfig,
    PoincareSpec, Region, Stability, SweepConfig,
};
use malkin_core::linalg::eigenvalues_by_modulus;
use malkin_core::malkin::{analyze, MalkinConfig, MalkinEvaluator};
use malkin_core::odeint::IntegratorConfig;
use rand::{Rng, SeedableRng};

fn annulus() -> Region {
    Region::Annulus { inner: 0.5, outer: 2f64.sqrt() }
}

#[test]
fn unperturbed_map_fixes_the_cycle() {
    let sys = planar(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0));
    let (cycle, _) = cycle_and_adjoint(&sys);
    let cfg = IntegratorConfig::default();
    let spec = PoincareSpec::forcing(&sys, 0.0).unwrap();
    let p = poincare(&sys, &spec, &cycle.anchor, &cfg).unwrap();
    assert!((p.image[0] - cycle.anchor[0]).abs() < 1e-9 && (p.image[1] - cycle.anchor[1]).abs() < 1e-9);
    let on_cycle = cycle.state_at(2.2);
    let ev = eigenvalues_by_modulus(&poincare(&sys, &spec, &on_cycle, &cfg).unwrap().derivative);
    let mu2 = (-4.0 * PI).exp();
    assert!((ev[0].re - 1.0).abs() < 1e-6 && (ev[1].re - mu2).abs() < 1e-6 * mu2);
}

#[test]
fn origin_is_a_repelling_fixed_point() {
    let sys = planar(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0));
    let cfg = IntegratorConfig::default();
    let spec = PoincareSpec::forcing(&sys, 0.0).unwrap();
    let p = poincare(&sys, &spec, &[0.0, 0.0], &cfg).unwrap();
    assert_eq!(p.image, vec![0.0, 0.0]);
    let e = (2.0 * PI).exp();
    for m in eigenvalues_by_modulus(&p.derivative) {
        assert!((m.norm() - e).abs() < 1e-5 * e, "{m}");
    }
    let rec = newton_fixed_point(&sys, &spec, &[1e-5, -2e-5], &NewtonConfig::default(), &cfg, None).unwrap();
    assert!(rec.zeta.iter().all(|v| v.abs() < 1e-10));
    assert_eq!(rec.stability, Stability::Unstable);
    assert_eq!(rec.gamma_t, GammaT::Value(1));
}

#[test]
fn derivative_matches_finite_differences() {
    let sys = planar(c(0.8, -0.3), c(0.2, 0.5), c(-0.4, 0.1));
    let cfg = IntegratorConfig::with_tolerance(1e-12);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let h = 1e-6;
    for _ in 0..20 {
        let zeta = [rng.gen_range(-1.3..1.3), rng.gen_range(-1.3..1.3)];
        let spec = PoincareSpec::forcing(&sys, rng.gen_range(0.0..0.05)).unwrap();
        let d = poincare(&sys, &spec, &zeta, &cfg).unwrap().derivative;
        for k in 0..2 {
            let (mut zp, mut zm) = (zeta, zeta);
            zp[k] += h;
            zm[k] -= h;
            let ip = poincare(&sys, &spec, &zp, &cfg).unwrap().image;
            let im = poincare(&sys, &spec, &zm, &cfg).unwrap().image;
            for i in 0..2 {
                let fd = (ip[i] - im[i]) / (2.0 * h);
                let scale = d.column(k).amax().max(1e-3);
                assert!((fd - d[(i, k)]).abs() <= 1e-5 * scale, "zeta {zeta:?}: {fd} vs {}", d[(i, k)]);
            }
        }
    }
}

/// Averaging gives the slow phase equation ψ' = eps M(ψ) / T, so a zero of
/// M attracts iff M' < 0 there. With M = 2π(cos θ − sin θ) this makes π/4
/// the attracting phase.
#[test]
fn rotation_forcing_fixed_points_follow_phase_reduction() {
    let sys = planar(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0));
    let (cycle, _) = cycle_and_adjoint(&sys);
    let cfg = IntegratorConfig::default();
    let spec = PoincareSpec::forcing(&sys, 0.01).unwrap();
    let dm = |th: f64| -2.0 * PI * (th.sin() + th.cos());
    for th in [PI / 4.0, 5.0 * PI / 4.0] {
        let start: Vec<f64> = cycle.state_at(th).iter().map(|v| v * 1.02).collect();
        let rec = newton_fixed_point(&sys, &spec, &start, &NewtonConfig::default(), &cfg, Some(&cycle)).unwrap();
        assert!(rec.residual <= 1e-10);
        let expect = if dm(th) < 0.0 { Stability::AsymptoticallyStable } else { Stability::Unstable };
        assert_eq!(rec.stability, expect, "theta {th}");
        let near = rec.nearest_theta.unwrap();
        assert!(circ_dist(near.theta, th, cycle.period) < 1e-3, "{near:?}");
        // Stable iff gamma_T = +1 for a hyperbolic planar fixed point with one
        // strongly contracting multiplier.
        let gamma = if expect == Stability::AsymptoticallyStable { 1 } else { -1 };
        assert_eq!(rec.gamma_t, GammaT::Value(gamma));
    }
}

#[test]
fn multistart_finds_two_fixed_points() {
    let sys = planar(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0));
    let (cycle, _) = cycle_and_adjoint(&sys);
    let spec = PoincareSpec::forcing(&sys, 0.01).unwrap();
    let res = find_all_fixed_points(
        &sys,
        &spec,
        &annulus(),
        &MultistartConfig::default(),
        &NewtonConfig::default(),
        &IntegratorConfig::default(),
        Some(&cycle),
    )
    .unwrap();
    assert_eq!(res.inside.len(), 2, "{:?}", res.inside);
    let sum: i32 = res.inside.iter().map(|r| r.gamma_t.value().unwrap() as i32).sum();
    assert_eq!(sum, 0);
}

#[test]
fn nonvanishing_m_leaves_annulus_empty() {
    let sys = planar(c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0));
    let spec = PoincareSpec::forcing(&sys, 0.01).unwrap();
    let res = find_all_fixed_points(
        &sys,
        &spec,
        &annulus(),
        &MultistartConfig::default(),
        &NewtonConfig::default(),
        &IntegratorConfig::default(),
        None,
    )
    .unwrap();
    assert!(res.inside.is_empty(), "{:?}", res.inside);
}

#[test]
fn unforced_grid_collapses_onto_cycle() {
    let sys = planar(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0));
    let spec = PoincareSpec::forcing(&sys, 0.0).unwrap();
    let ms = MultistartConfig { density: 8, ..Default::default() };
    // On a circle of fixed points the residual floor is the integrator's
    // phase error, so tighten the tolerance below fp_tol.
    let res = find_all_fixed_points(
        &sys,
        &spec,
        &annulus(),
        &ms,
        &NewtonConfig::default(),
        &IntegratorConfig::with_tolerance(1e-12),
        None,
    )
    .unwrap();
    assert!(!res.inside.is_empty());
    for r in &res.inside {
        let radius = (r.zeta[0].powi(2) + r.zeta[1].powi(2)).sqrt();
        assert!((radius - 1.0).abs() < 1e-6, "{:?}", r.zeta);
    }
}

#[test]
fn sweep_on_rotation_forcing() {
    let sys = planar(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0));
    let (cycle, adj) = cycle_and_adjoint(&sys);
    let cfg = IntegratorConfig::default();
    let ev = MalkinEvaluator::new(&sys, &cycle, &adj, 1, &cfg).unwrap();
    let profile = analyze(&ev, &MalkinConfig::default()).unwrap();
    let sweep = SweepConfig { eps_list: vec![0.04, 0.02, 0.01], ..Default::default() };
    let report = sweep_verify(&sys, &cycle, &profile, &annulus(), &sweep, &cfg).unwrap();
    for a in &report.assertions {
        assert!(a.passed, "{}: {}", a.name, a.detail);
    }
    assert!(report.passed);
    for r in &report.per_eps {
        assert_eq!(r.matches.len(), 2);
        assert_eq!(r.gamma_sum, 0);
    }
    for row in &report.convergence {
        let s = row.slope.unwrap();
        assert!((s - 1.0).abs() <= 0.25, "slope {s}");
    }
    assert_eq!(report.audit.samples, 6);
    assert!(report.audit.gamma_rule_holds);
    assert!(report.audit.gamma_equals_minus_index);
    // The measured direction is opposite to the index-based rule.
    assert!(!report.audit.index_rule_holds);

    let strict = SweepConfig { strict_theorem_rule: true, eps_list: vec![0.01], ..Default::default() };
    let report = sweep_verify(&sys, &cycle, &profile, &annulus(), &strict, &cfg).unwrap();
    assert!(!report.passed);
}

#[test]
fn sweep_without_zeros_expects_nothing() {
    let sys = planar(c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0));
    let (cycle, adj) = cycle_and_adjoint(&sys);
    let cfg = IntegratorConfig::default();
    let ev = MalkinEvaluator::new(&sys, &cycle, &adj, 1, &cfg).unwrap();
    let profile = analyze(&ev, &MalkinConfig::default()).unwrap();
    let sweep = SweepConfig { eps_list: vec![0.01], ..Default::default() };
    let report = sweep_verify(&sys, &cycle, &profile, &annulus(), &sweep, &cfg).unwrap();
    assert_eq!(report.assertions.len(), 1);
    assert!(report.passed, "{:?}", report.assertions);
}
