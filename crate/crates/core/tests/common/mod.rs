#![allow(dead_code)]

use std::collections::BTreeMap;

use malkin_core::cycle::{adjoint_orbit, find_limit_cycle, AdjointOrbit, CycleSearchConfig, LimitCycle, SectionChoice};
use malkin_core::odeint::IntegratorConfig;
use malkin_core::sysdef::{register_builtin, FourierSeries, ParamValue, SystemDef};
use num_complex::Complex64;

/// The planar example with single-mode coefficients `a = â₁ e^{it}`,
/// `b = b̂₀`, `c = ĉ₂ e^{2it}`.
pub fn planar(a1: Complex64, b0: Complex64, c2: Complex64) -> SystemDef {
    planar_with_period(a1, b0, c2, None)
}

pub fn planar_with_period(a1: Complex64, b0: Complex64, c2: Complex64, period: Option<f64>) -> SystemDef {
    let mut p = BTreeMap::new();
    p.insert("a".to_string(), ParamValue::Fourier(FourierSeries::single(1, a1)));
    p.insert("b".to_string(), ParamValue::Fourier(FourierSeries::single(0, b0)));
    p.insert("c".to_string(), ParamValue::Fourier(FourierSeries::single(2, c2)));
    register_builtin("paper_planar", &p, period).unwrap()
}

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Section `x2 = 0` crossed upward, which anchors the planar cycle at (1, 0).
pub fn x_axis_search() -> CycleSearchConfig {
    CycleSearchConfig {
        section: SectionChoice::Hyperplane { point: vec![1.0, 0.0], normal: vec![0.0, 1.0] },
        ..CycleSearchConfig::from_guess(vec![1.3, 0.0])
    }
}

pub fn cycle_and_adjoint(sys: &SystemDef) -> (LimitCycle, AdjointOrbit) {
    let cfg = IntegratorConfig::default();
    let cycle = find_limit_cycle(sys, &x_axis_search(), &cfg).unwrap();
    let adjoint = adjoint_orbit(sys, &cycle, &cfg).unwrap();
    (cycle, adjoint)
}

pub fn circ_dist(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}
