//! Built-in systems with hand-written Jacobians.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{EvalError, ForcedField, SysError, SystemDef};

/// One Fourier mode `(re + i im) e^{i m t}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierTerm {
    pub m: i32,
    pub re: f64,
    pub im: f64,
}

/// A complex trigonometric polynomial of period 2π.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FourierSeries {
    pub terms: Vec<FourierTerm>,
}

impl FourierSeries {
    pub fn single(m: i32, c: Complex64) -> Self {
        FourierSeries { terms: vec![FourierTerm { m, re: c.re, im: c.im }] }
    }

    pub fn eval(&self, t: f64) -> Complex64 {
        self.terms
            .iter()
            .map(|term| Complex64::new(term.re, term.im) * Complex64::from_polar(1.0, term.m as f64 * t))
            .sum()
    }

    /// Sum of coefficient moduli, an upper bound on the sup norm.
    pub fn sup_bound(&self) -> f64 {
        self.terms.iter().map(|t| t.re.hypot(t.im)).sum()
    }

    fn is_finite(&self) -> bool {
        self.terms.iter().all(|t| t.re.is_finite() && t.im.is_finite())
    }
}

/// `x' = (1 - |x|²) x + i |x|² x + eps (a(t) + b(t) x + c(t) conj(x))` on
/// `C = R²`. The unperturbed cycle is the unit circle, traversed as `e^{it}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarExample {
    pub a: FourierSeries,
    pub b: FourierSeries,
    pub c: FourierSeries,
}

impl PlanarExample {
    /// `sqrt(1 + |a|∞ + |b|∞ + |c|∞)`, with each sup norm replaced by the
    /// sum of coefficient moduli.
    pub fn radius_bound(&self) -> f64 {
        (1.0 + self.a.sup_bound() + self.b.sup_bound() + self.c.sup_bound()).sqrt()
    }
}

impl ForcedField for PlanarExample {
    fn f(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        let (x1, x2) = (x[0], x[1]);
        let r2 = x1 * x1 + x2 * x2;
        out[0] = (1.0 - r2) * x1 - r2 * x2;
        out[1] = (1.0 - r2) * x2 + r2 * x1;
        Ok(())
    }

    fn f_jacobian(&self, x: &[f64], out: &mut [f64], jac: &mut [f64]) -> Result<(), EvalError> {
        self.f(x, out)?;
        let (x1, x2) = (x[0], x[1]);
        let r2 = x1 * x1 + x2 * x2;
        jac[0] = 1.0 - r2 - 2.0 * x1 * x1 - 2.0 * x1 * x2;
        jac[1] = -2.0 * x1 * x2 - r2 - 2.0 * x2 * x2;
        jac[2] = -2.0 * x1 * x2 + r2 + 2.0 * x1 * x1;
        jac[3] = 1.0 - r2 - 2.0 * x2 * x2 + 2.0 * x1 * x2;
        Ok(())
    }

    fn g(&self, t: f64, x: &[f64], _eps: f64, out: &mut [f64]) -> Result<(), EvalError> {
        let z = Complex64::new(x[0], x[1]);
        let v = self.a.eval(t) + self.b.eval(t) * z + self.c.eval(t) * z.conj();
        out[0] = v.re;
        out[1] = v.im;
        Ok(())
    }

    fn g_jacobian(
        &self,
        t: f64,
        x: &[f64],
        eps: f64,
        out: &mut [f64],
        jac: &mut [f64],
    ) -> Result<(), EvalError> {
        self.g(t, x, eps, out)?;
        let b = self.b.eval(t);
        let c = self.c.eval(t);
        // b z is [[br, -bi], [bi, br]]; c conj(z) is [[cr, ci], [ci, -cr]].
        jac[0] = b.re + c.re;
        jac[1] = -b.im + c.im;
        jac[2] = b.im + c.im;
        jac[3] = b.re - c.re;
        Ok(())
    }
}

/// A parameter value in a built-in's parameter map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Real(f64),
    Fourier(FourierSeries),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamInfo {
    pub name: &'static str,
    pub kind: &'static str,
    pub doc: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BuiltinInfo {
    pub name: &'static str,
    pub summary: &'static str,
    pub dimension: usize,
    pub default_forcing_period: &'static str,
    pub params: &'static [ParamInfo],
}

const FOURIER_KIND: &str = "fourier series: list of {m, re, im}";

static REGISTRY: &[BuiltinInfo] = &[BuiltinInfo {
    name: "paper_planar",
    summary: "x' = (1-|x|^2)x + i|x|^2 x + eps(a(t) + b(t)x + c(t)conj(x)) on C = R^2; cycle e^{it}",
    dimension: 2,
    default_forcing_period: "2*pi",
    params: &[
        ParamInfo { name: "a", kind: FOURIER_KIND, doc: "additive forcing a(t)" },
        ParamInfo { name: "b", kind: FOURIER_KIND, doc: "coefficient b(t) of x" },
        ParamInfo { name: "c", kind: FOURIER_KIND, doc: "coefficient c(t) of conj(x)" },
    ],
}];

pub fn builtin_registry() -> &'static [BuiltinInfo] {
    REGISTRY
}

/// Instantiates a built-in. Missing Fourier parameters default to zero;
/// `forcing_period` overrides the built-in's natural period (it must still
/// be a period of `g`).
pub fn register_builtin(
    name: &str,
    params: &BTreeMap<String, ParamValue>,
    forcing_period: Option<f64>,
) -> Result<SystemDef, SysError> {
    let Some(info) = REGISTRY.iter().find(|b| b.name == name) else {
        return Err(SysError::UnknownSystem {
            name: name.to_string(),
            available: REGISTRY.iter().map(|b| b.name.to_string()).collect(),
        });
    };
    for key in params.keys() {
        if !info.params.iter().any(|p| p.name == key) {
            return Err(SysError::Parameter {
                name: key.clone(),
                reason: format!("`{}` has no such parameter", info.name),
            });
        }
    }
    let series = |key: &str| -> Result<FourierSeries, SysError> {
        match params.get(key) {
            None => Ok(FourierSeries::default()),
            Some(ParamValue::Fourier(s)) if s.is_finite() => Ok(s.clone()),
            Some(ParamValue::Fourier(_)) => Err(SysError::Parameter {
                name: key.to_string(),
                reason: "non-finite coefficient".into(),
            }),
            Some(ParamValue::Real(_)) => Err(SysError::Parameter {
                name: key.to_string(),
                reason: "expected a list of Fourier terms".into(),
            }),
        }
    };
    let example = PlanarExample { a: series("a")?, b: series("b")?, c: series("c")? };
    let bound = example.radius_bound();
    SystemDef::from_builtin(
        info.name,
        2,
        Vec::new(),
        forcing_period.unwrap_or(2.0 * PI),
        Arc::new(example),
        Some(bound),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planar(a: FourierSeries, b: FourierSeries, c: FourierSeries) -> SystemDef {
        let mut p = BTreeMap::new();
        p.insert("a".to_string(), ParamValue::Fourier(a));
        p.insert("b".to_string(), ParamValue::Fourier(b));
        p.insert("c".to_string(), ParamValue::Fourier(c));
        register_builtin("paper_planar", &p, None).unwrap()
    }

    #[test]
    fn a1_forcing_is_unit_rotation() {
        let sys = planar(FourierSeries::single(1, Complex64::new(1.0, 0.0)), Default::default(), Default::default());
        for &t in &[0.0, 0.7, 2.0, 5.5] {
            let g = sys.eval_g(t, &[0.3, -0.2], 0.1, false).unwrap().value;
            assert!((g[0] - t.cos()).abs() < 1e-15 && (g[1] - t.sin()).abs() < 1e-15);
        }
        let g0 = sys.eval_g(0.0, &[5.0, 5.0], 0.7, false).unwrap().value;
        assert_eq!(g0, vec![1.0, 0.0]);
    }

    #[test]
    fn b0_forcing_is_identity() {
        let sys = planar(Default::default(), FourierSeries::single(0, Complex64::new(1.0, 0.0)), Default::default());
        let g = sys.eval_g(3.3, &[1.0, 0.0], 0.01, true).unwrap();
        assert_eq!(g.value, vec![1.0, 0.0]);
        assert_eq!(g.jacobian.unwrap(), nalgebra::DMatrix::identity(2, 2));
    }

    #[test]
    fn zero_coefficients_give_zero_forcing() {
        let sys = register_builtin("paper_planar", &BTreeMap::new(), None).unwrap();
        let g = sys.eval_g(1.0, &[0.4, 0.9], 0.0, true).unwrap();
        assert_eq!(g.value, vec![0.0, 0.0]);
        assert_eq!(sys.radius_bound(), Some(1.0));
    }

    #[test]
    fn analytic_jacobian_at_anchor() {
        let sys = register_builtin("paper_planar", &BTreeMap::new(), None).unwrap();
        let ev = sys.eval_f(&[1.0, 0.0], true).unwrap();
        assert_eq!(ev.value, vec![0.0, 1.0]);
        assert_eq!(ev.jacobian.unwrap(), nalgebra::DMatrix::from_row_slice(2, 2, &[-2.0, -1.0, 3.0, 0.0]));
    }

    #[test]
    fn conj_coefficient_jacobian() {
        let c = FourierSeries::single(0, Complex64::new(0.3, -0.7));
        let sys = planar(Default::default(), Default::default(), c);
        let x = [0.4, 1.1];
        let ev = sys.eval_g(0.0, &x, 0.0, true).unwrap();
        let j = ev.jacobian.unwrap();
        let h = 1e-7;
        for k in 0..2 {
            let mut xp = x;
            xp[k] += h;
            let gp = sys.eval_g(0.0, &xp, 0.0, false).unwrap().value;
            for i in 0..2 {
                assert!(((gp[i] - ev.value[i]) / h - j[(i, k)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn unknown_name_lists_available() {
        let err = register_builtin("nosuch", &BTreeMap::new(), None).unwrap_err();
        match err {
            SysError::UnknownSystem { available, .. } => assert_eq!(available, vec!["paper_planar"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_parameter_rejected() {
        let mut p = BTreeMap::new();
        p.insert("d".to_string(), ParamValue::Real(1.0));
        assert!(matches!(register_builtin("paper_planar", &p, None), Err(SysError::Parameter { .. })));
    }

    #[test]
    fn period_override_must_be_a_period() {
        let mut p = BTreeMap::new();
        p.insert("a".to_string(), ParamValue::Fourier(FourierSeries::single(1, Complex64::new(1.0, 0.0))));
        assert!(register_builtin("paper_planar", &p, Some(4.0 * PI)).is_ok());
        assert!(matches!(register_builtin("paper_planar", &p, Some(3.0)), Err(SysError::NotPeriodic { .. })));
    }

    #[test]
    fn radius_bound_matches_single_mode_sup_norm() {
        let sys = planar(FourierSeries::single(1, Complex64::new(1.0, 0.0)), Default::default(), Default::default());
        assert!((sys.radius_bound().unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }
}
