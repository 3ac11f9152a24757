//! Forced systems `x' = f(x) + eps * g(t, x, eps)`: declaration, evaluation
//! and spatial Jacobians.

mod builtin;
pub mod dual;
pub mod expr;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

pub use builtin::{
    builtin_registry, register_builtin, BuiltinInfo, FourierSeries, FourierTerm, ParamInfo,
    ParamValue, PlanarExample,
};
use dual::Dual;
pub use expr::{parse_expression, Bindings, DomainError, Expr, ParseError, Scope};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("state has dimension {got}, system expects {expected}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SysError {
    #[error("cannot parse {component}: {source}")]
    Parse { component: String, source: ParseError },
    #[error("{component} must not depend on t or eps (the unperturbed field is autonomous)")]
    NonAutonomous { component: String },
    #[error("dimension must be at least 2, got {0}")]
    Dimension(usize),
    #[error("{what} has {got} components, expected {expected}")]
    ComponentCount { what: &'static str, expected: usize, got: usize },
    #[error("forcing period must be positive and finite, got {0}")]
    Period(f64),
    #[error("g is not periodic with period {period}: g(t) and g(t + period) differ by {gap:.3e} at t = {t}")]
    NotPeriodic { period: f64, t: f64, gap: f64 },
    #[error("unknown system `{name}`; available: {}", available.join(", "))]
    UnknownSystem { name: String, available: Vec<String> },
    #[error("bad parameter `{name}`: {reason}")]
    Parameter { name: String, reason: String },
}

/// Both halves of a forced vector field. Jacobians are row-major `n × n`.
pub trait ForcedField: Send + Sync + fmt::Debug {
    fn f(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError>;
    fn f_jacobian(&self, x: &[f64], out: &mut [f64], jac: &mut [f64]) -> Result<(), EvalError>;
    fn g(&self, t: f64, x: &[f64], eps: f64, out: &mut [f64]) -> Result<(), EvalError>;
    fn g_jacobian(
        &self,
        t: f64,
        x: &[f64],
        eps: f64,
        out: &mut [f64],
        jac: &mut [f64],
    ) -> Result<(), EvalError>;
}

/// Value of a field at a point, with the Jacobian when requested.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldEval {
    pub value: Vec<f64>,
    pub jacobian: Option<DMatrix<f64>>,
}

/// An immutable forced system. Cheap to clone.
#[derive(Debug, Clone)]
pub struct SystemDef {
    name: String,
    dimension: usize,
    params: Vec<(String, f64)>,
    forcing_period: f64,
    field: Arc<dyn ForcedField>,
    radius_bound: Option<f64>,
    from_expressions: bool,
}

impl SystemDef {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn forcing_period(&self) -> f64 {
        self.forcing_period
    }

    pub fn params(&self) -> &[(String, f64)] {
        &self.params
    }

    /// A priori bound on all forced periodic solutions, when the system
    /// provides one.
    pub fn radius_bound(&self) -> Option<f64> {
        self.radius_bound
    }

    /// Expression-defined perturbations cannot be checked for analyticity
    /// in `x`; built-ins are analytic by construction.
    pub fn g_analyticity_checked(&self) -> bool {
        !self.from_expressions
    }

    pub fn field(&self) -> &dyn ForcedField {
        self.field.as_ref()
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), EvalError> {
        if x.len() != self.dimension {
            return Err(EvalError::Dimension { expected: self.dimension, got: x.len() });
        }
        Ok(())
    }

    pub fn eval_f(&self, x: &[f64], want_jacobian: bool) -> Result<FieldEval, EvalError> {
        self.check_dim(x)?;
        let n = self.dimension;
        let mut value = vec![0.0; n];
        if !want_jacobian {
            self.field.f(x, &mut value)?;
            return Ok(FieldEval { value, jacobian: None });
        }
        let mut jac = vec![0.0; n * n];
        self.field.f_jacobian(x, &mut value, &mut jac)?;
        Ok(FieldEval { value, jacobian: Some(DMatrix::from_row_slice(n, n, &jac)) })
    }

    pub fn eval_g(
        &self,
        t: f64,
        x: &[f64],
        eps: f64,
        want_jacobian: bool,
    ) -> Result<FieldEval, EvalError> {
        self.check_dim(x)?;
        let n = self.dimension;
        let mut value = vec![0.0; n];
        if !want_jacobian {
            self.field.g(t, x, eps, &mut value)?;
            return Ok(FieldEval { value, jacobian: None });
        }
        let mut jac = vec![0.0; n * n];
        self.field.g_jacobian(t, x, eps, &mut value, &mut jac)?;
        Ok(FieldEval { value, jacobian: Some(DMatrix::from_row_slice(n, n, &jac)) })
    }

    /// `f(x) + eps g(t, x, eps)` into `out`; `scratch` must have length `n`.
    pub fn rhs(
        &self,
        t: f64,
        x: &[f64],
        eps: f64,
        out: &mut [f64],
        scratch: &mut [f64],
    ) -> Result<(), EvalError> {
        self.field.f(x, out)?;
        if eps != 0.0 {
            self.field.g(t, x, eps, scratch)?;
            out.iter_mut().zip(scratch.iter()).for_each(|(o, g)| *o += eps * g);
        }
        Ok(())
    }

    /// Full field value and its spatial Jacobian. `scratch` has length `n + n²`.
    pub fn rhs_jacobian(
        &self,
        t: f64,
        x: &[f64],
        eps: f64,
        out: &mut [f64],
        jac: &mut [f64],
        scratch: &mut [f64],
    ) -> Result<(), EvalError> {
        self.field.f_jacobian(x, out, jac)?;
        if eps != 0.0 {
            let n = self.dimension;
            let (gv, gj) = scratch.split_at_mut(n);
            self.field.g_jacobian(t, x, eps, gv, gj)?;
            out.iter_mut().zip(gv.iter()).for_each(|(o, g)| *o += eps * g);
            jac.iter_mut().zip(gj.iter()).for_each(|(o, g)| *o += eps * g);
        }
        Ok(())
    }

    /// Same system with a different declared forcing period, re-checked
    /// for periodicity.
    pub fn with_forcing_period(&self, period: f64) -> Result<SystemDef, SysError> {
        let mut sys = self.clone();
        sys.forcing_period = period;
        sys.validate_period()?;
        Ok(sys)
    }

    fn validate_period(&self) -> Result<(), SysError> {
        let period = self.forcing_period;
        if !(period.is_finite() && period > 0.0) {
            return Err(SysError::Period(period));
        }
        let n = self.dimension;
        let mut g0 = vec![0.0; n];
        let mut g1 = vec![0.0; n];
        for k in 0..6 {
            let t = 0.37 + 0.83 * k as f64;
            let x: Vec<f64> = (0..n).map(|i| 0.9 - 0.35 * ((i + k) % 4) as f64).collect();
            let eps = if k % 2 == 0 { 0.0 } else { 0.01 };
            if self.field.g(t, &x, eps, &mut g0).is_err()
                || self.field.g(t + period, &x, eps, &mut g1).is_err()
            {
                continue;
            }
            let gap = g0.iter().zip(&g1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let scale = 1.0 + g0.iter().map(|v| v.abs()).fold(0.0, f64::max);
            if gap > 1e-9 * scale * (1.0 + t.abs() + period) {
                return Err(SysError::NotPeriodic { period, t, gap });
            }
        }
        Ok(())
    }
}

/// Text form of a system declared in a configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionSpec {
    pub name: String,
    pub dimension: usize,
    pub f: Vec<String>,
    pub g: Vec<String>,
    pub params: BTreeMap<String, f64>,
    pub forcing_period: f64,
}

#[derive(Debug)]
struct ExpressionField {
    n: usize,
    f: Vec<Expr>,
    g: Vec<Expr>,
    params: Vec<f64>,
}

impl ExpressionField {
    fn values(
        &self,
        exprs: &[Expr],
        t: f64,
        eps: f64,
        x: &[f64],
        out: &mut [f64],
    ) -> Result<(), EvalError> {
        let env = Bindings { t, eps, x, params: &self.params };
        for (o, e) in out.iter_mut().zip(exprs) {
            *o = e.eval(&env)?;
        }
        Ok(())
    }

    fn with_jacobian(
        &self,
        exprs: &[Expr],
        t: f64,
        eps: f64,
        x: &[f64],
        out: &mut [f64],
        jac: &mut [f64],
    ) -> Result<(), EvalError> {
        let n = self.n;
        let duals: Vec<Dual> = x.iter().enumerate().map(|(i, &v)| Dual::variable(v, i, n)).collect();
        let env = Bindings { t, eps, x: &duals, params: &self.params };
        for (i, e) in exprs.iter().enumerate() {
            let d = e.eval(&env)?;
            out[i] = d.re;
            let row = &mut jac[i * n..(i + 1) * n];
            if d.grad.is_empty() {
                row.fill(0.0);
            } else {
                row.copy_from_slice(&d.grad);
            }
        }
        Ok(())
    }
}

impl ForcedField for ExpressionField {
    fn f(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        self.values(&self.f, 0.0, 0.0, x, out)
    }
    fn f_jacobian(&self, x: &[f64], out: &mut [f64], jac: &mut [f64]) -> Result<(), EvalError> {
        self.with_jacobian(&self.f, 0.0, 0.0, x, out, jac)
    }
    fn g(&self, t: f64, x: &[f64], eps: f64, out: &mut [f64]) -> Result<(), EvalError> {
        self.values(&self.g, t, eps, x, out)
    }
    fn g_jacobian(
        &self,
        t: f64,
        x: &[f64],
        eps: f64,
        out: &mut [f64],
        jac: &mut [f64],
    ) -> Result<(), EvalError> {
        self.with_jacobian(&self.g, t, eps, x, out, jac)
    }
}

impl SystemDef {
    /// Builds a system from expression strings, checking declared names,
    /// autonomy of `f` and periodicity of `g`.
    pub fn from_expressions(spec: &ExpressionSpec) -> Result<SystemDef, SysError> {
        let n = spec.dimension;
        if n < 2 {
            return Err(SysError::Dimension(n));
        }
        for (what, list) in [("f", &spec.f), ("g", &spec.g)] {
            if list.len() != n {
                return Err(SysError::ComponentCount { what, expected: n, got: list.len() });
            }
        }
        let names: Vec<String> = spec.params.keys().cloned().collect();
        let forced_scope = Scope::forced(n, names.clone());
        let parse_all = |what: &str, list: &[String], scope: &Scope| {
            list.iter()
                .enumerate()
                .map(|(i, text)| {
                    parse_expression(text, scope).map_err(|source| SysError::Parse {
                        component: format!("{what}[{i}]"),
                        source,
                    })
                })
                .collect::<Result<Vec<_>, _>>()
        };
        let f = parse_all("f", &spec.f, &forced_scope)?;
        if let Some(i) = f.iter().position(Expr::mentions_time_or_eps) {
            return Err(SysError::NonAutonomous { component: format!("f[{i}]") });
        }
        let g = parse_all("g", &spec.g, &forced_scope)?;
        let field = ExpressionField { n, f, g, params: spec.params.values().copied().collect() };
        let sys = SystemDef {
            name: spec.name.clone(),
            dimension: n,
            params: spec.params.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            forcing_period: spec.forcing_period,
            field: Arc::new(field),
            radius_bound: None,
            from_expressions: true,
        };
        sys.validate_period()?;
        Ok(sys)
    }

    pub(crate) fn from_builtin(
        name: &str,
        dimension: usize,
        params: Vec<(String, f64)>,
        forcing_period: f64,
        field: Arc<dyn ForcedField>,
        radius_bound: Option<f64>,
    ) -> Result<SystemDef, SysError> {
        let sys = SystemDef {
            name: name.to_string(),
            dimension,
            params,
            forcing_period,
            field,
            radius_bound,
            from_expressions: false,
        };
        sys.validate_period()?;
        Ok(sys)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn planar_expressions(g: [&str; 2]) -> ExpressionSpec {
        ExpressionSpec {
            name: "planar".into(),
            dimension: 2,
            f: vec![
                "(1-(x1^2+x2^2))*x1-(x1^2+x2^2)*x2".into(),
                "(1-(x1^2+x2^2))*x2+(x1^2+x2^2)*x1".into(),
            ],
            g: g.iter().map(|s| s.to_string()).collect(),
            params: BTreeMap::new(),
            forcing_period: 2.0 * std::f64::consts::PI,
        }
    }

    #[test]
    fn planar_field_value_and_jacobian() {
        let sys = SystemDef::from_expressions(&planar_expressions(["0", "0"])).unwrap();
        let ev = sys.eval_f(&[1.0, 0.0], true).unwrap();
        assert_eq!(ev.value, vec![0.0, 1.0]);
        let j = ev.jacobian.unwrap();
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[-2.0, -1.0, 3.0, 0.0]));
    }

    #[test]
    fn zero_field() {
        let mut spec = planar_expressions(["0", "0"]);
        spec.f = vec!["0".into(), "0".into()];
        let sys = SystemDef::from_expressions(&spec).unwrap();
        let ev = sys.eval_f(&[0.3, -7.0], true).unwrap();
        assert_eq!(ev.value, vec![0.0, 0.0]);
        assert_eq!(ev.jacobian.unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn constant_forcing_is_exactly_periodic() {
        let sys = SystemDef::from_expressions(&planar_expressions(["1", "0"])).unwrap();
        let t = 1.234;
        let a = sys.eval_g(t, &[0.2, 0.1], 0.0, false).unwrap();
        let b = sys.eval_g(t + sys.forcing_period(), &[0.2, 0.1], 0.0, false).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.value, vec![1.0, 0.0]);
    }

    #[test]
    fn rejects_time_in_f() {
        let mut spec = planar_expressions(["0", "0"]);
        spec.f[1] = "x1 + sin(t)".into();
        assert_eq!(
            SystemDef::from_expressions(&spec).unwrap_err(),
            SysError::NonAutonomous { component: "f[1]".into() }
        );
    }

    #[test]
    fn rejects_non_periodic_forcing() {
        let spec = planar_expressions(["sin(t/2)", "0"]);
        assert!(matches!(SystemDef::from_expressions(&spec), Err(SysError::NotPeriodic { .. })));
        let spec = planar_expressions(["t", "0"]);
        assert!(SystemDef::from_expressions(&spec).is_err());
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut spec = planar_expressions(["0", "0"]);
        spec.g.pop();
        assert!(matches!(SystemDef::from_expressions(&spec), Err(SysError::ComponentCount { .. })));
        let mut spec = planar_expressions(["0", "0"]);
        spec.dimension = 1;
        spec.f.truncate(1);
        spec.g.truncate(1);
        assert_eq!(SystemDef::from_expressions(&spec).unwrap_err(), SysError::Dimension(1));
    }

    #[test]
    fn domain_error_propagates() {
        let mut spec = planar_expressions(["log(x1)", "0"]);
        spec.params.insert("k".into(), 1.0);
        let sys = SystemDef::from_expressions(&spec).unwrap();
        let err = sys.eval_g(0.0, &[-1.0, 0.0], 0.0, false).unwrap_err();
        assert!(matches!(err, EvalError::Domain(ref d) if d.subexpression == "log(x1)"));
    }

    #[test]
    fn parameters_resolve() {
        let mut spec = planar_expressions(["amp*cos(t)", "eps*x2"]);
        spec.params.insert("amp".into(), 0.5);
        let sys = SystemDef::from_expressions(&spec).unwrap();
        let g = sys.eval_g(0.0, &[0.0, 2.0], 0.25, true).unwrap();
        assert_eq!(g.value, vec![0.5, 0.5]);
        assert_eq!(g.jacobian.unwrap()[(1, 1)], 0.25);
    }
}
