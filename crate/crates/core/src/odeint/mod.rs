//! Adaptive Runge–Kutta integration with dense output, plus the augmented
//! integrations built on it: variational (sensitivity) flows, the adjoint
//! equation along a given orbit, and quadrature carried as an extra state.

mod dopri;
mod trajectory;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sysdef::{EvalError, SystemDef};
pub(crate) use dopri::{Rhs, Stepper};
pub use trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("invalid integrator configuration: {0}")]
    Config(String),
    #[error("step budget exhausted after {steps} attempts at t = {t}")]
    MaxSteps { t: f64, steps: usize },
    #[error("solution became non-finite near t = {t} (blow-up)")]
    NonFinite { t: f64 },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("field evaluation failed at t = {t}: {source}")]
    Field { t: f64, source: EvalError },
}

/// Tolerances and limits for the embedded 5(4) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Largest allowed step; unbounded when absent.
    pub max_step: Option<f64>,
    pub max_steps: usize,
    /// First trial step; chosen automatically when absent.
    pub initial_step: Option<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { abs_tol: 1e-10, rel_tol: 1e-10, max_step: None, max_steps: 10_000_000, initial_step: None }
    }
}

impl IntegratorConfig {
    pub fn with_tolerance(tol: f64) -> Self {
        IntegratorConfig { abs_tol: tol, rel_tol: tol, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), OdeError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.abs_tol) {
            return Err(OdeError::Config(format!("abs_tol must be positive, got {}", self.abs_tol)));
        }
        if !positive(self.rel_tol) {
            return Err(OdeError::Config(format!("rel_tol must be positive, got {}", self.rel_tol)));
        }
        if self.max_steps == 0 {
            return Err(OdeError::Config("max_steps must be positive".into()));
        }
        if let Some(h) = self.max_step {
            if !positive(h) {
                return Err(OdeError::Config(format!("max_step must be positive, got {h}")));
            }
        }
        if let Some(h) = self.initial_step {
            if !positive(h) {
                return Err(OdeError::Config(format!("initial_step must be positive, got {h}")));
            }
        }
        Ok(())
    }
}

/// Endpoint and Jacobian `∂x(t1)/∂x(t0)` of a flow.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityResult {
    pub endpoint: Vec<f64>,
    pub sensitivity: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureResult {
    pub endpoint: Vec<f64>,
    pub quadrature: f64,
}

/// Integrates `x' = field(t, x)` from `t0` to `t1` (either direction).
pub fn integrate<F: Rhs>(
    field: F,
    t0: f64,
    x0: &[f64],
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, OdeError> {
    let mut stepper = Stepper::new(field, t0, x0, t1, cfg, true)?;
    stepper.run()?;
    Ok(stepper.into_trajectory().expect("recording stepper"))
}

/// Right-hand side of the full forced field `f + eps g`.
pub fn system_rhs(sys: &SystemDef, eps: f64) -> impl Rhs + '_ {
    let mut scratch = vec![0.0; sys.dimension()];
    move |t: f64, x: &[f64], dx: &mut [f64]| sys.rhs(t, x, eps, dx, &mut scratch)
}

/// State plus row-major variational matrix: `x' = F(t,x)`, `Y' = D_x F(t,x) Y`.
pub(crate) fn variational_rhs(sys: &SystemDef, eps: f64) -> impl Rhs + '_ {
    let n = sys.dimension();
    let mut jac = vec![0.0; n * n];
    let mut scratch = vec![0.0; n + n * n];
    move |t: f64, y: &[f64], dy: &mut [f64]| {
        let (x, ymat) = y.split_at(n);
        let (dx, dymat) = dy.split_at_mut(n);
        sys.rhs_jacobian(t, x, eps, dx, &mut jac, &mut scratch)?;
        for i in 0..n {
            let row = &jac[i * n..(i + 1) * n];
            for j in 0..n {
                dymat[i * n + j] = (0..n).map(|k| row[k] * ymat[k * n + j]).sum();
            }
        }
        Ok(())
    }
}

pub(crate) fn identity_augmented(x0: &[f64]) -> Vec<f64> {
    let n = x0.len();
    let mut y0 = Vec::with_capacity(n + n * n);
    y0.extend_from_slice(x0);
    y0.extend((0..n * n).map(|k| if k / n == k % n { 1.0 } else { 0.0 }));
    y0
}

pub(crate) fn split_augmented(y: &[f64], n: usize) -> (Vec<f64>, DMatrix<f64>) {
    (y[..n].to_vec(), DMatrix::from_row_slice(n, n, &y[n..n + n * n]))
}

/// Dense trajectory of the state together with its variational matrix,
/// sharing one adaptive step sequence.
pub fn variational_trajectory(
    sys: &SystemDef,
    eps: f64,
    t0: f64,
    x0: &[f64],
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, OdeError> {
    check_state(sys, x0)?;
    integrate(variational_rhs(sys, eps), t0, &identity_augmented(x0), t1, cfg)
}

/// Flow of `f + eps g` from `(t0, x0)` to `t1` with its sensitivity matrix.
pub fn flow_with_sensitivity(
    sys: &SystemDef,
    eps: f64,
    t0: f64,
    x0: &[f64],
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<SensitivityResult, OdeError> {
    check_state(sys, x0)?;
    let mut stepper = Stepper::new(variational_rhs(sys, eps), t0, &identity_augmented(x0), t1, cfg, false)?;
    stepper.run()?;
    let (endpoint, sensitivity) = split_augmented(stepper.y(), sys.dimension());
    Ok(SensitivityResult { endpoint, sensitivity })
}

fn check_state(sys: &SystemDef, x0: &[f64]) -> Result<(), OdeError> {
    if x0.len() != sys.dimension() {
        return Err(OdeError::Field {
            t: f64::NAN,
            source: EvalError::Dimension { expected: sys.dimension(), got: x0.len() },
        });
    }
    Ok(())
}

/// Solves the adjoint equation `z' = -f'(x(t))ᵀ z` along the orbit supplied
/// by `orbit` (which writes `x(t)` into its buffer). `t1 < t0` integrates
/// backwards.
pub fn integrate_adjoint<O>(
    sys: &SystemDef,
    mut orbit: O,
    t0: f64,
    z0: &[f64],
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, OdeError>
where
    O: FnMut(f64, &mut [f64]),
{
    check_state(sys, z0)?;
    let n = sys.dimension();
    let mut x = vec![0.0; n];
    let mut val = vec![0.0; n];
    let mut jac = vec![0.0; n * n];
    let field = sys.field();
    let rhs = move |t: f64, z: &[f64], dz: &mut [f64]| {
        orbit(t, &mut x);
        field.f_jacobian(&x, &mut val, &mut jac)?;
        for i in 0..n {
            dz[i] = -(0..n).map(|k| jac[k * n + i] * z[k]).sum::<f64>();
        }
        Ok(())
    };
    integrate(rhs, t0, z0, t1, cfg)
}

/// Integrates `field` together with `q' = integrand(t, x)`; the quadrature
/// component takes part in step-size control.
pub fn integrate_with_quadrature<F, Q>(
    mut field: F,
    mut integrand: Q,
    t0: f64,
    x0: &[f64],
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<QuadratureResult, OdeError>
where
    F: Rhs,
    Q: FnMut(f64, &[f64]) -> Result<f64, EvalError>,
{
    let n = x0.len();
    let rhs = move |t: f64, y: &[f64], dy: &mut [f64]| {
        let (x, _) = y.split_at(n);
        let (dx, dq) = dy.split_at_mut(n);
        field(t, x, dx)?;
        dq[0] = integrand(t, x)?;
        Ok(())
    };
    let mut y0 = x0.to_vec();
    y0.push(0.0);
    let mut stepper = Stepper::new(rhs, t0, &y0, t1, cfg, false)?;
    stepper.run()?;
    let y = stepper.y();
    Ok(QuadratureResult { endpoint: y[..n].to_vec(), quadrature: y[n] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysdef::{register_builtin, ExpressionSpec};
    use std::collections::BTreeMap;
    use std::f64::consts::PI;

    fn harmonic(_t: f64, x: &[f64], dx: &mut [f64]) -> Result<(), EvalError> {
        dx[0] = x[1];
        dx[1] = -x[0];
        Ok(())
    }

    fn planar() -> SystemDef {
        register_builtin("paper_planar", &BTreeMap::new(), None).unwrap()
    }

    fn linear_rotation() -> SystemDef {
        let spec = ExpressionSpec {
            name: "rotation".into(),
            dimension: 2,
            f: vec!["x2".into(), "-x1".into()],
            g: vec!["0".into(), "0".into()],
            params: BTreeMap::new(),
            forcing_period: 1.0,
        };
        SystemDef::from_expressions(&spec).unwrap()
    }

    #[test]
    fn zero_field_is_constant() {
        let traj = integrate(|_, _, dx: &mut [f64]| { dx.fill(0.0); Ok(()) }, 0.0, &[3.0, 4.0], 1.0, &Default::default()).unwrap();
        assert_eq!(traj.evaluate(0.5), vec![3.0, 4.0]);
    }

    #[test]
    fn harmonic_oscillator_full_turn() {
        let traj = integrate(harmonic, 0.0, &[1.0, 0.0], 2.0 * PI, &Default::default()).unwrap();
        let end = traj.endpoint();
        assert!((end[0] - 1.0).abs() < 1e-8 && end[1].abs() < 1e-8, "{end:?}");
        assert_eq!(traj.t_end(), 2.0 * PI);
    }

    #[test]
    fn mesh_points_are_exact() {
        let traj = integrate(harmonic, 0.0, &[1.0, 0.0], 3.0, &Default::default()).unwrap();
        for i in 0..=traj.steps() {
            assert_eq!(traj.evaluate(traj.mesh()[i]), traj.state_at_mesh(i));
        }
    }

    #[test]
    fn planar_cycle_returns_after_two_pi() {
        let sys = planar();
        let traj = integrate(system_rhs(&sys, 0.0), 0.0, &[1.0, 0.0], 2.0 * PI, &Default::default()).unwrap();
        let end = traj.endpoint();
        assert!((end[0] - 1.0).abs() < 1e-8 && end[1].abs() < 1e-8, "{end:?}");
    }

    #[test]
    fn tighter_tolerance_reduces_error() {
        let err = |tol: f64| {
            let traj = integrate(harmonic, 0.0, &[1.0, 0.0], 10.0, &IntegratorConfig::with_tolerance(tol)).unwrap();
            let e = traj.endpoint();
            ((e[0] - 10f64.cos()).powi(2) + (e[1] + 10f64.sin()).powi(2)).sqrt()
        };
        let (coarse, fine) = (err(1e-6), err(1e-9));
        assert!(fine < coarse / 10.0, "coarse {coarse:e} fine {fine:e}");
    }

    #[test]
    fn dense_output_order_on_fixed_steps() {
        // Huge tolerances with a capped step turn the scheme into fixed-step RK.
        let dense_error = |h: f64| {
            let cfg = IntegratorConfig {
                abs_tol: 1e3,
                rel_tol: 1e3,
                max_step: Some(h),
                initial_step: Some(h),
                ..Default::default()
            };
            let traj = integrate(harmonic, 0.0, &[1.0, 0.0], 2.0, &cfg).unwrap();
            (0..200)
                .map(|k| {
                    let t = 0.01 * k as f64 + 0.0037;
                    let x = traj.evaluate(t);
                    (x[0] - t.cos()).abs().max((x[1] + t.sin()).abs())
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (dense_error(0.2), dense_error(0.1));
        let order = (e1 / e2).log2();
        assert!(order >= 4.0, "observed dense order {order}");
    }

    #[test]
    fn backward_integration_retraces() {
        let sys = planar();
        let cfg = IntegratorConfig::default();
        let x0 = [0.4, -0.9];
        let fwd = integrate(system_rhs(&sys, 0.0), 0.0, &x0, 3.0, &cfg).unwrap();
        let back = integrate(system_rhs(&sys, 0.0), 3.0, fwd.endpoint(), 0.0, &cfg).unwrap();
        let x = back.endpoint();
        assert!((x[0] - x0[0]).abs() < 1e-7 && (x[1] - x0[1]).abs() < 1e-7, "{x:?}");
        let mid = back.evaluate(1.5);
        let mid_fwd = fwd.evaluate(1.5);
        assert!((mid[0] - mid_fwd[0]).abs() < 1e-7);
    }

    #[test]
    fn rotation_sensitivity_is_matrix_exponential() {
        let sys = linear_rotation();
        let res = flow_with_sensitivity(&sys, 0.0, 0.0, &[0.3, 0.1], PI / 2.0, &Default::default()).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!((res.sensitivity - expected).amax() < 1e-8);
    }

    #[test]
    fn empty_span_gives_identity() {
        let sys = planar();
        let res = flow_with_sensitivity(&sys, 0.1, 1.0, &[0.5, 0.5], 1.0, &Default::default()).unwrap();
        assert_eq!(res.sensitivity, DMatrix::identity(2, 2));
        assert_eq!(res.endpoint, vec![0.5, 0.5]);
        let q = integrate_with_quadrature(harmonic, |_, _| Ok(1.0), 2.0, &[1.0, 0.0], 2.0, &Default::default()).unwrap();
        assert_eq!(q.quadrature, 0.0);
    }

    #[test]
    fn planar_monodromy_eigenvalues() {
        let sys = planar();
        let cfg = IntegratorConfig::with_tolerance(1e-12);
        let res = flow_with_sensitivity(&sys, 0.0, 0.0, &[1.0, 0.0], 2.0 * PI, &cfg).unwrap();
        let mut mu: Vec<f64> = res.sensitivity.complex_eigenvalues().iter().map(|c| c.re).collect();
        mu.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!((mu[0] - 1.0).abs() < 1e-6);
        let expected = (-4.0 * PI).exp();
        assert!((mu[1] - expected).abs() / expected < 1e-6, "{} vs {expected}", mu[1]);
    }

    #[test]
    fn adjoint_along_planar_cycle_is_periodic() {
        let sys = planar();
        let orbit = |t: f64, x: &mut [f64]| {
            x[0] = t.cos();
            x[1] = t.sin();
        };
        // backwards from T, the direction in which the adjoint is stable
        let traj = integrate_adjoint(&sys, orbit, 2.0 * PI, &[1.0, 1.0], 0.0, &Default::default()).unwrap();
        let z = traj.endpoint();
        assert!((z[0] - 1.0).abs() < 1e-7 && (z[1] - 1.0).abs() < 1e-7, "{z:?}");
        let zq = traj.evaluate(PI / 2.0);
        assert!((zq[0] + 1.0).abs() < 1e-7 && (zq[1] - 1.0).abs() < 1e-7, "{zq:?}");
        // forwards the transverse mode grows like e^{2t}, so it needs a much tighter tolerance
        let cfg = IntegratorConfig::with_tolerance(1e-13);
        let traj = integrate_adjoint(&sys, orbit, 0.0, &[1.0, 1.0], 2.0 * PI, &cfg).unwrap();
        let z = traj.endpoint();
        assert!((z[0] - 1.0).abs() < 1e-7 && (z[1] - 1.0).abs() < 1e-7, "{z:?}");
    }

    #[test]
    fn adjoint_of_zero_jacobian_is_constant() {
        let mut spec = ExpressionSpec {
            name: "zero".into(),
            dimension: 2,
            f: vec!["0".into(), "0".into()],
            g: vec!["0".into(), "0".into()],
            params: BTreeMap::new(),
            forcing_period: 1.0,
        };
        spec.name = "zero".into();
        let sys = SystemDef::from_expressions(&spec).unwrap();
        let traj = integrate_adjoint(&sys, |_, x: &mut [f64]| x.fill(0.0), 0.0, &[2.0, -1.0], 5.0, &Default::default()).unwrap();
        assert_eq!(traj.endpoint(), &[2.0, -1.0]);
    }

    #[test]
    fn quadratures() {
        let cfg = IntegratorConfig::default();
        let none = |_: f64, _: &[f64], _: &mut [f64]| Ok(());
        let t = 2.0 * PI;
        let one = integrate_with_quadrature(none, |_, _| Ok(1.0), 0.0, &[], t, &cfg).unwrap();
        assert!((one.quadrature - t).abs() < 1e-10);
        let cos = integrate_with_quadrature(none, |s, _| Ok(s.cos()), 0.0, &[], t, &cfg).unwrap();
        assert!(cos.quadrature.abs() < 1e-9);
        let cos2 = integrate_with_quadrature(none, |s, _| Ok(s.cos().powi(2)), 0.0, &[], t, &cfg).unwrap();
        assert!((cos2.quadrature - PI).abs() < 1e-9);
        // quadrature along a moving state: ∫ x1 dt over the oscillator = sin(t)
        let along = integrate_with_quadrature(harmonic, |_, x| Ok(x[0]), 0.0, &[1.0, 0.0], 1.0, &cfg).unwrap();
        assert!((along.quadrature - 1f64.sin()).abs() < 1e-9);
    }

    #[test]
    fn blow_up_is_reported() {
        let err = integrate(|_, x: &[f64], dx: &mut [f64]| { dx[0] = x[0] * x[0]; Ok(()) }, 0.0, &[1.0], 2.0, &Default::default())
            .unwrap_err();
        match err {
            OdeError::NonFinite { t } | OdeError::StepUnderflow { t } => assert!(t > 0.9 && t <= 1.0 + 1e-6, "t = {t}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn step_budget_is_enforced() {
        let cfg = IntegratorConfig { max_steps: 5, ..Default::default() };
        assert!(matches!(integrate(harmonic, 0.0, &[1.0, 0.0], 100.0, &cfg), Err(OdeError::MaxSteps { .. })));
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = IntegratorConfig { abs_tol: -1.0, ..Default::default() };
        assert!(matches!(integrate(harmonic, 0.0, &[1.0, 0.0], 1.0, &cfg), Err(OdeError::Config(_))));
    }
}
