//! Attracting limit cycles of the unperturbed field: shooting on a Poincaré
//! section, monodromy and Floquet multipliers, and the normalized periodic
//! adjoint solution.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{eigenvalues_by_modulus, null_vector, orthogonal_complement, solve_truncated};
use crate::odeint::{
    flow_with_sensitivity, identity_augmented, integrate, integrate_adjoint, split_augmented, system_rhs,
    variational_rhs, IntegratorConfig, OdeError, Rhs, Stepper, Trajectory,
};
use crate::sysdef::{EvalError, SystemDef};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CycleError {
    #[error("{stage}: {source}")]
    Ode { stage: &'static str, source: OdeError },
    #[error("field evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("initial guess has dimension {got}, system has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid cycle search configuration: {0}")]
    Config(String),
    #[error("degenerate section: field speed {speed:.3e} at the section point (equilibrium?)")]
    DegenerateSection { speed: f64 },
    #[error("section is nearly tangent to the flow at the return point (|<normal, f>| / |f| = {ratio:.3e})")]
    TangentSection { ratio: f64 },
    #[error("no return to the section within time {horizon}")]
    NoReturn { horizon: f64 },
    #[error("Newton on the return map did not converge in {iterations} iterations (residual {residual:.3e})")]
    NewtonFailed { iterations: usize, residual: f64 },
    #[error("eigenvalue 1 of the monodromy is not numerically simple (second singular value {second:.3e} of Y^T - I)")]
    AdjointNotSimple { second: f64 },
    #[error("adjoint eigenvector is orthogonal to the flow (|<f(x0), w>| = {value:.3e}); Floquet hypothesis broken")]
    AdjointDegenerate { value: f64 },
}

fn ode(stage: &'static str) -> impl Fn(OdeError) -> CycleError {
    move |source| CycleError::Ode { stage, source }
}

/// How the Poincaré section is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SectionChoice {
    /// Through the settled point, normal to the field there.
    Auto,
    /// The hyperplane `<normal, x - point> = 0`.
    Hyperplane { point: Vec<f64>, normal: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CycleSearchConfig {
    pub initial_guess: Vec<f64>,
    pub settle_time: f64,
    pub section: SectionChoice,
    pub newton_tol: f64,
    pub max_newton_iter: usize,
    pub floquet_tol: f64,
    /// Longest time to wait for a return to the section.
    pub max_return_time: f64,
}

impl Default for CycleSearchConfig {
    fn default() -> Self {
        CycleSearchConfig {
            initial_guess: Vec::new(),
            settle_time: 50.0,
            section: SectionChoice::Auto,
            newton_tol: 1e-12,
            max_newton_iter: 25,
            floquet_tol: 1e-6,
            max_return_time: 1000.0,
        }
    }
}

impl CycleSearchConfig {
    pub fn from_guess(initial_guess: Vec<f64>) -> Self {
        CycleSearchConfig { initial_guess, ..Default::default() }
    }

    pub fn validate(&self, n: usize) -> Result<(), CycleError> {
        if self.initial_guess.len() != n {
            return Err(CycleError::Dimension { expected: n, got: self.initial_guess.len() });
        }
        if !(self.settle_time >= 0.0 && self.settle_time.is_finite()) {
            return Err(CycleError::Config(format!("settle_time must be >= 0, got {}", self.settle_time)));
        }
        if !(self.newton_tol > 0.0) || !(self.floquet_tol > 0.0) {
            return Err(CycleError::Config("tolerances must be positive".into()));
        }
        if !(self.max_return_time > 0.0 && self.max_return_time.is_finite()) {
            return Err(CycleError::Config(format!("max_return_time must be positive, got {}", self.max_return_time)));
        }
        if let SectionChoice::Hyperplane { point, normal } = &self.section {
            if point.len() != n || normal.len() != n {
                return Err(CycleError::Config(format!("section point and normal must have dimension {n}")));
            }
            if !(normal.iter().map(|v| v * v).sum::<f64>() > 0.0) {
                return Err(CycleError::Config("section normal must be nonzero".into()));
            }
        }
        Ok(())
    }
}

/// Hyperplane through `point` with unit `normal`; crossings are counted in
/// the direction of the normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub point: Vec<f64>,
    pub normal: Vec<f64>,
}

impl Section {
    fn new(point: Vec<f64>, normal: &[f64]) -> Self {
        let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        Section { point, normal: normal.iter().map(|v| v / norm).collect() }
    }

    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        self.normal.iter().zip(x).zip(&self.point).map(|((a, x), p)| a * (x - p)).sum()
    }
}

#[derive(Debug, Clone)]
pub struct LimitCycle {
    pub anchor: Vec<f64>,
    pub period: f64,
    pub orbit: Trajectory,
    pub monodromy: DMatrix<f64>,
    /// Sorted by descending modulus.
    pub multipliers: Vec<Complex64>,
    pub section: Section,
    pub floquet_tol: f64,
    pub newton_iterations: usize,
    pub newton_residual: f64,
}

impl LimitCycle {
    pub fn dimension(&self) -> usize {
        self.anchor.len()
    }

    /// `x0(t)`, extended periodically.
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dimension()];
        self.state_into(t, &mut out);
        out
    }

    pub fn state_into(&self, t: f64, out: &mut [f64]) {
        self.orbit.evaluate_into(t.rem_euclid(self.period), out);
    }

    pub fn check_floquet(&self, margin: f64) -> FloquetReport {
        check_floquet_hypothesis(&self.multipliers, self.floquet_tol, margin)
    }
}

/// Outcome of the Floquet hypothesis check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FloquetReport {
    pub holds: bool,
    pub moduli: Vec<f64>,
    /// `|μ₁ - 1|`.
    pub trivial_gap: f64,
    pub margin: f64,
    pub details: Vec<String>,
}

pub const DEFAULT_FLOQUET_MARGIN: f64 = 1e-3;

/// Holds iff the leading multiplier is within `floquet_tol` of 1 and all
/// others have modulus at most `1 - margin`. `multipliers` must be sorted by
/// descending modulus.
pub fn check_floquet_hypothesis(multipliers: &[Complex64], floquet_tol: f64, margin: f64) -> FloquetReport {
    let moduli: Vec<f64> = multipliers.iter().map(|m| m.norm()).collect();
    let mut details = Vec::new();
    let mut holds = !multipliers.is_empty();
    let trivial_gap = multipliers.first().map_or(f64::INFINITY, |m| (m - 1.0).norm());
    if let Some(m) = multipliers.first() {
        let ok = trivial_gap <= floquet_tol;
        holds &= ok;
        details.push(format!(
            "mu_1 = {:.12} {:+.3e}i, |mu_1 - 1| = {:.3e} ({})",
            m.re,
            m.im,
            trivial_gap,
            if ok { "ok" } else { "not within floquet_tol" }
        ));
    } else {
        details.push("no multipliers".into());
    }
    for (i, (m, r)) in multipliers.iter().zip(&moduli).enumerate().skip(1) {
        let ok = *r <= 1.0 - margin;
        holds &= ok;
        details.push(format!(
            "mu_{} = {:.6e} {:+.3e}i, modulus {:.6e} ({})",
            i + 1,
            m.re,
            m.im,
            r,
            if ok { "ok" } else { "exceeds 1 - margin" }
        ));
    }
    FloquetReport { holds, moduli, trivial_gap, margin, details }
}

/// Root of `h` on `[a, b]` given a sign change, by the Illinois variant of
/// regula falsi.
fn illinois(mut h: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, mut fa: f64, mut fb: f64) -> f64 {
    if fa == 0.0 {
        return a;
    }
    let mut side = 0;
    for _ in 0..200 {
        if fb == 0.0 || (b - a).abs() <= 4.0 * f64::EPSILON * a.abs().max(b.abs()).max(1.0) {
            return b;
        }
        let c = (a * fb - b * fa) / (fb - fa);
        let fc = h(c);
        if fc == 0.0 {
            return c;
        }
        if (fc > 0.0) == (fb > 0.0) {
            b = c;
            fb = fc;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        } else {
            a = c;
            fa = fc;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        }
    }
    if fa.abs() < fb.abs() {
        a
    } else {
        b
    }
}

/// First upward crossing of the section, located on the dense output.
/// Returns the crossing time and the full (possibly augmented) state there.
/// With `skip_start` a crossing inside the first step from a start lying on
/// the section is ignored.
fn first_crossing<F: Rhs>(
    field: F,
    y0: &[f64],
    n: usize,
    section: &Section,
    horizon: f64,
    cfg: &IntegratorConfig,
    skip_start: bool,
) -> Result<(f64, Vec<f64>), CycleError> {
    let mut stepper = Stepper::new(field, 0.0, y0, horizon, cfg, false).map_err(ode("section return"))?;
    let mut buf = vec![0.0; y0.len()];
    let mut prev = section.signed_distance(&y0[..n]);
    let mut first = true;
    while !stepper.done() {
        stepper.step().map_err(ode("section return"))?;
        let cur = section.signed_distance(&stepper.y()[..n]);
        let ignore = first && skip_start;
        first = false;
        if prev < 0.0 && cur >= 0.0 && !ignore {
            let step = stepper.last_step();
            let (a, b) = (step.t_old, step.t_new());
            let t = illinois(
                |t| {
                    step.eval_into(t, &mut buf);
                    section.signed_distance(&buf[..n])
                },
                a,
                b,
                prev,
                cur,
            );
            step.eval_into(t, &mut buf);
            return Ok((t, buf));
        }
        prev = cur;
    }
    Err(CycleError::NoReturn { horizon })
}

/// Locates the attracting cycle through the basin point `search.initial_guess`.
///
/// Phase zero is the converged point on the section, i.e. the first upward
/// section crossing of the cycle.
pub fn find_limit_cycle(
    sys: &SystemDef,
    search: &CycleSearchConfig,
    cfg: &IntegratorConfig,
) -> Result<LimitCycle, CycleError> {
    let n = sys.dimension();
    search.validate(n)?;
    let settled = if search.settle_time > 0.0 {
        let traj = integrate(system_rhs(sys, 0.0), 0.0, &search.initial_guess, search.settle_time, cfg)
            .map_err(ode("settling"))?;
        traj.endpoint().to_vec()
    } else {
        search.initial_guess.clone()
    };

    let (section, start) = match &search.section {
        SectionChoice::Auto => {
            let v = sys.eval_f(&settled, false)?.value;
            let speed = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if !(speed > 1e-10 * (1.0 + norm(&settled))) {
                return Err(CycleError::DegenerateSection { speed });
            }
            (Section::new(settled.clone(), &v), settled)
        }
        SectionChoice::Hyperplane { point, normal } => {
            let section = Section::new(point.clone(), normal);
            let (_, x) =
                first_crossing(system_rhs(sys, 0.0), &settled, n, &section, search.max_return_time, cfg, false)?;
            (section, x)
        }
    };

    let p = DVector::from_column_slice(&section.point);
    let nu = DVector::from_column_slice(&section.normal);
    let basis = orthogonal_complement(&nu);
    let mut s = basis.transpose() * (DVector::from_column_slice(&start) - &p);
    let eye = DMatrix::<f64>::identity(n - 1, n - 1);

    let mut residual = f64::INFINITY;
    for iter in 0..=search.max_newton_iter {
        let x = &p + &basis * &s;
        let (_, y) = first_crossing(
            variational_rhs(sys, 0.0),
            &identity_augmented(x.as_slice()),
            n,
            &section,
            search.max_return_time,
            cfg,
            true,
        )?;
        let (xr, ytau) = split_augmented(&y, n);
        let xr = DVector::from_vec(xr);
        let f_ret = residual_vector(&basis, &xr, &p, &s);
        residual = f_ret.norm();
        if residual <= search.newton_tol {
            return finish(sys, search, cfg, section, x.as_slice().to_vec(), iter, residual);
        }
        if iter == search.max_newton_iter {
            break;
        }
        let v = DVector::from_vec(sys.eval_f(xr.as_slice(), false)?.value);
        let vn = nu.dot(&v);
        let ratio = vn.abs() / v.norm();
        if !(ratio > 1e-8) {
            return Err(CycleError::TangentSection { ratio });
        }
        // Derivative of the return map: project Y(τ) along the flow onto the section.
        let proj = DMatrix::<f64>::identity(n, n) - (&v * nu.transpose()) / vn;
        let jac = basis.transpose() * proj * ytau * &basis - &eye;
        let (delta, _) = solve_truncated(&jac, &(-f_ret), 1e-14);
        s += &delta;
        // Once the update is at round-off level the residual cannot improve.
        if delta.norm() <= 1e-3 * search.newton_tol * (1.0 + s.norm()) && residual <= 1e3 * search.newton_tol {
            let x = &p + &basis * &s;
            return finish(sys, search, cfg, section, x.as_slice().to_vec(), iter + 1, residual);
        }
    }
    Err(CycleError::NewtonFailed { iterations: search.max_newton_iter, residual })
}

fn residual_vector(basis: &DMatrix<f64>, xr: &DVector<f64>, p: &DVector<f64>, s: &DVector<f64>) -> DVector<f64> {
    basis.transpose() * (xr - p) - s
}

#[allow(clippy::too_many_arguments)]
fn finish(
    sys: &SystemDef,
    search: &CycleSearchConfig,
    cfg: &IntegratorConfig,
    section: Section,
    anchor: Vec<f64>,
    iterations: usize,
    residual: f64,
) -> Result<LimitCycle, CycleError> {
    let n = anchor.len();
    // Recompute the return time from the converged anchor itself.
    let (period, _) =
        first_crossing(system_rhs(sys, 0.0), &anchor, n, &section, search.max_return_time, cfg, true)
?;
    let orbit = integrate(system_rhs(sys, 0.0), 0.0, &anchor, period, cfg).map_err(ode("cycle orbit"))?;
    let flow = flow_with_sensitivity(sys, 0.0, 0.0, &anchor, period, cfg).map_err(ode("monodromy"))?;
    let multipliers = eigenvalues_by_modulus(&flow.sensitivity);
    Ok(LimitCycle {
        anchor,
        period,
        orbit,
        monodromy: flow.sensitivity,
        multipliers,
        section,
        floquet_tol: search.floquet_tol,
        newton_iterations: iterations,
        newton_residual: residual,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Periodic solution `z0` of the adjoint equation with `<x0'(t), z0(t)> = 1`.
#[derive(Debug, Clone)]
pub struct AdjointOrbit {
    /// Over `[0, T*]`, stored in backward integration order.
    pub orbit: Trajectory,
    pub period: f64,
    pub normalization_residual: f64,
    /// `|z0(0) - z0(T*)|`.
    pub periodicity_gap: f64,
    /// Ratio of the second smallest to the largest singular value of
    /// `Y(T*)ᵀ - I`; small values mean a nearly double unit multiplier.
    pub conditioning: f64,
}

impl AdjointOrbit {
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.orbit.dimension()];
        self.state_into(t, &mut out);
        out
    }

    pub fn state_into(&self, t: f64, out: &mut [f64]) {
        self.orbit.evaluate_into(t.rem_euclid(self.period), out);
    }
}

pub const NORMALIZATION_SAMPLES: usize = 256;

/// Left eigenvector of the monodromy at 1, transported backward over one
/// period and scaled so that `<x0', z0> = 1`.
pub fn adjoint_orbit(sys: &SystemDef, cycle: &LimitCycle, cfg: &IntegratorConfig) -> Result<AdjointOrbit, CycleError> {
    let n = cycle.dimension();
    let m = cycle.monodromy.transpose() - DMatrix::<f64>::identity(n, n);
    let nv = null_vector(&m);
    let scale = nv.largest.max(1.0);
    let conditioning = nv.second_smallest / scale;
    if !(nv.second_smallest > 1e-8 * scale) {
        return Err(CycleError::AdjointNotSimple { second: nv.second_smallest });
    }
    let w = nv.vector;
    let f_anchor = DVector::from_vec(sys.eval_f(&cycle.anchor, false)?.value);
    let inner = f_anchor.dot(&w);
    if inner.abs() < 1e-10 {
        return Err(CycleError::AdjointDegenerate { value: inner.abs() });
    }
    let t_star = cycle.period;
    let raw = integrate_adjoint(sys, |t, out: &mut [f64]| cycle.orbit.evaluate_into(t, out), t_star, w.as_slice(), 0.0, cfg)
        .map_err(ode("adjoint"))?;
    let z_start = raw.endpoint();
    let c = f_anchor.iter().zip(z_start).map(|(a, b)| a * b).sum::<f64>();
    if c.abs() < 1e-10 {
        return Err(CycleError::AdjointDegenerate { value: c.abs() });
    }
    let orbit = raw.scaled(1.0 / c);
    let z0 = orbit.evaluate(0.0);
    let zt = orbit.evaluate(t_star);
    let periodicity_gap = norm(&z0.iter().zip(&zt).map(|(a, b)| a - b).collect::<Vec<_>>());

    let mut x = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut normalization_residual: f64 = 0.0;
    for i in 0..NORMALIZATION_SAMPLES {
        let t = t_star * i as f64 / NORMALIZATION_SAMPLES as f64;
        cycle.state_into(t, &mut x);
        orbit.evaluate_into(t, &mut z);
        let v = sys.eval_f(&x, false)?.value;
        let dot: f64 = v.iter().zip(&z).map(|(a, b)| a * b).sum();
        normalization_residual = normalization_residual.max((dot - 1.0).abs());
    }
    Ok(AdjointOrbit { orbit, period: t_star, normalization_residual, periodicity_gap, conditioning })
}
