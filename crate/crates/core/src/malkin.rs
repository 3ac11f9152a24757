//! The bifurcation function `M(θ) = ∫₀ᵀ <g(t, x0(t+θ), 0), z0(t+θ)> dt`,
//! its zeros and their indices, and the stability claims derived from them.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::cycle::{AdjointOrbit, LimitCycle};
use crate::odeint::{integrate_with_quadrature, IntegratorConfig, OdeError};
use crate::sysdef::{EvalError, SystemDef};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MalkinError {
    #[error(
        "forcing period {forcing} does not match k * T* = {k} * {period_min} = {}; the forcing period must equal the analyzed period",
        *k as f64 * period_min
    )]
    PeriodMismatch { forcing: f64, k: u32, period_min: f64 },
    #[error("invalid Malkin configuration: {0}")]
    Config(String),
    #[error("quadrature failed at theta = {theta}: {source}")]
    Quadrature { theta: f64, source: OdeError },
    #[error("M identically zero (sup norm {sup_norm:.3e}); the first-order theory gives no information")]
    IdenticallyZero { sup_norm: f64 },
    #[error("{count} samples are too few for the Fourier coefficient of order {m} (need at least {needed})")]
    TooFewSamples { count: usize, m: i32, needed: usize },
}

/// Absolute floor below which `M` counts as identically zero.
pub const ZERO_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MalkinConfig {
    pub grid_size: usize,
    /// Bracket width at which zero refinement stops.
    pub refine_tol: f64,
    /// Threshold on `|M|` for index-0 zeros; `1e-9 * sup_norm` when absent.
    pub flat_tol: Option<f64>,
}

impl Default for MalkinConfig {
    fn default() -> Self {
        MalkinConfig { grid_size: 1024, refine_tol: 1e-10, flat_tol: None }
    }
}

impl MalkinConfig {
    pub const MIN_GRID: usize = 512;

    pub fn validate(&self) -> Result<(), MalkinError> {
        if self.grid_size < Self::MIN_GRID {
            return Err(MalkinError::Config(format!(
                "grid_size must be at least {}, got {}",
                Self::MIN_GRID,
                self.grid_size
            )));
        }
        if !(self.refine_tol > 0.0) {
            return Err(MalkinError::Config(format!("refine_tol must be positive, got {}", self.refine_tol)));
        }
        if let Some(t) = self.flat_tol {
            if !(t >= 0.0) {
                return Err(MalkinError::Config(format!("flat_tol must be non-negative, got {t}")));
            }
        }
        Ok(())
    }
}

/// Multiplicity of a zero as estimated from a local polynomial fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Multiplicity {
    Order(u32),
    /// No fitted coefficient rises above the flatness tolerance.
    Flat,
}

impl Serialize for Multiplicity {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Multiplicity::Order(m) => s.serialize_u32(*m),
            Multiplicity::Flat => s.serialize_str("flat"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroRecord {
    pub theta_star: f64,
    /// +1 for a − → + sign change, −1 for + → −, 0 for a tangency.
    pub index: i8,
    pub multiplicity_estimate: Multiplicity,
    /// `|M(θ*)|`.
    pub refinement_residual: f64,
    /// Index-0 zero found as a minimum of `|M|` below the flatness tolerance.
    pub tangency: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MalkinProfile {
    pub k: u32,
    pub period_min: f64,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub sup_norm: f64,
    /// Ascending in θ; filled by [`find_zeros`].
    pub zeros: Vec<ZeroRecord>,
}

impl MalkinProfile {
    pub fn index_sum(&self) -> i32 {
        self.zeros.iter().map(|z| z.index as i32).sum()
    }
}

/// `M(θ)` for one system, cycle and adjoint.
pub struct MalkinEvaluator<'a> {
    sys: &'a SystemDef,
    cycle: &'a LimitCycle,
    adjoint: &'a AdjointOrbit,
    k: u32,
    cfg: IntegratorConfig,
}

impl<'a> MalkinEvaluator<'a> {
    /// Fails unless the forcing period equals `k T*` to 1e-6 relative.
    pub fn new(
        sys: &'a SystemDef,
        cycle: &'a LimitCycle,
        adjoint: &'a AdjointOrbit,
        k: u32,
        cfg: &IntegratorConfig,
    ) -> Result<Self, MalkinError> {
        if k == 0 {
            return Err(MalkinError::Config("k must be a positive integer".into()));
        }
        let period = k as f64 * cycle.period;
        if (sys.forcing_period() - period).abs() > 1e-6 * period {
            return Err(MalkinError::PeriodMismatch { forcing: sys.forcing_period(), k, period_min: cycle.period });
        }
        Ok(MalkinEvaluator { sys, cycle, adjoint, k, cfg: cfg.clone() })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn period_min(&self) -> f64 {
        self.cycle.period
    }

    pub fn eval(&self, theta: f64) -> Result<f64, MalkinError> {
        let n = self.sys.dimension();
        let field = self.sys.field();
        let mut x = vec![0.0; n];
        let mut z = vec![0.0; n];
        let mut g = vec![0.0; n];
        let integrand = |t: f64, _: &[f64]| -> Result<f64, EvalError> {
            self.cycle.state_into(t + theta, &mut x);
            self.adjoint.state_into(t + theta, &mut z);
            field.g(t, &x, 0.0, &mut g)?;
            Ok(g.iter().zip(&z).map(|(a, b)| a * b).sum())
        };
        let no_state = |_: f64, _: &[f64], _: &mut [f64]| Ok(());
        let period = self.k as f64 * self.cycle.period;
        integrate_with_quadrature(no_state, integrand, 0.0, &[], period, &self.cfg)
            .map(|r| r.quadrature)
            .map_err(|source| MalkinError::Quadrature { theta, source })
    }
}

/// Samples `M` on a uniform grid over `[0, T*)`, in parallel. Zeros are left
/// empty; see [`find_zeros`].
pub fn malkin_function(evaluator: &MalkinEvaluator<'_>, config: &MalkinConfig) -> Result<MalkinProfile, MalkinError> {
    config.validate()?;
    let t_star = evaluator.period_min();
    let n = config.grid_size;
    let grid: Vec<f64> = (0..n).map(|j| t_star * j as f64 / n as f64).collect();
    let values = grid.par_iter().map(|&th| evaluator.eval(th)).collect::<Result<Vec<f64>, _>>()?;
    let sup_norm = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(MalkinProfile { k: evaluator.k(), period_min: t_star, grid, values, sup_norm, zeros: Vec::new() })
}

/// `2π Re[(â₁ e^{-iθ} + b̂₀ + ĉ₂ e^{-2iθ})(1 - i)]`, the bifurcation function
/// of the built-in planar example for `k = 1`.
pub fn closed_form_m_example(a1: Complex64, b0: Complex64, c2: Complex64, theta: f64) -> f64 {
    let w = a1 * Complex64::from_polar(1.0, -theta) + b0 + c2 * Complex64::from_polar(1.0, -2.0 * theta);
    2.0 * PI * (w * Complex64::new(1.0, -1.0)).re
}

/// `(1/N) Σ f_j e^{-i m 2π j / N}` for uniform samples over one period.
pub fn fourier_coefficient(samples: &[Complex64], m: i32) -> Result<Complex64, MalkinError> {
    let needed = 4 * m.unsigned_abs() as usize + 4;
    if samples.len() < needed {
        return Err(MalkinError::TooFewSamples { count: samples.len(), m, needed });
    }
    let n = samples.len() as f64;
    let sum: Complex64 = samples
        .iter()
        .enumerate()
        .map(|(j, f)| f * Complex64::from_polar(1.0, -2.0 * PI * m as f64 * j as f64 / n))
        .sum();
    Ok(sum / n)
}

const FIT_HALF_WIDTH: usize = 16;
const FIT_POINTS: usize = 21;
const FIT_DEGREE: usize = 5;

/// Least-squares polynomial in `s = (θ - center) / w` over `s ∈ [-1, 1]`.
fn local_fit<F>(m: &F, center: f64, w: f64) -> Result<Vec<f64>, MalkinError>
where
    F: Fn(f64) -> Result<f64, MalkinError>,
{
    let s: Vec<f64> = (0..FIT_POINTS).map(|i| -1.0 + 2.0 * i as f64 / (FIT_POINTS - 1) as f64).collect();
    let vander = DMatrix::from_fn(FIT_POINTS, FIT_DEGREE + 1, |i, j| s[i].powi(j as i32));
    let rhs = DVector::from_iterator(FIT_POINTS, s.iter().map(|&si| m(center + w * si)).collect::<Result<Vec<_>, _>>()?);
    let coeffs = vander.svd(true, true).solve(&rhs, 1e-14).map_err(|e| MalkinError::Config(e.to_string()))?;
    Ok(coeffs.iter().copied().collect())
}

fn multiplicity_of(coeffs: &[f64], flat_tol: f64) -> Multiplicity {
    let scale = coeffs[1..].iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale <= flat_tol {
        return Multiplicity::Flat;
    }
    let j = (1..coeffs.len()).find(|&j| coeffs[j].abs() >= 0.05 * scale).unwrap_or(1);
    Multiplicity::Order(j as u32)
}

/// Root near 0 of the `d`-th derivative of the polynomial, by Newton.
fn derivative_root(coeffs: &[f64], d: usize) -> Option<f64> {
    let deriv = |c: &[f64]| -> Vec<f64> { (1..c.len()).map(|j| j as f64 * c[j]).collect() };
    let mut p = coeffs.to_vec();
    for _ in 0..d {
        p = deriv(&p);
    }
    let dp = deriv(&p);
    let horner = |c: &[f64], s: f64| c.iter().rev().fold(0.0, |acc, v| acc * s + v);
    let mut s = 0.0;
    for _ in 0..50 {
        let slope = horner(&dp, s);
        if slope == 0.0 {
            return None;
        }
        let step = horner(&p, s) / slope;
        s -= step;
        if !s.is_finite() || s.abs() > 0.5 {
            return None;
        }
        if step.abs() < 1e-15 {
            break;
        }
    }
    Some(s)
}

fn bisect<F>(m: &F, mut a: f64, mut b: f64, mut fa: f64, tol: f64) -> Result<f64, MalkinError>
where
    F: Fn(f64) -> Result<f64, MalkinError>,
{
    while b - a > tol {
        let c = 0.5 * (a + b);
        if c <= a || c >= b {
            break;
        }
        let fc = m(c)?;
        if fc == 0.0 {
            return Ok(c);
        }
        if (fc > 0.0) == (fa > 0.0) {
            a = c;
            fa = fc;
        } else {
            b = c;
        }
    }
    Ok(0.5 * (a + b))
}

fn golden_min<F>(m: &F, mut a: f64, mut b: f64, tol: f64) -> Result<f64, MalkinError>
where
    F: Fn(f64) -> Result<f64, MalkinError>,
{
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = m(c)?.abs();
    let mut fd = m(d)?.abs();
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = m(c)?.abs();
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = m(d)?.abs();
        }
    }
    Ok(0.5 * (a + b))
}

/// Locates and classifies the zeros of `M` over one minimal period.
///
/// Sign changes between neighbouring samples (with wrap-around) are refined
/// by bisection; local minima of `|M|` without a sign change are refined by
/// golden-section search and kept as index-0 zeros when `|M| ≤ flat_tol`.
/// For zeros of estimated multiplicity `m ≥ 2` the location is re-centred on
/// the root of the `(m-1)`-th derivative of the local fit, which is far less
/// sensitive to quadrature error than the root of `M` itself.
pub fn find_zeros<F>(mut profile: MalkinProfile, m: F, config: &MalkinConfig) -> Result<MalkinProfile, MalkinError>
where
    F: Fn(f64) -> Result<f64, MalkinError>,
{
    config.validate_refinement()?;
    if profile.sup_norm < ZERO_FLOOR {
        return Err(MalkinError::IdenticallyZero { sup_norm: profile.sup_norm });
    }
    let t_star = profile.period_min;
    let v = &profile.values;
    let n = v.len();
    let h = t_star / n as f64;
    let flat_tol = config.flat_tol.unwrap_or(1e-9 * profile.sup_norm);
    let sign = |x: f64| -> i8 {
        if x > 0.0 {
            1
        } else if x < 0.0 {
            -1
        } else {
            0
        }
    };
    let at = |j: isize| v[j.rem_euclid(n as isize) as usize];
    let theta_of = |j: usize| profile.grid.get(j).copied().unwrap_or(t_star);

    // (theta, index, tangency)
    let mut raw: Vec<(f64, i8, bool)> = Vec::new();
    for j in 0..n {
        let (a, b) = (v[j], at(j as isize + 1));
        if a == 0.0 {
            if at(j as isize - 1) == 0.0 {
                continue;
            }
            let prev = (1..n as isize).map(|d| at(j as isize - d)).find(|x| *x != 0.0).unwrap_or(0.0);
            let next = (1..n as isize).map(|d| at(j as isize + d)).find(|x| *x != 0.0).unwrap_or(0.0);
            let index = match (sign(prev), sign(next)) {
                (-1, 1) => 1,
                (1, -1) => -1,
                _ => 0,
            };
            raw.push((theta_of(j), index, index == 0));
            continue;
        }
        if sign(a) * sign(b) < 0 {
            let theta = bisect(&m, theta_of(j), theta_of(j) + h, a, config.refine_tol)?;
            raw.push((theta, if a < 0.0 { 1 } else { -1 }, false));
            continue;
        }
        let (p, q) = (at(j as isize - 1), b);
        let no_change = sign(p) == sign(a) && sign(a) == sign(q);
        if no_change && a.abs() <= p.abs() && a.abs() < q.abs() {
            // Parabola through the three samples bounds how low |M| may dip.
            let curv = p - 2.0 * a + q;
            let dip = if curv != 0.0 { a - (q - p).powi(2) / (8.0 * curv) } else { a };
            if sign(dip) != sign(a) || dip.abs() <= 1e-3 * profile.sup_norm {
                let lo = theta_of(j) - h;
                let theta = golden_min(&m, lo, lo + 2.0 * h, config.refine_tol)?;
                let val = m(theta)?;
                if val.abs() <= flat_tol {
                    raw.push((theta, 0, true));
                }
            }
        }
    }

    let w = FIT_HALF_WIDTH as f64 * h;
    let mut zeros = Vec::with_capacity(raw.len());
    for (mut theta, index, tangency) in raw {
        let mut coeffs = local_fit(&m, theta, w)?;
        let mut mult = multiplicity_of(&coeffs, flat_tol);
        if let Multiplicity::Order(order) = mult {
            if order >= 2 {
                for _ in 0..2 {
                    let Some(s) = derivative_root(&coeffs, order as usize - 1) else { break };
                    theta += w * s;
                    coeffs = local_fit(&m, theta, w)?;
                }
                mult = multiplicity_of(&coeffs, flat_tol);
            }
        }
        let refinement_residual = m(theta)?.abs();
        let mut theta_star = theta.rem_euclid(t_star);
        if t_star - theta_star <= config.refine_tol {
            theta_star = 0.0;
        }
        zeros.push(ZeroRecord {
            theta_star,
            index,
            multiplicity_estimate: mult,
            refinement_residual,
            tangency,
        });
    }
    zeros.sort_by(|a, b| a.theta_star.total_cmp(&b.theta_star));
    profile.zeros = zeros;
    Ok(profile)
}

impl MalkinConfig {
    fn validate_refinement(&self) -> Result<(), MalkinError> {
        if !(self.refine_tol > 0.0) {
            return Err(MalkinError::Config(format!("refine_tol must be positive, got {}", self.refine_tol)));
        }
        Ok(())
    }
}

/// Grid sampling followed by zero classification.
pub fn analyze(evaluator: &MalkinEvaluator<'_>, config: &MalkinConfig) -> Result<MalkinProfile, MalkinError> {
    let profile = malkin_function(evaluator, config)?;
    find_zeros(profile, |th| evaluator.eval(th), config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Claim {
    Stable,
    Unstable,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub theta_star: f64,
    pub claim: Claim,
    pub index: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Predictions {
    pub items: Vec<Prediction>,
    /// No zeros and `M ≢ 0`: no forced periodic solutions near the cycle.
    pub none_nearby: bool,
}

/// Stability claims read off the zero indices: +1 stable, −1 unstable,
/// 0 inconclusive.
pub fn predict(profile: &MalkinProfile) -> Predictions {
    let items = profile
        .zeros
        .iter()
        .map(|z| Prediction {
            theta_star: z.theta_star,
            claim: match z.index {
                1 => Claim::Stable,
                -1 => Claim::Unstable,
                _ => Claim::Inconclusive,
            },
            index: z.index,
        })
        .collect();
    Predictions { items, none_nearby: profile.zeros.is_empty() && profile.sup_norm >= ZERO_FLOOR }
}
