//! Direct verification at small `eps`: the stroboscopic map of the forced
//! system, its fixed points, their stability and index, and the comparison
//! with the phases predicted by the zeros of `M`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::cycle::LimitCycle;
use crate::linalg::{eigenvalues_by_modulus, solve_truncated};
use crate::malkin::{predict, Claim, MalkinProfile, Multiplicity};
use crate::odeint::{flow_with_sensitivity, IntegratorConfig, OdeError};
use crate::sysdef::SystemDef;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForcedError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("point has dimension {got}, system has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("integration of the forced system failed: {0}")]
    Integration(#[from] OdeError),
    #[error("Newton did not converge in {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("Newton matrix I - DP is singular (condition estimate {condition:.3e})")]
    Singular { condition: f64 },
}

/// The stroboscopic map `ζ ↦ x(T; ζ, eps)` started at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoincareSpec {
    pub eps: f64,
    pub period: f64,
}

impl PoincareSpec {
    /// Map over one forcing period of `sys`.
    pub fn forcing(sys: &SystemDef, eps: f64) -> Result<Self, ForcedError> {
        let spec = PoincareSpec { eps, period: sys.forcing_period() };
        spec.validate(sys)?;
        Ok(spec)
    }

    /// `period` must be a positive integer multiple of the forcing period.
    pub fn validate(&self, sys: &SystemDef) -> Result<(), ForcedError> {
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(ForcedError::Config(format!("eps must be >= 0, got {}", self.eps)));
        }
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(ForcedError::Config(format!("period must be positive, got {}", self.period)));
        }
        let ratio = self.period / sys.forcing_period();
        if ratio.round() < 1.0 || (ratio - ratio.round()).abs() > 1e-6 * ratio {
            return Err(ForcedError::Config(format!(
                "period {} is not a multiple of the forcing period {}",
                self.period,
                sys.forcing_period()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoincareImage {
    pub image: Vec<f64>,
    pub derivative: DMatrix<f64>,
}

pub fn poincare(
    sys: &SystemDef,
    spec: &PoincareSpec,
    zeta: &[f64],
    cfg: &IntegratorConfig,
) -> Result<PoincareImage, ForcedError> {
    if zeta.len() != sys.dimension() {
        return Err(ForcedError::Dimension { expected: sys.dimension(), got: zeta.len() });
    }
    let flow = flow_with_sensitivity(sys, spec.eps, 0.0, zeta, spec.period, cfg)?;
    Ok(PoincareImage { image: flow.endpoint, derivative: flow.sensitivity })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    AsymptoticallyStable,
    Unstable,
    Borderline,
}

impl fmt::Display for Stability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stability::AsymptoticallyStable => "asymptotically_stable",
            Stability::Unstable => "unstable",
            Stability::Borderline => "borderline",
        })
    }
}

/// Fixed-point index: `sign det(I - DP)`, or degenerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaT {
    Value(i8),
    Degenerate,
}

impl GammaT {
    pub fn value(self) -> Option<i8> {
        match self {
            GammaT::Value(v) => Some(v),
            GammaT::Degenerate => None,
        }
    }
}

impl fmt::Display for GammaT {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GammaT::Value(v) => write!(f, "{v}"),
            GammaT::Degenerate => f.write_str("degenerate"),
        }
    }
}

impl Serialize for GammaT {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            GammaT::Value(v) => s.serialize_i8(*v),
            GammaT::Degenerate => s.serialize_str("degenerate"),
        }
    }
}

/// Sign of `∏(1 - μᵢ)`; degenerate if some `|1 - μᵢ| < 1e-8`.
pub fn fixed_point_index(multipliers: &[Complex64]) -> GammaT {
    if multipliers.iter().any(|m| (1.0 - m).norm() < 1e-8) {
        return GammaT::Degenerate;
    }
    let det: Complex64 = multipliers.iter().map(|m| 1.0 - m).product();
    if det.re > 0.0 {
        GammaT::Value(1)
    } else if det.re < 0.0 {
        GammaT::Value(-1)
    } else {
        GammaT::Value(0)
    }
}

pub fn classify_stability(multipliers: &[Complex64], margin: f64) -> Stability {
    if multipliers.iter().all(|m| m.norm() < 1.0 - margin) {
        Stability::AsymptoticallyStable
    } else if multipliers.iter().any(|m| m.norm() > 1.0 + margin) {
        Stability::Unstable
    } else {
        Stability::Borderline
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NearestPhase {
    pub theta: f64,
    pub distance: f64,
}

/// Phase `θ` minimizing `|ζ - x0(θ)|`.
pub fn nearest_phase(cycle: &LimitCycle, zeta: &[f64]) -> NearestPhase {
    let t = cycle.period;
    let mut x = vec![0.0; zeta.len()];
    let mut dist = |th: f64| {
        cycle.state_into(th, &mut x);
        x.iter().zip(zeta).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    };
    const SAMPLES: usize = 512;
    let h = t / SAMPLES as f64;
    let (mut best, mut best_d) = (0.0, f64::INFINITY);
    for j in 0..SAMPLES {
        let th = j as f64 * h;
        let d = dist(th);
        if d < best_d {
            best = th;
            best_d = d;
        }
    }
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (best - h, best + h);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (dist(c), dist(d));
    while b - a > 1e-12 * t {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = dist(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = dist(d);
        }
    }
    let theta = 0.5 * (a + b);
    let distance = dist(theta);
    if distance <= best_d {
        NearestPhase { theta: theta.rem_euclid(t), distance }
    } else {
        NearestPhase { theta: best, distance: best_d }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonConfig {
    pub max_iter: usize,
    /// Required `|P(ζ) - ζ|`.
    pub fp_tol: f64,
    pub hyperbolicity_margin: f64,
    /// Largest Newton step length.
    pub max_step: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig { max_iter: 40, fp_tol: 1e-10, hyperbolicity_margin: 1e-4, max_step: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointRecord {
    pub zeta: Vec<f64>,
    pub residual: f64,
    pub multipliers: Vec<Complex64>,
    pub moduli: Vec<f64>,
    pub stability: Stability,
    pub gamma_t: GammaT,
    pub nearest_theta: Option<NearestPhase>,
    pub iterations: usize,
}

fn residual_of(zeta: &DVector<f64>, image: &[f64]) -> DVector<f64> {
    zeta - DVector::from_column_slice(image)
}

const STALL_WINDOW: usize = 8;

/// Damped Newton on `ζ - P(ζ) = 0`. Steps are capped at `max_step` and
/// halved until the residual decreases; a run whose residual has not halved
/// over the last eight iterations is abandoned.
pub fn newton_fixed_point(
    sys: &SystemDef,
    spec: &PoincareSpec,
    start: &[f64],
    newton: &NewtonConfig,
    cfg: &IntegratorConfig,
    cycle: Option<&LimitCycle>,
) -> Result<FixedPointRecord, ForcedError> {
    let n = sys.dimension();
    if start.len() != n {
        return Err(ForcedError::Dimension { expected: n, got: start.len() });
    }
    if start.iter().any(|v| !v.is_finite()) {
        return Err(ForcedError::Config("start point is not finite".into()));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let mut zeta = DVector::from_column_slice(start);
    let mut p = poincare(sys, spec, zeta.as_slice(), cfg)?;
    let mut f = residual_of(&zeta, &p.image);
    let mut history = Vec::with_capacity(newton.max_iter + 1);
    for iter in 0..=newton.max_iter {
        let res = f.norm();
        history.push(res);
        if res <= newton.fp_tol {
            let multipliers = eigenvalues_by_modulus(&p.derivative);
            let near_one = multipliers.iter().any(|m| (1.0 - m).norm() < newton.hyperbolicity_margin);
            let gamma_t = if near_one { GammaT::Degenerate } else { fixed_point_index(&multipliers) };
            return Ok(FixedPointRecord {
                moduli: multipliers.iter().map(|m| m.norm()).collect(),
                stability: classify_stability(&multipliers, newton.hyperbolicity_margin),
                gamma_t,
                nearest_theta: cycle.map(|c| nearest_phase(c, zeta.as_slice())),
                zeta: zeta.iter().copied().collect(),
                residual: res,
                multipliers,
                iterations: iter,
            });
        }
        if iter == newton.max_iter {
            break;
        }
        // Creeping along a curved valley far from any root: give up early.
        if iter >= STALL_WINDOW && res > 0.5 * history[iter - STALL_WINDOW] {
            return Err(ForcedError::NonConvergence { iterations: iter, residual: res });
        }
        let jac = &eye - &p.derivative;
        let (mut delta, condition) = solve_truncated(&jac, &(-&f), 1e-8);
        if !(condition < 1e14) || delta.iter().any(|v| !v.is_finite()) {
            return Err(ForcedError::Singular { condition });
        }
        let len = delta.norm();
        if len > newton.max_step {
            delta *= newton.max_step / len;
        }
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let trial = &zeta + &delta * lambda;
            if let Ok(pt) = poincare(sys, spec, trial.as_slice(), cfg) {
                let ft = residual_of(&trial, &pt.image);
                if ft.norm() < res {
                    zeta = trial;
                    p = pt;
                    f = ft;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(ForcedError::NonConvergence { iterations: iter + 1, residual: res });
        }
    }
    Err(ForcedError::NonConvergence { iterations: newton.max_iter, residual: f.norm() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Region {
    /// `inner < |x| < outer`.
    Annulus { inner: f64, outer: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl Region {
    pub fn validate(&self, n: usize) -> Result<(), ForcedError> {
        match self {
            Region::Annulus { inner, outer } => {
                if !(*inner >= 0.0 && outer > inner && outer.is_finite()) {
                    return Err(ForcedError::Config(format!("annulus needs 0 <= inner < outer, got {inner}, {outer}")));
                }
            }
            Region::Box { lower, upper } => {
                if lower.len() != n || upper.len() != n {
                    return Err(ForcedError::Config(format!("box bounds must have dimension {n}")));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l < u && l.is_finite() && u.is_finite())) {
                    return Err(ForcedError::Config("box needs lower < upper in every coordinate".into()));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Region::Annulus { inner, outer } => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                *inner < r && r < *outer
            }
            Region::Box { lower, upper } => x.iter().zip(lower.iter().zip(upper)).all(|(v, (l, u))| l < v && v < u),
        }
    }

    fn bounds(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        match self {
            Region::Annulus { outer, .. } => (vec![-outer; n], vec![*outer; n]),
            Region::Box { lower, upper } => (lower.clone(), upper.clone()),
        }
    }

    /// Cell centres of a `density^n` grid over the bounding box that fall
    /// inside the region; with a nonzero seed each centre is jittered
    /// within its cell.
    pub fn start_points(&self, n: usize, density: usize, seed: u64) -> Vec<Vec<f64>> {
        let (lo, hi) = self.bounds(n);
        let cell: Vec<f64> = lo.iter().zip(&hi).map(|(l, u)| (u - l) / density as f64).collect();
        let mut rng = (seed != 0).then(|| ChaCha8Rng::seed_from_u64(seed));
        let total = density.pow(n as u32);
        let mut out = Vec::new();
        for idx in 0..total {
            let mut rem = idx;
            let mut x = vec![0.0; n];
            for i in 0..n {
                let k = rem % density;
                rem /= density;
                let jitter = rng.as_mut().map_or(0.0, |r| r.gen_range(-0.25..0.25));
                x[i] = lo[i] + (k as f64 + 0.5 + jitter) * cell[i];
            }
            if self.contains(&x) {
                out.push(x);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultistartConfig {
    /// Grid points per coordinate.
    pub density: usize,
    /// 0 disables jitter.
    pub seed: u64,
    pub dedup_radius: f64,
}

impl Default for MultistartConfig {
    fn default() -> Self {
        MultistartConfig { density: 32, seed: 0, dedup_radius: 1e-6 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FailureTally {
    pub non_convergence: usize,
    pub singular: usize,
    pub integration: usize,
    pub other: usize,
}

impl FailureTally {
    pub fn total(&self) -> usize {
        self.non_convergence + self.singular + self.integration + self.other
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultistartResult {
    pub starts: usize,
    /// Distinct fixed points inside the region, in order of first discovery.
    pub inside: Vec<FixedPointRecord>,
    /// Distinct converged points outside the region.
    pub outside: Vec<FixedPointRecord>,
    pub failures: FailureTally,
}

fn dedup_push(list: &mut Vec<FixedPointRecord>, rec: FixedPointRecord, radius: f64) {
    let dup = list.iter().any(|r| r.zeta.iter().zip(&rec.zeta).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() < radius);
    if !dup {
        list.push(rec);
    }
}

/// Multistart Newton over a grid of the region.
pub fn find_all_fixed_points(
    sys: &SystemDef,
    spec: &PoincareSpec,
    region: &Region,
    multistart: &MultistartConfig,
    newton: &NewtonConfig,
    cfg: &IntegratorConfig,
    cycle: Option<&LimitCycle>,
) -> Result<MultistartResult, ForcedError> {
    let n = sys.dimension();
    region.validate(n)?;
    spec.validate(sys)?;
    if multistart.density == 0 {
        return Err(ForcedError::Config("grid density must be positive".into()));
    }
    let starts = region.start_points(n, multistart.density, multistart.seed);
    let results: Vec<_> =
        starts.par_iter().map(|s| newton_fixed_point(sys, spec, s, newton, cfg, cycle)).collect();
    let mut out = MultistartResult {
        starts: starts.len(),
        inside: Vec::new(),
        outside: Vec::new(),
        failures: FailureTally::default(),
    };
    for r in results {
        match r {
            Ok(rec) => {
                if region.contains(&rec.zeta) {
                    dedup_push(&mut out.inside, rec, multistart.dedup_radius);
                } else {
                    dedup_push(&mut out.outside, rec, multistart.dedup_radius);
                }
            }
            Err(ForcedError::NonConvergence { .. }) => out.failures.non_convergence += 1,
            Err(ForcedError::Singular { .. }) => out.failures.singular += 1,
            Err(ForcedError::Integration(_)) => out.failures.integration += 1,
            Err(_) => out.failures.other += 1,
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub eps_list: Vec<f64>,
    /// Distance below which a fixed point is attributed to a predicted
    /// phase; `10 eps + 1e-4` when absent.
    pub match_radius: Option<f64>,
    pub multistart: MultistartConfig,
    pub newton: NewtonConfig,
    /// Turn the index-based stability rule into a failing assertion.
    pub strict_theorem_rule: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            eps_list: vec![0.04, 0.02, 0.01, 0.005],
            match_radius: None,
            multistart: MultistartConfig::default(),
            newton: NewtonConfig::default(),
            strict_theorem_rule: false,
        }
    }
}

impl SweepConfig {
    pub fn match_radius_for(&self, eps: f64) -> f64 {
        self.match_radius.unwrap_or(10.0 * eps + 1e-4)
    }

    pub fn validate(&self) -> Result<(), ForcedError> {
        if self.eps_list.is_empty() {
            return Err(ForcedError::Config("eps_list must not be empty".into()));
        }
        if self.eps_list.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(ForcedError::Config("eps values must be positive".into()));
        }
        if self.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(ForcedError::Config("eps_list must be strictly descending".into()));
        }
        if let Some(r) = self.match_radius {
            if !(r > 0.0) {
                return Err(ForcedError::Config(format!("match_radius must be positive, got {r}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchRow {
    pub theta_star: f64,
    pub index: i8,
    pub multiplicity: Multiplicity,
    pub predicted: Claim,
    pub zeta: Vec<f64>,
    pub distance: f64,
    pub measured: Stability,
    pub gamma_t: GammaT,
    /// Measured stability equals the index-based claim.
    pub stability_agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsResult {
    pub eps: f64,
    pub match_radius: f64,
    pub starts: usize,
    pub failures: FailureTally,
    pub fixed_points: Vec<FixedPointRecord>,
    pub outside_region: Vec<FixedPointRecord>,
    pub matches: Vec<MatchRow>,
    /// Phases of predictions with no fixed point within the match radius.
    pub unmatched_predictions: Vec<f64>,
    /// Indices into `fixed_points` not attributed to any prediction.
    pub unexplained: Vec<usize>,
    pub gamma_sum: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub theta_star: f64,
    pub index: i8,
    pub multiplicity: Multiplicity,
    /// `(eps, distance)` for every eps with a match.
    pub distances: Vec<(f64, f64)>,
    /// Least-squares slope of `ln distance` against `ln eps`.
    pub slope: Option<f64>,
}

/// Which of the two textual stability rules the measurements satisfy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignAudit {
    /// Matched hyperbolic fixed points that entered the audit.
    pub samples: usize,
    /// Stable iff index(M, θ*) = +1.
    pub index_rule_holds: bool,
    /// Stable iff γ_T = +1.
    pub gamma_rule_holds: bool,
    /// γ_T = −index(M, θ*).
    pub gamma_equals_minus_index: bool,
    pub statement: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub eps_list: Vec<f64>,
    pub per_eps: Vec<EpsResult>,
    pub convergence: Vec<ConvergenceRow>,
    pub audit: SignAudit,
    pub assertions: Vec<Assertion>,
    pub passed: bool,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Least-squares slope of `y` against `x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        points.iter().filter(|(e, d)| *e > 0.0 && *d > 0.0).map(|(e, d)| (e.ln(), d.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn claim_matches(claim: Claim, measured: Stability) -> bool {
    matches!(
        (claim, measured),
        (Claim::Stable, Stability::AsymptoticallyStable) | (Claim::Unstable, Stability::Unstable)
    )
}

/// Runs the multistart search at every `eps` and compares the fixed points
/// with the zeros of `M`.
pub fn sweep_verify(
    sys: &SystemDef,
    cycle: &LimitCycle,
    profile: &MalkinProfile,
    region: &Region,
    sweep: &SweepConfig,
    cfg: &IntegratorConfig,
) -> Result<SweepReport, ForcedError> {
    sweep.validate()?;
    let predictions = predict(profile);
    let targets: Vec<Vec<f64>> = profile.zeros.iter().map(|z| cycle.state_at(z.theta_star)).collect();

    let mut per_eps = Vec::with_capacity(sweep.eps_list.len());
    for &eps in &sweep.eps_list {
        let spec = PoincareSpec::forcing(sys, eps)?;
        let found = find_all_fixed_points(sys, &spec, region, &sweep.multistart, &sweep.newton, cfg, Some(cycle))?;
        let radius = sweep.match_radius_for(eps);
        let mut matches = Vec::new();
        let mut unexplained = Vec::new();
        let mut matched_zero = vec![false; targets.len()];
        for (i, fp) in found.inside.iter().enumerate() {
            let nearest = targets
                .iter()
                .enumerate()
                .map(|(j, x)| (j, distance(&fp.zeta, x)))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match nearest {
                Some((j, d)) if d < radius => {
                    matched_zero[j] = true;
                    let zero = &profile.zeros[j];
                    let claim = predictions.items[j].claim;
                    matches.push(MatchRow {
                        theta_star: zero.theta_star,
                        index: zero.index,
                        multiplicity: zero.multiplicity_estimate,
                        predicted: claim,
                        zeta: fp.zeta.clone(),
                        distance: d,
                        measured: fp.stability,
                        gamma_t: fp.gamma_t,
                        stability_agrees: claim_matches(claim, fp.stability),
                    });
                }
                _ => unexplained.push(i),
            }
        }
        let unmatched_predictions = profile
            .zeros
            .iter()
            .zip(&matched_zero)
            .filter(|(z, m)| z.index != 0 && !**m)
            .map(|(z, _)| z.theta_star)
            .collect();
        let gamma_sum = found.inside.iter().filter_map(|fp| fp.gamma_t.value()).map(i32::from).sum();
        per_eps.push(EpsResult {
            eps,
            match_radius: radius,
            starts: found.starts,
            failures: found.failures,
            fixed_points: found.inside,
            outside_region: found.outside,
            matches,
            unmatched_predictions,
            unexplained,
            gamma_sum,
        });
    }

    let convergence: Vec<ConvergenceRow> = profile
        .zeros
        .iter()
        .map(|z| {
            let distances: Vec<(f64, f64)> = per_eps
                .iter()
                .filter_map(|r| {
                    r.matches
                        .iter()
                        .filter(|m| m.theta_star == z.theta_star)
                        .map(|m| m.distance)
                        .min_by(f64::total_cmp)
                        .map(|d| (r.eps, d))
                })
                .collect();
            ConvergenceRow {
                theta_star: z.theta_star,
                index: z.index,
                multiplicity: z.multiplicity_estimate,
                slope: loglog_slope(&distances),
                distances,
            }
        })
        .collect();

    let audit = sign_audit(&per_eps);
    let assertions = build_assertions(profile, &per_eps, &convergence, &audit, sweep);
    let passed = assertions.iter().all(|a| a.passed);
    Ok(SweepReport { eps_list: sweep.eps_list.clone(), per_eps, convergence, audit, assertions, passed })
}

fn sign_audit(per_eps: &[EpsResult]) -> SignAudit {
    let rows: Vec<&MatchRow> = per_eps
        .iter()
        .flat_map(|r| &r.matches)
        .filter(|m| m.index != 0 && m.gamma_t.value().is_some() && m.measured != Stability::Borderline)
        .collect();
    let stable = |m: &MatchRow| m.measured == Stability::AsymptoticallyStable;
    let index_rule_holds = !rows.is_empty() && rows.iter().all(|m| stable(m) == (m.index == 1));
    let gamma_rule_holds = !rows.is_empty() && rows.iter().all(|m| stable(m) == (m.gamma_t == GammaT::Value(1)));
    let gamma_equals_minus_index =
        !rows.is_empty() && rows.iter().all(|m| m.gamma_t.value() == Some(-m.index));
    let verdict = |ok: bool| if ok { "holds" } else { "fails" };
    let statement = if rows.is_empty() {
        "no matched hyperbolic fixed points; neither stability rule could be tested".to_string()
    } else {
        format!(
            "over {} matched hyperbolic fixed points: 'stable iff index(M, theta*) = +1' {}; 'stable iff gamma_T = +1' {}; 'gamma_T = -index(M, theta*)' {}",
            rows.len(),
            verdict(index_rule_holds),
            verdict(gamma_rule_holds),
            verdict(gamma_equals_minus_index)
        )
    };
    SignAudit { samples: rows.len(), index_rule_holds, gamma_rule_holds, gamma_equals_minus_index, statement }
}

fn build_assertions(
    profile: &MalkinProfile,
    per_eps: &[EpsResult],
    convergence: &[ConvergenceRow],
    audit: &SignAudit,
    sweep: &SweepConfig,
) -> Vec<Assertion> {
    let mut out = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        out.push(Assertion { name: name.to_string(), passed, detail });
    };

    if profile.zeros.is_empty() {
        let counts: Vec<usize> = per_eps.iter().map(|r| r.fixed_points.len()).collect();
        push(
            "no_fixed_points_without_zeros",
            counts.iter().all(|&c| c == 0),
            format!("fixed points in region per eps: {counts:?}"),
        );
        return out;
    }

    let missing: Vec<String> = per_eps
        .iter()
        .filter(|r| !r.unmatched_predictions.is_empty())
        .map(|r| format!("eps {}: {:?}", r.eps, r.unmatched_predictions))
        .collect();
    push(
        "all_predictions_matched",
        missing.is_empty(),
        if missing.is_empty() { "every nonzero-index zero matched at every eps".into() } else { missing.join("; ") },
    );

    let extra: Vec<String> = per_eps
        .iter()
        .filter(|r| !r.unexplained.is_empty())
        .map(|r| format!("eps {}: {} unexplained", r.eps, r.unexplained.len()))
        .collect();
    push(
        "all_fixed_points_explained",
        extra.is_empty(),
        if extra.is_empty() { "every fixed point in the region lies near a predicted phase".into() } else { extra.join("; ") },
    );

    let bad_gamma: Vec<String> = per_eps
        .iter()
        .flat_map(|r| r.matches.iter().map(move |m| (r.eps, m)))
        .filter(|(_, m)| m.multiplicity == Multiplicity::Order(1) && m.index != 0)
        .filter(|(_, m)| m.gamma_t.value() != Some(-m.index))
        .map(|(e, m)| format!("eps {e}, theta* {:.6}: gamma_T {} vs index {}", m.theta_star, m.gamma_t, m.index))
        .collect();
    push(
        "gamma_equals_minus_index",
        bad_gamma.is_empty(),
        if bad_gamma.is_empty() { "gamma_T = -index at every matched simple zero".into() } else { bad_gamma.join("; ") },
    );

    let expected_sum = -profile.index_sum();
    let sums: Vec<i32> = per_eps.iter().map(|r| r.gamma_sum).collect();
    push(
        "gamma_sum_equals_minus_index_sum",
        sums.iter().all(|&s| s == expected_sum),
        format!("gamma_T sums per eps {sums:?}, expected {expected_sum}"),
    );

    let mut slope_details = Vec::new();
    let mut slopes_ok = true;
    for row in convergence.iter().filter(|r| r.multiplicity == Multiplicity::Order(1) && r.index != 0) {
        match row.slope {
            Some(s) => {
                let ok = (s - 1.0).abs() <= 0.25;
                slopes_ok &= ok;
                slope_details.push(format!("theta* {:.6}: slope {s:.4}", row.theta_star));
            }
            None => {
                if per_eps.len() >= 2 {
                    slopes_ok = false;
                    slope_details.push(format!("theta* {:.6}: too few matches for a slope", row.theta_star));
                }
            }
        }
    }
    push("convergence_slope_near_one", slopes_ok, slope_details.join("; "));

    if sweep.strict_theorem_rule {
        let disagreements: Vec<String> = per_eps
            .iter()
            .flat_map(|r| r.matches.iter().map(move |m| (r.eps, m)))
            .filter(|(_, m)| m.index != 0 && !m.stability_agrees)
            .map(|(e, m)| format!("eps {e}, theta* {:.6}: predicted {:?}, measured {}", m.theta_star, m.predicted, m.measured))
            .collect();
        push(
            "stability_matches_index_rule",
            disagreements.is_empty() && audit.samples > 0,
            if disagreements.is_empty() { audit.statement.clone() } else { disagreements.join("; ") },
        );
    }
    out
}
