use std::collections::BTreeMap;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use malkin_core::cycle::{adjoint_orbit, find_limit_cycle, FloquetReport, DEFAULT_FLOQUET_MARGIN};
use malkin_core::forced::{sweep_verify, Assertion, Region, SweepReport};
use malkin_core::malkin::{analyze, predict, MalkinEvaluator, MalkinProfile, Predictions, ZeroRecord};
use malkin_core::sysdef::SystemDef;
use num_complex::Complex64;
use serde::Serialize;

use crate::config::AnalysisConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Malkin,
    Full,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: AnalysisConfig,
    pub system: SystemSummary,
    pub cycle: CycleSummary,
    pub adjoint: AdjointSummary,
    pub malkin: MalkinSummary,
    pub region: Option<Region>,
    pub sweep: Option<SweepReport>,
    pub assertions: Vec<Assertion>,
    pub passed: bool,
    /// Wall-clock seconds per stage; the only nondeterministic block.
    pub timing: BTreeMap<&'static str, f64>,
}

#[derive(Debug, Serialize)]
pub struct SystemSummary {
    pub name: String,
    pub dimension: usize,
    pub forcing_period: f64,
    pub radius_bound: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct CycleSummary {
    pub anchor: Vec<f64>,
    pub period: f64,
    pub multipliers: Vec<Complex64>,
    pub floquet: FloquetReport,
    pub newton_iterations: usize,
    pub newton_residual: f64,
}

#[derive(Debug, Serialize)]
pub struct AdjointSummary {
    pub normalization_residual: f64,
    pub periodicity_gap: f64,
    pub conditioning: f64,
}

#[derive(Debug, Serialize)]
pub struct MalkinSummary {
    pub k: u32,
    pub period_min: f64,
    pub grid_size: usize,
    pub sup_norm: f64,
    pub index_sum: i32,
    pub zeros: Vec<ZeroRecord>,
    pub predictions: Predictions,
    pub note: Option<String>,
}

/// Everything a run produces; `profile` feeds `malkin.csv`.
pub struct Outcome {
    pub report: Report,
    pub profile: MalkinProfile,
}

pub fn run(cfg: &AnalysisConfig, stage: Stage) -> Result<Outcome> {
    let mut timing = BTreeMap::new();
    let sys = cfg.system.build().context("cannot build the system")?;
    let n = sys.dimension();

    let clock = Instant::now();
    let cycle = find_limit_cycle(&sys, &cfg.cycle, &cfg.integrator).context("limit cycle search failed")?;
    timing.insert("cycle", clock.elapsed().as_secs_f64());
    let floquet = cycle.check_floquet(DEFAULT_FLOQUET_MARGIN);

    let clock = Instant::now();
    let adjoint = adjoint_orbit(&sys, &cycle, &cfg.integrator).context("adjoint computation failed")?;
    timing.insert("adjoint", clock.elapsed().as_secs_f64());

    let clock = Instant::now();
    let evaluator = MalkinEvaluator::new(&sys, &cycle, &adjoint, cfg.k, &cfg.integrator)?;
    let profile = analyze(&evaluator, &cfg.malkin).context("Malkin function evaluation failed")?;
    timing.insert("malkin", clock.elapsed().as_secs_f64());
    let predictions = predict(&profile);
    let note = predictions.none_nearby.then(|| {
        "M nonvanishing: no forced periodic solutions bifurcate from the cycle".to_string()
    });

    let mut assertions = vec![Assertion {
        name: "floquet_hypothesis".into(),
        passed: floquet.holds,
        detail: floquet.details.join("; "),
    }];

    let (region, sweep) = match stage {
        Stage::Malkin => (None, None),
        Stage::Full => {
            let region = match &cfg.verify.region {
                Some(r) => r.clone(),
                None => default_region(&sys, &cycle)?,
            };
            region.validate(n).context("config error in `verify.region`")?;
            let clock = Instant::now();
            let sweep = sweep_verify(&sys, &cycle, &profile, &region, &cfg.sweep(), &cfg.integrator)
                .context("sweep verification failed")?;
            timing.insert("sweep", clock.elapsed().as_secs_f64());
            assertions.extend(sweep.assertions.iter().cloned());
            (Some(region), Some(sweep))
        }
    };
    let passed = assertions.iter().all(|a| a.passed);

    let report = Report {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: match stage {
            Stage::Malkin => "malkin",
            Stage::Full => "analyze",
        },
        config: cfg.clone(),
        system: SystemSummary {
            name: sys.name().to_string(),
            dimension: n,
            forcing_period: sys.forcing_period(),
            radius_bound: sys.radius_bound(),
        },
        cycle: CycleSummary {
            anchor: cycle.anchor.clone(),
            period: cycle.period,
            multipliers: cycle.multipliers.clone(),
            floquet,
            newton_iterations: cycle.newton_iterations,
            newton_residual: cycle.newton_residual,
        },
        adjoint: AdjointSummary {
            normalization_residual: adjoint.normalization_residual,
            periodicity_gap: adjoint.periodicity_gap,
            conditioning: adjoint.conditioning,
        },
        malkin: MalkinSummary {
            k: profile.k,
            period_min: profile.period_min,
            grid_size: profile.grid.len(),
            sup_norm: profile.sup_norm,
            index_sum: profile.index_sum(),
            zeros: profile.zeros.clone(),
            predictions,
            note,
        },
        region,
        sweep,
        assertions,
        passed,
        timing,
    };
    Ok(Outcome { report, profile })
}

/// Annulus from half the cycle's smallest radius out to the a-priori bound.
fn default_region(sys: &SystemDef, cycle: &malkin_core::cycle::LimitCycle) -> Result<Region> {
    let Some(outer) = sys.radius_bound() else {
        bail!("config error at `verify.region`: required because system `{}` has no radius bound", sys.name());
    };
    let samples = 256;
    let inner = (0..samples)
        .map(|i| {
            let x = cycle.state_at(cycle.period * i as f64 / samples as f64);
            x.iter().map(|v| v * v).sum::<f64>().sqrt()
        })
        .fold(f64::INFINITY, f64::min)
        / 2.0;
    Ok(Region::Annulus { inner, outer })
}
