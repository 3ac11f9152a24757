use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use malkin_core::forced::SweepReport;
use malkin_core::malkin::MalkinProfile;

use crate::pipeline::Report;

pub fn write_all(dir: &Path, report: &Report, profile: &MalkinProfile) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let json = serde_json::to_string_pretty(report)?;
    fs::write(dir.join("report.json"), json + "\n").context("cannot write report.json")?;
    write_malkin(&dir.join("malkin.csv"), profile)?;
    if let Some(sweep) = &report.sweep {
        write_fixed_points(dir, sweep, report.system.dimension)?;
        write_convergence(&dir.join("convergence.csv"), sweep)?;
    }
    Ok(())
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))
}

fn write_malkin(path: &Path, profile: &MalkinProfile) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["theta", "M"])?;
    for (th, m) in profile.grid.iter().zip(&profile.values) {
        w.write_record([th.to_string(), m.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_fixed_points(dir: &Path, sweep: &SweepReport, n: usize) -> Result<()> {
    for run in &sweep.per_eps {
        let mut w = writer(&dir.join(format!("fixed_points_{}.csv", run.eps)))?;
        let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        header.extend(["residual", "moduli", "stability", "gamma_T"].map(String::from));
        w.write_record(&header)?;
        for fp in &run.fixed_points {
            let mut row: Vec<String> = fp.zeta.iter().map(f64::to_string).collect();
            row.push(fp.residual.to_string());
            row.push(fp.moduli.iter().map(f64::to_string).collect::<Vec<_>>().join(";"));
            row.push(fp.stability.to_string());
            row.push(fp.gamma_t.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn write_convergence(path: &Path, sweep: &SweepReport) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["theta_star", "index", "eps", "distance", "slope"])?;
    for row in &sweep.convergence {
        let slope = row.slope.map(|s| s.to_string()).unwrap_or_default();
        for (eps, d) in &row.distances {
            w.write_record([row.theta_star.to_string(), row.index.to_string(), eps.to_string(), d.to_string(), slope.clone()])?;
        }
    }
    w.flush()?;
    Ok(())
}
