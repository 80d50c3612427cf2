//! Single operations behind the `simulate`, `fixpoint` and `floquet`
//! subcommands.

use rdlab::floquet::{fixed_point_census, newton_fixed_point_with, FixedPointOptions};
use rdlab::stepper::evolve;
use serde_json::{json, Value};

use crate::error::CliResult;
use crate::plot::{PlotKind, Table};
use crate::scenario::Scenario;

/// Evolves the first random seed of the scenario for `periods` periods.
pub fn simulate(sc: &Scenario, periods: usize) -> CliResult<(Value, Vec<Table>)> {
    let nl = sc.nl()?;
    let u0 = sc.random_seeds(1, 0).remove(0);
    let traj = evolve(&u0, nl, &sc.stepper, 0.0, periods as f64 * sc.period())?;
    let mut t = Table::new(PlotKind::Trajectory, "simulation", &["time", "x", "u"]);
    let xs = sc.grid.nodes();
    for (time, s) in traj.times.iter().zip(&traj.states) {
        for (x, u) in xs.iter().zip(s.values()) {
            t.push(vec![*time, *x, *u]);
        }
    }
    let mut norms = Table::new(PlotKind::Trajectory, "simulation-norms", &["time", "sup_norm", "mean"]);
    for (time, s) in traj.times.iter().zip(&traj.states) {
        norms.push(vec![*time, s.sup_norm(), s.mean()]);
    }
    let last = traj.last();
    Ok((
        json!({
            "periods": periods,
            "steps": traj.len() - 1,
            "initial_sup": u0.sup_norm(),
            "final_sup": last.sup_norm(),
            "final_mean": last.mean(),
        }),
        vec![t, norms],
    ))
}

/// Newton from every census seed, without deduplication.
pub fn fixpoint(sc: &Scenario) -> CliResult<(Value, Vec<Table>)> {
    let nl = sc.nl()?;
    let opts = FixedPointOptions::default();
    let mut out = Vec::new();
    for (c, seed) in sc.config.seeds.census.iter().zip(sc.census_seeds()) {
        out.push(match newton_fixed_point_with(&seed, nl, &sc.stepper, &opts) {
            Ok(r) => json!({
                "seed": c,
                "converged": true,
                "mean": r.profile.mean(),
                "residual": r.residual,
                "newton_residuals": r.newton_residuals,
                "morse_index": r.morse_index,
                "hyperbolic": r.hyperbolic,
            }),
            Err(e) => json!({ "seed": c, "converged": false, "error": e.to_string() }),
        });
    }
    Ok((json!({ "solves": out }), Vec::new()))
}

/// Floquet spectra at the deduplicated census.
pub fn floquet(sc: &Scenario) -> CliResult<(Value, Vec<Table>)> {
    let nl = sc.nl()?;
    let census = fixed_point_census(nl, &sc.stepper, &sc.census_seeds(), &FixedPointOptions::default(), 1e-6);
    let mut tables = Vec::new();
    let mut out = Vec::new();
    for (i, r) in census.records.iter().enumerate() {
        let s = &r.spectrum;
        let mut t = Table::new(PlotKind::Spectrum, format!("fixed-point-{i}"), &["index", "modulus", "re", "im", "residual"]);
        for (j, m) in s.multipliers.iter().enumerate() {
            t.push(vec![j as f64, m.norm(), m.re, m.im, s.arnoldi_residuals[j]]);
        }
        tables.push(t);
        out.push(json!({
            "fixed_point": i,
            "mean": r.profile.mean(),
            "morse_index": r.morse_index,
            "hyperbolic": r.hyperbolic,
            "multipliers": s.multipliers.iter().map(|m| [m.re, m.im]).collect::<Vec<_>>(),
            "levels_resolved": s.k_max,
            "complete": s.complete,
        }));
    }
    Ok((json!({ "spectra": out }), tables))
}
