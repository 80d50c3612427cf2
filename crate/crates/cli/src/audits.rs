//! The audit catalogue. Each audit returns a status with metrics; shared
//! intermediate results (census, connections, ω-census) are computed once
//! per run.

use std::f64::consts::TAU;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use rdlab::asymptotics::{
    classify_fk, filtration_dimension_audit, operator_convergence_audit, random_level_combination,
    zero_number_filtration_audit, Classification, Coefficient, Direction, LinearProblem, RateOptions,
};
use rdlab::floquet::{
    fixed_point_census, floquet_spectrum, verify_eigen_structure, verify_hyperbolic_rigidity, Census,
    FixedPointOptions, FixedPointRecord, FloquetOptions, FloquetSpectrum,
};
use rdlab::manifolds::{
    find_connection, morse_smale_verdict, omega_limit_census, stable_level_zero_bound, transversality_check,
    verify_index_drop, verify_zero_number_bounds, zero_partition_at_fixed_point, ConnectionRecord, OmegaOutcome,
    OmegaReport, ShootOptions, Transversality, TransversalityReport, Verdict,
};
use rdlab::recursion::{delta_lambda, recursion_suite, IterDirection, Schedule, SpectralGap};
use rdlab::stepper::{check_dissipativity, evolve, tangent_evolve};
use rdlab::zeroes::{zero_history, DEFAULT_ZERO_TOL};
use rdlab::{Error, StateVector, DEFAULT_ALPHA};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};
use crate::plot::{PlotKind, Table};
use crate::scenario::{random_profile, AmplitudeLaw, AuditId, AuditSpec, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditResult {
    pub id: AuditId,
    pub status: Status,
    pub metrics: Value,
    pub notes: Vec<String>,
}

impl AuditResult {
    fn new(id: AuditId, status: Status, metrics: Value) -> Self {
        Self {
            id,
            status,
            metrics,
            notes: Vec::new(),
        }
    }

    fn note(mut self, n: impl Into<String>) -> Self {
        self.notes.push(n.into());
        self
    }
}

// independent RNG streams per consumer
const STREAM_OMEGA: u64 = 1;
const STREAM_MONO_BACKGROUND: u64 = 2;
const STREAM_MONO_TANGENT: u64 = 3;
const STREAM_FILTRATION: u64 = 4;
const STREAM_DISSIPATIVITY: u64 = 5;

const OMEGA_TRANSIENT: usize = 200;
const OMEGA_WINDOW: usize = 5;
const CENSUS_DEDUP: f64 = 1e-6;
const HOMOGENEITY_TOL: f64 = 1e-8;

/// A connection found by the sweep, with census indices of its ends.
#[derive(Debug, Clone)]
pub struct FoundConnection {
    pub source: usize,
    pub target: usize,
    pub record: ConnectionRecord,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub source: usize,
    pub target: usize,
    pub shots: usize,
    pub arrivals: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ConnectionSearch {
    pub connections: Vec<FoundConnection>,
    pub sweeps: Vec<SweepSummary>,
    pub homoclinic: Vec<SweepSummary>,
    pub sources: usize,
}

/// Cached state of one run.
pub struct Context<'a> {
    sc: &'a Scenario,
    census: Option<Census>,
    search: Option<ConnectionSearch>,
    transversality: Option<Vec<TransversalityReport>>,
    omega: Option<OmegaReport>,
    pub tables: Vec<Table>,
}

fn level_of(i: usize) -> usize {
    (i + 1) / 2
}

fn spectrum_table(name: String, spec: &FloquetSpectrum) -> Table {
    let mut t = Table::new(PlotKind::Spectrum, name, &["index", "modulus", "re", "im", "residual"]);
    let mut order: Vec<usize> = (0..spec.multipliers.len()).collect();
    order.sort_by(|a, b| spec.multipliers[*b].norm().total_cmp(&spec.multipliers[*a].norm()));
    for i in order {
        let m = spec.multipliers[i];
        t.push(vec![i as f64, m.norm(), m.re, m.im, spec.arnoldi_residuals.get(i).copied().unwrap_or(f64::NAN)]);
    }
    t
}

fn ladder_table(name: String, spec: &FloquetSpectrum) -> Table {
    let mut t = Table::new(PlotKind::Ladder, name, &["level", "modulus_high", "modulus_low"]);
    for j in 0..=spec.k_max {
        let r = FloquetSpectrum::level_range(j);
        if r.end > spec.moduli_ladder.len() {
            break;
        }
        t.push(vec![j as f64, spec.moduli_ladder[r.start], spec.moduli_ladder[r.end - 1]]);
    }
    t
}

fn record_summary(i: usize, r: &FixedPointRecord) -> Value {
    json!({
        "index": i,
        "mean": r.profile.mean(),
        "homogeneity_defect": r.homogeneity_defect,
        "morse_index": r.morse_index,
        "hyperbolic": r.hyperbolic,
        "hyperbolicity_margin": r.hyperbolicity_margin,
        "residual": r.residual,
        "newton_steps": r.newton_residuals.len() - 1,
        "leading_moduli": r.spectrum.moduli_ladder.iter().take(9).collect::<Vec<_>>(),
    })
}

impl<'a> Context<'a> {
    pub fn new(sc: &'a Scenario) -> Self {
        Self {
            sc,
            census: None,
            search: None,
            transversality: None,
            omega: None,
            tables: Vec::new(),
        }
    }

    pub fn census(&mut self) -> CliResult<&Census> {
        if self.census.is_none() {
            let nl = self.sc.nl()?;
            let c = fixed_point_census(
                nl,
                &self.sc.stepper,
                &self.sc.census_seeds(),
                &FixedPointOptions::default(),
                CENSUS_DEDUP,
            );
            for (i, r) in c.records.iter().enumerate() {
                self.tables.push(spectrum_table(format!("fixed-point-{i}"), &r.spectrum));
                self.tables.push(ladder_table(format!("fixed-point-{i}"), &r.spectrum));
            }
            self.census = Some(c);
        }
        Ok(self.census.as_ref().expect("census computed"))
    }

    fn shoot_options(&self) -> ShootOptions {
        ShootOptions {
            seed: self.sc.config.seeds.rng_seed,
            ..ShootOptions::default()
        }
    }

    pub fn connections(&mut self) -> CliResult<&ConnectionSearch> {
        if self.search.is_none() {
            let nl = self.sc.nl()?.clone();
            let cfg = self.sc.stepper;
            let opts = self.shoot_options();
            let records = self.census()?.records.clone();
            let mut out = ConnectionSearch::default();
            let summarize = |s: usize, t: usize, r: &rdlab::Result<rdlab::manifolds::ConnectionSweep>| match r {
                Ok(sw) => SweepSummary {
                    source: s,
                    target: t,
                    shots: sw.log.len(),
                    arrivals: sw.log.iter().filter(|l| l.arrived).count(),
                    error: None,
                },
                Err(e) => SweepSummary {
                    source: s,
                    target: t,
                    shots: 0,
                    arrivals: 0,
                    error: Some(e.to_string()),
                },
            };
            for (i, src) in records.iter().enumerate() {
                if !src.hyperbolic || src.morse_index == 0 {
                    continue;
                }
                out.sources += 1;
                let homo = find_connection(src, src, &nl, &cfg, &opts);
                out.homoclinic.push(summarize(i, i, &homo));
                for (j, tgt) in records.iter().enumerate() {
                    if j == i || !tgt.hyperbolic {
                        continue;
                    }
                    let sweep = find_connection(src, tgt, &nl, &cfg, &opts);
                    out.sweeps.push(summarize(i, j, &sweep));
                    if let Ok(sw) = sweep {
                        if let Some(record) = sw.connection {
                            out.connections.push(FoundConnection { source: i, target: j, record });
                        }
                    }
                }
            }
            for c in &out.connections {
                let mut t = Table::new(
                    PlotKind::DistanceHistory,
                    format!("connection-{}-{}", c.source, c.target),
                    &["n", "target_distance", "source_distance"],
                );
                for (n, (a, b)) in c.record.distance_history.iter().zip(&c.record.source_distance_history).enumerate() {
                    t.push(vec![n as f64, *a, *b]);
                }
                self.tables.push(t);
            }
            self.search = Some(out);
        }
        Ok(self.search.as_ref().expect("search computed"))
    }

    fn transversality_reports(&mut self, samples: usize) -> CliResult<&Vec<TransversalityReport>> {
        if self.transversality.is_none() {
            let nl = self.sc.nl()?.clone();
            let cfg = self.sc.stepper;
            let seed = self.sc.config.seeds.rng_seed;
            let conns = self.connections()?.connections.clone();
            let reports = conns
                .iter()
                .map(|c| transversality_check(&c.record, &nl, &cfg, samples, DEFAULT_ALPHA, seed))
                .collect::<rdlab::Result<Vec<_>>>()?;
            self.transversality = Some(reports);
        }
        Ok(self.transversality.as_ref().expect("reports computed"))
    }

    fn omega(&mut self, tol: f64) -> CliResult<&OmegaReport> {
        if self.omega.is_none() {
            let nl = self.sc.nl()?.clone();
            let cfg = self.sc.stepper;
            let seeds = self.sc.random_seeds(self.sc.config.seeds.count, STREAM_OMEGA);
            if let Some(first) = seeds.first() {
                let traj = evolve(first, &nl, &cfg, 0.0, nl.period())?;
                let mut t = Table::new(PlotKind::Trajectory, "omega-seed-0", &["time", "x", "u"]);
                let xs = self.sc.grid.nodes();
                for (time, s) in traj.times.iter().zip(&traj.states) {
                    for (x, u) in xs.iter().zip(s.values()) {
                        t.push(vec![*time, *x, *u]);
                    }
                }
                self.tables.push(t);
            }
            let census = self.census()?.records.clone();
            self.omega = Some(omega_limit_census(
                &nl,
                &cfg,
                &seeds,
                &census,
                OMEGA_TRANSIENT,
                OMEGA_WINDOW,
                tol,
                DEFAULT_ALPHA,
            ));
        }
        Ok(self.omega.as_ref().expect("omega computed"))
    }

    /// Runs one audit. Numerical errors become an inconclusive result;
    /// infrastructure errors propagate.
    pub fn run(&mut self, spec: &AuditSpec) -> CliResult<AuditResult> {
        let r = match spec.id {
            AuditId::FloquetOracle => self.floquet_oracle(spec),
            AuditId::LadderRigidity => self.ladder_rigidity(),
            AuditId::ZeroMonotonicity => self.zero_monotonicity(spec),
            AuditId::Census => self.census_audit(spec),
            AuditId::Connections => self.connections_audit(),
            AuditId::ZeroBounds => self.zero_bounds(),
            AuditId::Transversality => self.transversality_audit(spec),
            AuditId::OmegaCensus => self.omega_audit(spec),
            AuditId::MorseSmale => self.morse_smale(spec),
            AuditId::Filtration => self.filtration(spec),
            AuditId::RecursionSuite => self.recursion(spec),
            AuditId::Dissipativity => self.dissipativity(spec),
        };
        match r {
            Err(CliError::Core(e)) => Ok(AuditResult::new(spec.id, Status::Inconclusive, Value::Null).note(e.to_string())),
            other => other,
        }
    }

    fn floquet_oracle(&mut self, spec: &AuditSpec) -> CliResult<AuditResult> {
        let id = AuditId::FloquetOracle;
        let tol = spec.tol.unwrap_or(1e-6);
        let nl = self.sc.nl()?;
        let period = self.sc.period();
        const M: usize = 4096;
        let ts: Vec<f64> = (0..M).map(|i| period * i as f64 / M as f64).collect();
        let applies = ts.iter().step_by(64).all(|&t| {
            [-1.0, 1.0].iter().all(|&z| nl.f(t, 0.0, z) == 0.0) && nl.df_dz(t, 0.0, 0.0) == 0.0
        });
        if !applies {
            return Ok(AuditResult::new(id, Status::Inconclusive, Value::Null)
                .note("the zero state is not a fixed point with a gradient-free linearization"));
        }
        // trapezoid rule, spectrally accurate for periodic integrands
        let mean = ts.iter().map(|&t| nl.df_dy(t, 0.0, 0.0)).sum::<f64>() / M as f64;
        let opts = FloquetOptions::default();
        let zero = StateVector::zeros(&self.sc.grid);
        let s = floquet_spectrum(&zero, nl, &self.sc.stepper, &opts)?;
        self.tables.push(spectrum_table("zero-state".into(), &s));
        let expected: Vec<f64> = (0..9)
            .map(|i| {
                let k = level_of(i) as f64;
                ((mean - k * k) * period).exp()
            })
            .collect();
        let errors: Vec<f64> = expected
            .iter()
            .enumerate()
            .map(|(i, e)| s.multipliers.get(i).map_or(f64::INFINITY, |m| (m - e).norm() / e))
            .collect();
        let worst = errors.iter().copied().fold(0.0, f64::max);
        let status = if worst <= tol { Status::Pass } else { Status::Fail };
        Ok(AuditResult::new(
            id,
            status,
            json!({
                "mean_coefficient": mean,
                "expected": expected,
                "computed": s.multipliers.iter().take(9).map(|m| [m.re, m.im]).collect::<Vec<_>>(),
                "relative_errors": errors,
                "max_relative_error": worst,
                "tol": tol,
            }),
        ))
    }

    fn ladder_rigidity(&mut self) -> CliResult<AuditResult> {
        let id = AuditId::LadderRigidity;
        let symmetric = self.sc.nl()?.symmetric_in_z();
        let census = self.census()?;
        if census.records.is_empty() {
            return Ok(AuditResult::new(id, Status::Inconclusive, Value::Null).note("census is empty"));
        }
        let mut failed = false;
        let mut per = Vec::new();
        for (i, r) in census.records.iter().enumerate() {
            let pairing = symmetric && r.homogeneity_defect <= HOMOGENEITY_TOL;
            let rep = verify_eigen_structure(&r.spectrum, 1e-6, pairing);
            failed |= !rep.pass();
            per.push(json!({
                "fixed_point": i,
                "levels": r.spectrum.k_max + 1,
                "ladder_ok": rep.ladder_ok,
                "zeros_ok": rep.zeros_ok,
                "pairing_checked": pairing,
                "pairing_ok": rep.pairing_ok,
                "level_zero_counts": rep.level_zero_counts,
                "failures": rep.failures,
            }));
        }
        Ok(AuditResult::new(id, if failed { Status::Fail } else { Status::Pass }, json!({ "fixed_points": per })))
    }

    fn zero_monotonicity(&mut self, spec: &AuditSpec) -> CliResult<AuditResult> {
        let id = AuditId::ZeroMonotonicity;
        let n = spec.samples.unwrap_or(100);
        let nl = self.sc.nl()?;
        let cfg = self.sc.stepper;
        let period = self.sc.period();
        let horizon = spec.horizon.unwrap_or(2.0 * period);
        let backgrounds = self.sc.random_seeds(n, STREAM_MONO_BACKGROUND);
        let mut rng = self.sc.rng(STREAM_MONO_TANGENT);
        let tangents: Vec<StateVector> = (0..n)
            .map(|_| random_profile(&self.sc.grid, 8, 1.0, AmplitudeLaw::Fixed, &mut rng))
            .collect();
        let histories: Vec<rdlab::Result<rdlab::zeroes::ZeroHistory>> = backgrounds
            .par_iter()
            .zip(tangents.par_iter())
            .map(|(u0, v0)| {
                let traj = evolve(u0, nl, &cfg, 0.0, horizon)?;
                let tv = tangent_evolve(&traj, v0)?;
                zero_history(&tv, period / 10.0, DEFAULT_ZERO_TOL)
            })
            .collect();
        let (mut checked, mut flagged, mut increases, mut unexplained, mut degenerate) = (0, 0, 0, 0, 0);
        let mut errors = Vec::new();
        for (i, h) in histories.iter().enumerate() {
            match h {
                Ok(h) => {
                    checked += h.samples.len();
                    flagged += h.samples.iter().filter(|s| s.zeros.is_flagged()).count();
                    increases += h.samples.windows(2).filter(|w| w[1].zeros.count > w[0].zeros.count).count();
                    unexplained += h.unexplained_increases.len();
                    if i < 4 {
                        let mut t = Table::new(PlotKind::ZeroHistory, format!("linearized-{i}"), &["time", "count"]);
                        for s in &h.samples {
                            t.push(vec![s.time, s.zeros.count as f64]);
                        }
                        self.tables.push(t);
                    }
                }
                Err(Error::DegenerateSample { .. }) => degenerate += 1,
                Err(e) => errors.push(format!("trajectory {i}: {e}")),
            }
        }
        let status = if unexplained > 0 {
            Status::Fail
        } else if checked == 0 || !errors.is_empty() {
            Status::Inconclusive
        } else {
            Status::Pass
        };
        let mut r = AuditResult::new(
            id,
            status,
            json!({
                "trajectories": n,
                "horizon": horizon,
                "sample_spacing": period / 10.0,
                "samples_checked": checked,
                "flagged_samples": flagged,
                "increases_at_flagged": increases - unexplained,
                "unexplained_increases": unexplained,
                "degenerate_trajectories": degenerate,
            }),
        );
        r.notes = errors;
        Ok(r)
    }

    fn census_audit(&mut self, spec: &AuditSpec) -> CliResult<AuditResult> {
        let id = AuditId::Census;
        let census = self.census()?;
        if census.records.is_empty() {
            return Ok(AuditResult::new(id, Status::Inconclusive, Value::Null).note("no fixed point found"));
        }
        let mut violations = Vec::new();
        let mut notes = Vec::new();
        for (i, r) in census.records.iter().enumerate() {
            match verify_hyperbolic_rigidity(r, HOMOGENEITY_TOL) {
                Ok(rep) => violations.extend(rep.violations.into_iter().map(|v| format!("fixed point {i}: {v}"))),
                Err(e) => notes.push(format!("fixed point {i}: {e}")),
            }
        }
        if let Some(n) = spec.expected {
            if census.records.len() != n {
                violations.push(format!("found {} fixed points, expected {n}", census.records.len()));
            }
        }
        let indices: Vec<usize> = census.records.iter().map(|r| r.morse_index).collect();
        let mut r = AuditResult::new(
            id,
            if violations.is_empty() { Status::Pass } else { Status::Fail },
            json!({
                "count": census.records.len(),
                "morse_indices": indices,
                "hyperbolic": census.records.iter().filter(|r| r.hyperbolic).count(),
                "max_homogeneity_defect": census.records.iter().map(|r| r.homogeneity_defect).fold(0.0, f64::max),
                "records": census.records.iter().enumerate().map(|(i, r)| record_summary(i, r)).collect::<Vec<_>>(),
                "failed_seeds": census.failures.iter().map(|f| json!({"seed": f.seed_index, "error": f.error.to_string()})).collect::<Vec<_>>(),
                "violations": violations,
            }),
        );
        r.notes = notes;
        Ok(r)
    }

    fn connections_audit(&mut self) -> CliResult<AuditResult> {
        let id = AuditId::Connections;
        let search = self.connections()?.clone();
        let mut violations = Vec::new();
        let mut conns = Vec::new();
        for c in &search.connections {
            let rep = verify_index_drop(&c.record, DEFAULT_ALPHA)?;
            violations.extend(rep.violations.iter().map(|v| format!("{} -> {}: {v}", c.source, c.target)));
            conns.push(json!({
                "source": c.source,
                "target": c.target,
                "source_index": rep.source_index,
                "target_index": rep.target_index,
                "orbit_length": c.record.orbit.len(),
                "seed_amplitude": c.record.seed_amplitude,
                "final_distance": c.record.distance_history.last(),
            }));
        }
        for h in &search.homoclinic {
            if h.arrivals > 0 {
                violations.push(format!("homoclinic sweep from {} returned {} arrivals", h.source, h.arrivals));
            }
        }
        let errors: Vec<String> = search
            .sweeps
            .iter()
            .chain(&search.homoclinic)
            .filter_map(|s| s.error.as_ref().map(|e| format!("{} -> {}: {e}", s.source, s.target)))
            .collect();
        let status = if !violations.is_empty() {
            Status::Fail
        } else if search.sources == 0 || search.connections.is_empty() || !errors.is_empty() {
            Status::Inconclusive
        } else {
            Status::Pass
        };
        let mut r = AuditResult::new(
            id,
            status,
            json!({
                "sources": search.sources,
                "connections": conns,
                "sweeps": search.sweeps,
                "homoclinic_sweeps": search.homoclinic,
                "violations": violations,
            }),
        );
        r.notes = errors;
        if search.sources == 0 {
            r = r.note("no hyperbolic fixed point with positive index");
        }
        Ok(r)
    }

    fn zero_bounds(&mut self) -> CliResult<AuditResult> {
        let id = AuditId::ZeroBounds;
        let seed = self.sc.config.seeds.rng_seed;
        let conns = self.connections()?.connections.clone();
        let records = self.census()?.records.clone();
        let mut violations = Vec::new();
        let mut along = Vec::new();
        for c in &conns {
            let rep = verify_zero_number_bounds(&c.record);
            let mut t = Table::new(PlotKind::ZeroHistory, format!("connection-{}-{}", c.source, c.target), &["n", "count"]);
            for (n, z) in rep.counts.iter().enumerate() {
                if let Some(z) = z {
                    t.push(vec![n as f64, *z as f64]);
                }
            }
            self.tables.push(t);
            violations.extend(rep.violations.iter().map(|v| format!("{} -> {}: {v}", c.source, c.target)));
            along.push(json!({
                "source": c.source,
                "target": c.target,
                "checked": rep.checked,
                "skipped_degenerate": rep.skipped_degenerate,
                "max_count": rep.counts.iter().flatten().max(),
                "lower_bound_asserted": rep.lower_bound_asserted,
            }));
        }
        let mut linearized = Vec::new();
        for (i, r) in records.iter().enumerate() {
            if !r.hyperbolic || r.morse_index == 0 {
                continue;
            }
            let levels = stable_level_zero_bound(r, 16, seed)?;
            for l in &levels {
                if !l.ok {
                    violations.push(format!(
                        "fixed point {i}, stable level {}: zero counts {:?} not above index {}",
                        l.level, l.counts, r.morse_index
                    ));
                }
            }
            linearized.push(json!({
                "fixed_point": i,
                "morse_index": r.morse_index,
                "levels": levels.iter().map(|l| json!({
                    "level": l.level,
                    "modulus": l.modulus,
                    "min_count": l.counts.iter().min(),
                    "ok": l.ok,
                })).collect::<Vec<_>>(),
            }));
        }
        let status = if !violations.is_empty() {
            Status::Fail
        } else if conns.is_empty() && linearized.is_empty() {
            Status::Inconclusive
        } else {
            Status::Pass
        };
        Ok(AuditResult::new(
            id,
            status,
            json!({ "connections": along, "linearized": linearized, "violations": violations }),
        ))
    }

    fn transversality_audit(&mut self, spec: &AuditSpec) -> CliResult<AuditResult> {
        let id = AuditId::Transversality;
        let samples = spec.samples.unwrap_or(200);
        let nl = self.sc.nl()?.clone();
        let cfg = self.sc.stepper;
        let seed = self.sc.config.seeds.rng_seed;
        let conns = self.connections()?.connections.clone();
        let reports = self.transversality_reports(samples)?.clone();
        let records = self.census()?.records.clone();
        let mut failed = Vec::new();
        let mut unsure = Vec::new();
        let mut per = Vec::new();
        for (c, t) in conns.iter().zip(&reports) {
            match &t.verdict {
                Transversality::NotTransversal(r) => failed.push(format!("{} -> {}: {}", c.source, c.target, r.join("; "))),
                Transversality::Inconclusive(r) => unsure.push(format!("{} -> {}: {r}", c.source, c.target)),
                _ => {}
            }
            per.push(json!({ "source": c.source, "target": c.target, "report": t }));
        }
        let mut partitions = Vec::new();
        for (i, r) in records.iter().enumerate() {
            if !r.hyperbolic || r.morse_index < 3 || r.morse_index % 2 == 0 {
                continue;
            }
            let m = (r.morse_index - 1) / 2;
            let p = zero_partition_at_fixed_point(r, &nl, &cfg, m, samples, seed)?;
            if !p.overlap_empty() {
                failed.extend(p.violations.iter().map(|v| format!("fixed point {i}: {v}")));
            }
            partitions.push(json!({ "fixed_point": i, "report": p }));
        }
        if conns.is_empty() {
            unsure.push("no connections to test".into());
        }
        let status = if !failed.is_empty() {
            Status::Fail
        } else if !unsure.is_empty() {
            Status::Inconclusive
        } else {
            Status::Pass
        };
        let mut r = AuditResult::new(
            id,
            status,
            json!({ "connections": per, "partitions": partitions, "violations": failed }),
        );
        r.notes = unsure;
        Ok(r)
    }

    fn omega_audit(&mut self, spec: &AuditSpec) -> CliResult<AuditResult> {
        let id = AuditId::OmegaCensus;
        let tol = spec.tol.unwrap_or(1e-6);
        let symmetric = self.sc.nl()?.symmetric_in_z();
        let o = self.omega(tol)?.clone();
        let status = if o.outcomes.is_empty() || o.unresolved + o.blow_ups > 0 {
            Status::Inconclusive
        } else if o.translates > 0 && symmetric {
            Status::Fail
        } else {
            Status::Pass
        };
        let mut r = AuditResult::new(
            id,
            status,
            json!({
                "seeds": o.outcomes.len(),
                "fixed_points": o.fixed_points,
                "translates": o.translates,
                "unresolved": o.unresolved,
                "blow_ups": o.blow_ups,
                "histogram": o.histogram,
                "worst_distance": o.outcomes.iter().map(|x| match x {
                    OmegaOutcome::FixedPoint { distance, .. } | OmegaOutcome::Translate { distance, .. } => *distance,
                    OmegaOutcome::Unresolved { nearest_distance } => *nearest_distance,
                    OmegaOutcome::BlowUp { .. } => f64::INFINITY,
                }).fold(0.0, f64::max),
                "transient_periods": OMEGA_TRANSIENT,
                "window": OMEGA_WINDOW,
                "tol": tol,
            }),
        );
        if o.translates > 0 && !symmetric {
            r = r.note("limits on translates of non-homogeneous profiles (z-dependent nonlinearity)");
        }
        Ok(r)
    }

    fn morse_smale(&mut self, spec: &AuditSpec) -> CliResult<AuditResult> {
        let id = AuditId::MorseSmale;
        let tol = spec.tol.unwrap_or(1e-6);
        let samples = spec.samples.unwrap_or(200);
        let trans = self.transversality_reports(samples)?.clone();
        let omega = self.omega(tol)?.clone();
        let census = self.census()?.records.clone();
        let rep = morse_smale_verdict(&census, &trans, &omega);
        let status = match rep.verdict {
            Verdict::Yes => Status::Pass,
            Verdict::No => Status::Fail,
            Verdict::Inconclusive => Status::Inconclusive,
        };
        Ok(AuditResult::new(id, status, serde_json::to_value(&rep)?))
    }

    fn filtration(&mut self, spec: &AuditSpec) -> CliResult<AuditResult> {
        let id = AuditId::Filtration;
        let tol = spec.tol.unwrap_or(1e-3);
        let grid = self.sc.grid.clone();
        let cfg = self.sc.stepper;
        let period = self.sc.period();
        let w = TAU / period;
        let limit_d: Coefficient = Arc::new(move |t, _| 2.0 + 0.5 * (w * t).cos());
        let zero: Coefficient = Arc::new(|_, _| 0.0);
        let ld = limit_d.clone();
        let flat = LinearProblem::new(
            zero.clone(),
            Arc::new(move |t, x| ld(t, x) + 0.5 * (-t.abs()).exp()),
            zero.clone(),
            limit_d.clone(),
            period,
        )?;
        let ld = limit_d.clone();
        let coupled = LinearProblem::new(
            Arc::new(|t: f64, x: f64| 0.3 * (-t.abs()).exp() * x.sin()),
            Arc::new(move |t, x| ld(t, x) + 0.5 * (-t.abs()).exp() * x.cos()),
            zero,
            limit_d,
            period,
        )?;
        let mut failures = Vec::new();
        let mut convergence = Vec::new();
        for (name, lp) in [("flat", &flat), ("coupled", &coupled)] {
            let a = operator_convergence_audit(lp, &grid, &cfg, 20, 9, DEFAULT_ALPHA)?;
            let at20 = a.defects[20];
            if !(at20 < 1e-4) {
                failures.push(format!("{name}: operator defect {at20:e} at n = 20"));
            }
            convergence.push(json!({ "problem": name, "defects": a.defects, "defect_at_20": at20 }));
        }
        let spec_l = flat.limit_spectrum(&grid, &cfg, &FloquetOptions::default())?;
        let exact: Vec<f64> = (0..=3).map(|k: i32| ((2.0 - (k * k) as f64) * period).exp()).collect();
        let mut ladder = Table::new(PlotKind::Ladder, "limit-problem", &["level", "exact", "computed"]);
        for (k, e) in exact.iter().enumerate() {
            let c = spec_l.level_modulus(k).unwrap_or(f64::NAN);
            ladder.push(vec![k as f64, *e, c]);
            if !((c - e).abs() <= tol * e) {
                failures.push(format!("limit level {k}: modulus {c} vs exact {e}"));
            }
        }
        self.tables.push(ladder);
        let mut rng = self.sc.rng(STREAM_FILTRATION);
        let opts = RateOptions::default();
        let mut classified: Vec<Classification> = Vec::new();
        let mut rate_rows = Vec::new();
        let mut unclassified = 0;
        let mut jobs: Vec<(Direction, usize, StateVector)> = Vec::new();
        for k in 0..=3usize {
            for _ in 0..3 {
                jobs.push((Direction::Forward, k, random_level_combination(&spec_l, k..spec_l.k_max + 1, &mut rng)?));
                jobs.push((Direction::Backward, k, random_level_combination(&spec_l, k..k + 1, &mut rng)?));
            }
        }
        let results: Vec<rdlab::Result<Classification>> = jobs
            .par_iter()
            .map(|(d, _, v)| classify_fk(&flat, &cfg, v, &spec_l, *d, &opts))
            .collect();
        for ((d, k, _), r) in jobs.iter().zip(results) {
            match r {
                Ok(c) => {
                    let err = (c.estimate.rate - exact[*k]).abs() / exact[*k];
                    if c.matched_level != *k || !(err <= tol) {
                        failures.push(format!(
                            "{d:?} sample on level {k}: rate {} matched level {} (relative error {err:e})",
                            c.estimate.rate, c.matched_level
                        ));
                    }
                    rate_rows.push(json!({ "direction": d, "level": k, "rate": c.estimate.rate, "exact": exact[*k], "relative_error": err }));
                    classified.push(c);
                }
                Err(Error::Unclassifiable { rate }) => {
                    failures.push(format!("{d:?} sample on level {k}: rate {rate} unclassifiable"));
                }
                Err(e) => return Err(e.into()),
            }
        }
        let probes: Vec<StateVector> = (0..6)
            .map(|_| random_profile(&grid, 6, 1.0, AmplitudeLaw::Fixed, &mut rng))
            .collect();
        let spec_c = coupled.limit_spectrum(&grid, &cfg, &FloquetOptions::default())?;
        let coupled_results: Vec<rdlab::Result<Classification>> = probes
            .par_iter()
            .map(|v| classify_fk(&coupled, &cfg, v, &spec_c, Direction::Forward, &opts))
            .collect();
        for r in coupled_results {
            match r {
                Ok(c) => classified.push(c),
                Err(Error::Unclassifiable { .. }) => unclassified += 1,
                Err(e) => return Err(e.into()),
            }
        }
        let zeros = zero_number_filtration_audit(&classified);
        for v in &zeros.violations {
            failures.push(format!("sample {}: {}", v.sample, v.note));
        }
        let dims: Vec<_> = (1..=3).map(|k| filtration_dimension_audit(&spec_l, k)).collect();
        for d in &dims {
            if !d.matches {
                failures.push(format!("filtration dimension for k = {}: {:?} vs {}", d.k, d.lower_dimension, d.predicted));
            }
        }
        Ok(AuditResult::new(
            id,
            if failures.is_empty() { Status::Pass } else { Status::Fail },
            json!({
                "convergence": convergence,
                "exact_ladder": exact,
                "rates": rate_rows,
                "zero_number_checked": zeros.checked,
                "unclassified_coupled_samples": unclassified,
                "dimensions": dims,
                "tol": tol,
                "violations": failures,
            }),
        ))
    }

    fn recursion(&mut self, spec: &AuditSpec) -> CliResult<AuditResult> {
        let id = AuditId::RecursionSuite;
        let trials = spec.samples.unwrap_or(100);
        let tol = spec.tol.unwrap_or(1e-3);
        let suite = recursion_suite(trials, 8, self.sc.config.seeds.rng_seed, tol);
        let (value, oracle) = delta_oracle_check()?;
        let delta_err = (value - oracle).abs();
        let worst_rate = suite.trials.iter().map(|t| t.rate_error).fold(0.0, f64::max);
        let failing: Vec<Value> = suite
            .trials
            .iter()
            .filter(|t| !t.pass)
            .map(|t| serde_json::to_value(t))
            .collect::<Result<_, _>>()?;
        let status = if suite.passed == trials && delta_err <= 1e-12 {
            Status::Pass
        } else {
            Status::Fail
        };
        Ok(AuditResult::new(
            id,
            status,
            json!({
                "trials": trials,
                "passed": suite.passed,
                "max_rate_error": worst_rate,
                "fast_branch": suite.trials.iter().filter(|t| t.branch == rdlab::recursion::Branch::Fast).count(),
                "forward_dims_ok": suite.trials.iter().filter(|t| t.forward_dim_ok).count(),
                "backward_dims_ok": suite.trials.iter().filter(|t| t.backward_dim_ok).count(),
                "max_delta": suite.trials.iter().map(|t| t.delta).fold(0.0, f64::max),
                "delta_check": { "value": value, "direct_sum": oracle, "abs_error": delta_err },
                "failing_trials": failing,
            }),
        ))
    }

    fn dissipativity(&mut self, spec: &AuditSpec) -> CliResult<AuditResult> {
        let id = AuditId::Dissipativity;
        let tol = spec.tol.unwrap_or(0.01);
        let horizon = spec.horizon.unwrap_or(20.0);
        let nl = self.sc.nl()?;
        let seeds = self.sc.random_seeds(self.sc.config.seeds.count, STREAM_DISSIPATIVITY);
        let rep = check_dissipativity(nl, &self.sc.stepper, &seeds, horizon, tol)?;
        let mut table = Table::new(PlotKind::Trajectory, "sup-norm-envelopes", &["seed", "time", "sup_norm"]);
        let mut per = Vec::new();
        for (i, s) in rep.seeds.iter().enumerate() {
            for (t, v) in s.times.iter().zip(&s.sup_norms) {
                table.push(vec![i as f64, *t, *v]);
            }
            let entry = s
                .times
                .iter()
                .zip(&s.sup_norms)
                .find(|(_, v)| **v <= rep.delta + tol)
                .map(|(t, _)| *t);
            per.push(json!({
                "seed": i,
                "initial_sup": s.sup_norms.first(),
                "final_sup": s.sup_norms.last(),
                "entry_time": entry,
                "fitted_rate": s.fitted_rate,
                "envelope_rate": s.envelope_rate,
                "bound_holds": s.bound_holds,
                "settled": s.settled,
                "failure": s.failure,
            }));
        }
        self.tables.push(table);
        let mut r = AuditResult::new(
            id,
            if rep.pass { Status::Pass } else { Status::Fail },
            json!({
                "delta": rep.delta,
                "radius": rep.radius,
                "tol": tol,
                "horizon": horizon,
                "min_envelope_rate": rep.seeds.iter().filter_map(|s| s.envelope_rate).fold(f64::INFINITY, f64::min),
                "min_fitted_rate": rep.seeds.iter().filter_map(|s| s.fitted_rate).fold(f64::INFINITY, f64::min),
                "max_final_sup": rep.seeds.iter().filter_map(|s| s.sup_norms.last().copied()).fold(0.0, f64::max),
                "seeds": per,
            }),
        );
        r.notes = rep.hypothesis_violations.clone();
        Ok(r)
    }
}

/// `δ(λ,R)` for `S = diag(2, 1/2)`, `λ = 1`, `R_n = 0.01·I` on `0 ≤ n < 10`,
/// against a direct summation with explicit matrix powers.
pub fn delta_oracle_check() -> rdlab::Result<(f64, f64)> {
    let s = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&[2.0, 0.5]));
    let gap = SpectralGap::at(&s, 1.0)?;
    let r = |n: i64| -> DMatrix<f64> {
        if (0..10).contains(&n) {
            DMatrix::identity(2, 2) * 0.01
        } else {
            DMatrix::zeros(2, 2)
        }
    };
    let sched: Schedule = Arc::new(r);
    let n_max = 40;
    let value = delta_lambda(&gap, &sched, 1.0, IterDirection::Forward, n_max)?.value;
    let s_inv = s.clone().try_inverse().ok_or_else(|| Error::Degenerate("singular".into()))?;
    let norm = |m: &DMatrix<f64>| rdlab::linalg::svd(m).singular_values[0];
    let mut best = 0.0f64;
    for n in 0..=n_max as i64 {
        let mut total = 0.0;
        for k in 1..=n {
            let mut m = gap.q.clone();
            for _ in 0..(n - k) {
                m = &s * m;
            }
            total += norm(&(m * r(k - 1)));
        }
        for k in (n + 1)..(n + 400) {
            let mut m = gap.p.clone();
            for _ in 0..(k - n) {
                m = &s_inv * m;
            }
            total += norm(&(m * r(k - 1)));
        }
        best = best.max(total);
    }
    Ok((value, best))
}
