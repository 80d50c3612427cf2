//! Experiment orchestration and the report/manifest files.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rdlab::stepper::Scheme;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::audits::{AuditResult, Context, Status};
use crate::error::{CliError, CliResult};
use crate::plot::{available_kinds, emit_plot_data, Table};
use crate::scenario::{AuditSpec, Scenario};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolution {
    pub points: usize,
    pub dt: f64,
    pub scheme: Scheme,
    pub period: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArtifactEntry {
    pub kind: &'static str,
    pub name: String,
    pub file: String,
    pub rows: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub struct Summary {
    pub passed: usize,
    pub failed: usize,
    pub inconclusive: usize,
}

/// Deterministic record of one run: no timings, no absolute paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub scenario: String,
    pub scenario_hash: String,
    pub rng_seed: u64,
    pub resolution: Resolution,
    pub audits: Vec<AuditResult>,
    pub artifacts: Vec<ArtifactEntry>,
    pub summary: Summary,
}

impl ExperimentReport {
    pub fn audit(&self, id: crate::scenario::AuditId) -> Option<&AuditResult> {
        self.audits.iter().find(|a| a.id == id)
    }

    /// 0 all pass, 2 a structural violation, 3 inconclusive under `strict`.
    pub fn exit_code(&self, strict: bool) -> i32 {
        if self.summary.failed > 0 {
            2
        } else if strict && self.summary.inconclusive > 0 {
            3
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditTiming {
    pub id: crate::scenario::AuditId,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: ExperimentReport,
    pub tables: Vec<Table>,
    pub timings: Vec<AuditTiming>,
    pub wall_seconds: f64,
}

/// Executes `plan` in order against `sc`.
pub fn run_plan(sc: &Scenario, plan: &[AuditSpec]) -> CliResult<RunOutput> {
    let start = Instant::now();
    let mut ctx = Context::new(sc);
    let mut audits = Vec::with_capacity(plan.len());
    let mut timings = Vec::with_capacity(plan.len());
    for spec in plan {
        let t0 = Instant::now();
        audits.push(ctx.run(spec)?);
        timings.push(AuditTiming {
            id: spec.id,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }
    let mut summary = Summary::default();
    for a in &audits {
        match a.status {
            Status::Pass => summary.passed += 1,
            Status::Fail => summary.failed += 1,
            Status::Inconclusive => summary.inconclusive += 1,
        }
    }
    let tables = ctx.tables;
    let artifacts = tables
        .iter()
        .map(|t| ArtifactEntry {
            kind: t.kind.name(),
            name: t.name.clone(),
            file: t.file_name(),
            rows: t.rows.len(),
        })
        .collect();
    let cfg = &sc.config;
    Ok(RunOutput {
        report: ExperimentReport {
            schema_version: SCHEMA_VERSION,
            scenario: cfg.name.clone(),
            scenario_hash: cfg.digest(),
            rng_seed: cfg.seeds.rng_seed,
            resolution: Resolution {
                points: cfg.grid.points,
                dt: cfg.stepper.dt,
                scheme: cfg.stepper.scheme,
                period: cfg.period,
            },
            audits,
            artifacts,
            summary,
        },
        tables,
        timings,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs the scenario's own audit plan.
pub fn run_scenario(sc: &Scenario) -> CliResult<RunOutput> {
    run_plan(sc, &sc.config.audits)
}

#[derive(Debug, Clone, Serialize)]
struct FileEntry {
    file: String,
    bytes: usize,
    sha256: String,
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    scenario: &'a str,
    scenario_hash: &'a str,
    threads: usize,
    wall_seconds: f64,
    audit_seconds: &'a [AuditTiming],
    files: Vec<FileEntry>,
}

fn write(path: &Path, body: &[u8]) -> CliResult<()> {
    std::fs::write(path, body).map_err(|e| CliError::io(path, e))
}

/// Writes `report.json`, the data files of `kinds` (all available when
/// empty) and `manifest.json` under `dir`.
pub fn write_outputs(out: &RunOutput, dir: &Path, kinds: &[String]) -> CliResult<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut written = Vec::new();
    let report_path = dir.join("report.json");
    write(&report_path, serde_json::to_string_pretty(&out.report)?.as_bytes())?;
    written.push(report_path);
    let chosen: Vec<String> = if kinds.is_empty() {
        available_kinds(&out.tables).into_iter().map(String::from).collect()
    } else {
        kinds.to_vec()
    };
    for k in &chosen {
        written.extend(emit_plot_data(&out.tables, k, dir)?);
    }
    let mut files = Vec::new();
    for p in &written {
        let body = std::fs::read(p).map_err(|e| CliError::io(p, e))?;
        files.push(FileEntry {
            file: p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            bytes: body.len(),
            sha256: hex::encode(Sha256::digest(&body)),
        });
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        scenario: &out.report.scenario,
        scenario_hash: &out.report.scenario_hash,
        threads: rayon::current_num_threads(),
        wall_seconds: out.wall_seconds,
        audit_seconds: &out.timings,
        files,
    };
    let mpath = dir.join("manifest.json");
    write(&mpath, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    written.push(mpath);
    Ok(written)
}
