use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rdlab_cli::scenario::AuditId;
use rdlab_cli::{emit_plot_data, run_plan, write_outputs, AuditSpec, CliError, CliResult, Scenario, Table, CATALOG};

#[derive(Parser)]
#[command(name = "rdlab", version, about = "Audits for time-periodic reaction-diffusion equations on the circle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Catalog name or path to a scenario TOML file.
    #[arg(long, default_value = "chafee2")]
    scenario: String,
    /// Output directory.
    #[arg(long, default_value = "rdlab-out")]
    out: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the scenario RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the number of grid points.
    #[arg(long)]
    resolution: Option<usize>,
    /// Treat inconclusive audits as a nonzero exit.
    #[arg(long)]
    strict: bool,
    /// Plot-data kinds to emit (default: every kind the run produced).
    #[arg(long = "plot")]
    plot: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve one random seed and write its trajectory.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        periods: usize,
    },
    /// Newton-Krylov solves from the census seeds.
    Fixpoint(Common),
    /// Floquet spectra at the fixed-point census.
    Floquet(Common),
    /// Fixed-point census with rigidity checks.
    Census(Common),
    /// Connection sweeps, index drop and homoclinic exclusion.
    Connect(Common),
    /// Transversality and zero-number partition.
    Transversality(Common),
    /// Limit sets of random seeds.
    OmegaCensus(Common),
    /// Filtration audits on asymptotically periodic linear problems.
    AsymptoticsAudit(Common),
    /// Randomized perturbed-recursion suite.
    RecursionLab(Common),
    /// Full audit plan of the scenario.
    Report(Common),
    /// List the shipped scenarios.
    Catalog,
}

fn setup(c: &Common) -> CliResult<Scenario> {
    if let Some(n) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::ThreadPool(e.to_string()))?;
    }
    Scenario::load(&c.scenario)?.with_overrides(c.seed, c.resolution)
}

fn single(sc: &Scenario, id: AuditId) -> Vec<AuditSpec> {
    vec![sc
        .config
        .audits
        .iter()
        .find(|a| a.id == id)
        .cloned()
        .unwrap_or_else(|| AuditSpec::new(id))]
}

fn audit_run(c: &Common, plan: impl FnOnce(&Scenario) -> Vec<AuditSpec>) -> CliResult<i32> {
    let sc = setup(c)?;
    let plan = plan(&sc);
    let out = run_plan(&sc, &plan)?;
    write_outputs(&out, &c.out, &c.plot)?;
    for a in &out.report.audits {
        println!("{:<20} {:?}", a.id.name(), a.status);
        for n in &a.notes {
            println!("    {n}");
        }
    }
    println!(
        "{} passed, {} failed, {} inconclusive; report in {}",
        out.report.summary.passed,
        out.report.summary.failed,
        out.report.summary.inconclusive,
        c.out.join("report.json").display()
    );
    Ok(out.report.exit_code(c.strict))
}

fn op_run(c: &Common, name: &str, f: impl FnOnce(&Scenario) -> CliResult<(serde_json::Value, Vec<Table>)>) -> CliResult<i32> {
    let sc = setup(c)?;
    let (value, tables) = f(&sc)?;
    std::fs::create_dir_all(&c.out).map_err(|e| CliError::io(&c.out, e))?;
    let path = c.out.join(format!("{name}.json"));
    let body = serde_json::to_string_pretty(&value)?;
    std::fs::write(&path, &body).map_err(|e| CliError::io(&path, e))?;
    emit_tables(&tables, &c.plot, &c.out)?;
    println!("{body}");
    Ok(0)
}

fn emit_tables(tables: &[Table], kinds: &[String], dir: &Path) -> CliResult<()> {
    let kinds: Vec<String> = if kinds.is_empty() {
        rdlab_cli::plot::available_kinds(tables).into_iter().map(String::from).collect()
    } else {
        kinds.to_vec()
    };
    for k in kinds {
        emit_plot_data(tables, &k, dir)?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Command::Simulate { common, periods } => op_run(&common, "simulate", |sc| rdlab_cli::ops::simulate(sc, periods)),
        Command::Fixpoint(c) => op_run(&c, "fixpoint", rdlab_cli::ops::fixpoint),
        Command::Floquet(c) => op_run(&c, "floquet", rdlab_cli::ops::floquet),
        Command::Census(c) => audit_run(&c, |sc| single(sc, AuditId::Census)),
        Command::Connect(c) => audit_run(&c, |sc| single(sc, AuditId::Connections)),
        Command::Transversality(c) => audit_run(&c, |sc| single(sc, AuditId::Transversality)),
        Command::OmegaCensus(c) => audit_run(&c, |sc| single(sc, AuditId::OmegaCensus)),
        Command::AsymptoticsAudit(c) => audit_run(&c, |sc| single(sc, AuditId::Filtration)),
        Command::RecursionLab(c) => audit_run(&c, |sc| single(sc, AuditId::RecursionSuite)),
        Command::Report(c) => audit_run(&c, |sc| sc.config.audits.clone()),
        Command::Catalog => {
            for name in CATALOG {
                println!("{name}");
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(4)
        }
    }
}
