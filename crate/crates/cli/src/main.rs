//! `rbflow` — command-line driver: scenario ingestion, full and limit runs,
//! convergence sweeps, estimate checks and plot-table conversion.
//!
//! Exit codes: 0 success, 1 validation / parse / i/o error, 2 admissibility
//! breach, 3 solver failure.  Runs that end early at a breach still write the
//! rows computed so far before exiting with code 2.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rbflow::error::{Error, Result};
use rbflow::harness::{self, EstimateFixture, SweepOptions};
use rbflow::output::{self, fmt_f64};
use rbflow::scenario::{load_scenario, Scenario, SolverKind};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "rbflow", version, about = "Rigid bodies in a bounded two-dimensional ideal fluid")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate the full fluid–body system.
    RunFull {
        #[command(flatten)]
        common: Common,
        /// Override the scale of every shrinking body.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Integrate the limit system (small bodies replaced by point vortices).
    RunLimit {
        #[command(flatten)]
        common: Common,
    },
    /// Compare full runs at several scales with the limit system.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated scales.
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.05, 0.025])]
        eps: Vec<f64>,
        /// Also compute the modulation diagnostics of every small body.
        #[arg(long)]
        modulation: bool,
    },
    /// Measure the asymptotic estimates of the potentials on a fixture.
    CheckEstimates {
        #[arg(long, value_enum, default_value_t = Fixture::Standard)]
        fixture: Fixture,
        #[arg(long, default_value_t = 64)]
        panels: usize,
        /// Comma-separated scales.
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.05, 0.025, 0.0125])]
        eps: Vec<f64>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Convert wide trajectory CSVs into long-format plot tables.
    EmitPlots {
        /// Input tables; `<stem>.long.csv` is written for each.
        #[arg(long = "csv", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Override the boundary solver of the scenario.
    #[arg(long, value_enum)]
    solver: Option<Solver>,
    /// Reflection tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Solver {
    Direct,
    Reflections,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Fixture {
    Standard,
    TwoSmall,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Breach { .. } => 2,
        Error::SolverFailure { .. } | Error::ContractionFailure { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::InvalidParameter("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::InvalidParameter(e.to_string()))?;
    }
    Ok(())
}

fn prepare(common: &Common) -> Result<Scenario> {
    set_threads(common.threads)?;
    let mut scenario = load_scenario(&common.scenario)?;
    if common.solver.is_some() || common.tol.is_some() {
        let kind = match common.solver {
            Some(Solver::Direct) => SolverKind::Direct,
            Some(Solver::Reflections) => SolverKind::Reflections,
            None => scenario.numerics.solver,
        };
        scenario = scenario.with_solver(kind, common.tol);
        scenario.validate()?;
    }
    fs::create_dir_all(&common.out_dir)?;
    Ok(scenario)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write_samples(scenario: &Scenario, out_dir: &Path, default_csv: &str, samples: &[output::Sample]) -> Result<()> {
    let csv = scenario.outputs.csv.as_deref().unwrap_or(default_csv);
    write_file(&out_dir.join(csv), &output::csv_string(samples)?)?;
    if let Some(jsonl) = &scenario.outputs.jsonl {
        let mut buf = Vec::new();
        output::write_jsonl(&mut buf, samples)?;
        write_file(&out_dir.join(jsonl), &String::from_utf8_lossy(&buf))?;
    }
    Ok(())
}

fn report_breach(breach: &Option<String>) -> u8 {
    match breach {
        Some(msg) => {
            eprintln!("run stopped early: {msg}");
            2
        }
        None => 0,
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::RunFull { common, epsilon } => {
            let scenario = prepare(&common)?;
            let (sys, state) = scenario.full_system(epsilon)?;
            let stored = harness::record_full(&sys, &state, scenario.numerics.dt, scenario.numerics.t_end)?;
            write_samples(&scenario, &common.out_dir, "full.csv", &stored.samples(scenario.outputs.stride))?;
            Ok(report_breach(&stored.breach))
        }
        Command::RunLimit { common } => {
            let scenario = prepare(&common)?;
            let (sys, state) = scenario.limit_system()?;
            let stored = harness::record_limit(&sys, &state, scenario.numerics.dt, scenario.numerics.t_end)?;
            write_samples(&scenario, &common.out_dir, "limit.csv", &stored.samples(scenario.outputs.stride))?;
            Ok(report_breach(&stored.breach))
        }
        Command::Sweep { common, eps, modulation } => {
            let scenario = prepare(&common)?;
            let mut opts = SweepOptions::for_scenario(&scenario)?;
            opts.modulation = modulation;
            let out = harness::convergence_sweep(&scenario, &eps, &opts)?;
            write_file(&common.out_dir.join("limit.csv"), &output::csv_string(&out.limit_samples)?)?;
            let mut summary = String::new();
            for (member, samples) in out.table.members.iter().zip(&out.member_samples) {
                let name = format!("eps_{}.csv", fmt_f64(member.epsilon));
                write_file(&common.out_dir.join(&name), &output::csv_string(samples)?)?;
                summary.push_str(&serde_json::to_string(&json!({ "csv": name, "member": member })).map_err(|e| Error::Io(e.to_string()))?);
                summary.push('\n');
            }
            let small = scenario.small_bodies();
            let big = scenario.big_bodies();
            let bodies: Vec<usize> = small.iter().chain(&big).cloned().collect();
            let monotone: Vec<_> = bodies
                .iter()
                .map(|&b| json!({ "body": b, "strictly_decreasing": harness::strictly_decreasing(&out.table.errors(b)) }))
                .collect();
            let aggregate = json!({
                "dt": out.table.dt,
                "t_end": out.table.t_end,
                "limit_breach": out.table.limit_breach,
                "error_monotone": monotone,
                "non_monotone_members": out.table.non_monotone(),
            });
            summary.push_str(&aggregate.to_string());
            summary.push('\n');
            write_file(&common.out_dir.join("summary.jsonl"), &summary)?;
            let breached = out.table.limit_breach.is_some() || out.table.members.iter().any(|m| m.breach.is_some());
            Ok(if breached { 2 } else { 0 })
        }
        Command::CheckEstimates { fixture, panels, eps, out_dir, threads } => {
            set_threads(threads)?;
            fs::create_dir_all(&out_dir)?;
            let fx = match fixture {
                Fixture::Standard => EstimateFixture::standard(panels)?,
                Fixture::TwoSmall => EstimateFixture::two_small(panels)?,
            };
            let report = harness::estimate_checks(&fx, &eps)?;
            let mut buf = Vec::new();
            output::write_jsonl(&mut buf, &report.measurements)?;
            output::write_jsonl(&mut buf, &report.checks)?;
            write_file(&out_dir.join("estimates.jsonl"), &String::from_utf8_lossy(&buf))?;
            for c in &report.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.requirement);
            }
            Ok(0)
        }
        Command::EmitPlots { inputs, out_dir } => {
            fs::create_dir_all(&out_dir)?;
            for input in inputs {
                let text = fs::read_to_string(&input).map_err(|e| Error::Io(format!("{}: {e}", input.display())))?;
                let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("table");
                write_file(&out_dir.join(format!("{stem}.long.csv")), &output::long_format(&text)?)?;
            }
            Ok(0)
        }
    }
}
