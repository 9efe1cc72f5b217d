//! `drsim` — command-line front end for the demand-response scheduler.
//!
//! Thin shell over the `dr-core` library: every subcommand is a direct
//! composition of library calls, so a run from the CLI and a run from the
//! library produce identical files. All numbers printed to stdout use six
//! significant digits so output is stable enough to diff or commit.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dr_core::coordinator::{IterationRecord, RunError, RunTrace};
use dr_core::oracle::{self, OracleError};
use dr_core::report::{render_convergence_svg, GapReport, ReportError};
use dr_core::scenario::{self, AlgoParams, GenerationConfig, ScenarioError};

/// Environment variable consulted for the worker-thread count when the
/// `--workers` flag is absent. The params file is the final fallback.
const WORKERS_ENV: &str = "DRSIM_WORKERS";

const EXIT_CODE_HELP: &str = "\
Exit codes:
  0  success
  2  command-line usage error
  3  file I/O failure (missing, unreadable, or unwritable path)
  4  malformed input (schema or version mismatch, invalid scenario/parameters)
  5  instance too large (choice-space cap or search budget exceeded)
  6  infeasible (no schedule satisfies the supply caps)";

#[derive(Parser)]
#[command(
    name = "drsim",
    version,
    about = "Distributed demand-response scheduling simulator",
    after_help = EXIT_CODE_HELP,
    after_long_help = EXIT_CODE_HELP
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded random scenario file
    Generate(GenerateArgs),
    /// Run the distributed price-coordination algorithm on a scenario
    Run(RunArgs),
    /// Solve the centralized problem exactly (small instances only)
    Oracle(OracleArgs),
    /// Report the best recovered cost from a trace, and the gap when an
    /// oracle result is supplied
    Gap(GapArgs),
    /// Render a primal/dual convergence chart from a trace as SVG
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator seed; a seed fully determines the scenario
    #[arg(long)]
    seed: u64,
    /// Number of households
    #[arg(long)]
    households: usize,
    /// Number of time slots in the horizon
    #[arg(long)]
    slots: usize,
    /// Appliances per household
    #[arg(long)]
    appliances: usize,
    /// Drop the joint-choice-count ceiling, allowing instances too large for
    /// the exact centralized solver (use for scale runs)
    #[arg(long)]
    no_choice_limit: bool,
    /// Scenario output path (TOML)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML)
    #[arg(long)]
    scenario: PathBuf,
    /// Algorithm parameter file (TOML); built-in defaults when omitted
    #[arg(long)]
    params: Option<PathBuf>,
    /// Worker threads for household solves; 0 means one per CPU.
    /// Precedence: this flag, then DRSIM_WORKERS, then the params file
    #[arg(long)]
    workers: Option<usize>,
    /// Per-iteration trace output; a .csv extension writes CSV, any other
    /// extension writes versioned TOML
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Best recovered schedule output (TOML)
    #[arg(long)]
    solution_out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// Scenario file (TOML)
    #[arg(long)]
    scenario: PathBuf,
    /// Search node budget
    #[arg(long, default_value_t = oracle::DEFAULT_NODE_BUDGET)]
    node_budget: u64,
    /// Result output path (TOML); printed to stdout either way
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GapArgs {
    /// Trace file from `run` (.csv or TOML)
    #[arg(long)]
    trace: PathBuf,
    /// Oracle result file; omitted, only the best recovered cost is reported
    #[arg(long)]
    oracle: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Trace file from `run` (.csv or TOML)
    #[arg(long)]
    trace: PathBuf,
    /// SVG output path
    #[arg(long)]
    out: PathBuf,
}

/// A diagnostic plus the process exit code it maps to (see EXIT_CODE_HELP).
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        CliError { code, message: message.into() }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        let code = match &e {
            ScenarioError::Io { .. } => 3,
            _ => 4,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        if let OracleError::Invalid(inner) = e {
            return inner.into();
        }
        let code = match &e {
            OracleError::Invalid(_) => unreachable!("handled above"),
            OracleError::BudgetExceeded { .. } | OracleError::ChoiceSpaceTooLarge { .. } => 5,
            OracleError::Infeasible => 6,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        if let RunError::Invalid(inner) = e {
            return inner.into();
        }
        CliError::new(4, e.to_string())
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        let code = match &e {
            ReportError::NoFeasibleIterate => 6,
            _ => 4,
        };
        CliError::new(code, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => generate(args),
        Command::Run(args) => run(args),
        Command::Oracle(args) => oracle_cmd(args),
        Command::Gap(args) => gap(args),
        Command::Plot(args) => plot(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn generate(args: GenerateArgs) -> Result<(), CliError> {
    let config = GenerationConfig {
        max_central_choices: if args.no_choice_limit {
            None
        } else {
            GenerationConfig::default().max_central_choices
        },
        ..GenerationConfig::default()
    };
    let scenario = scenario::generate_scenario(
        args.seed,
        args.households,
        args.slots,
        args.appliances,
        &config,
    )?;
    scenario::save_scenario(&scenario, &args.out)?;
    println!(
        "wrote {}: {} households x {} appliances over {} slots (seed {})",
        args.out.display(),
        args.households,
        args.appliances,
        args.slots,
        args.seed
    );
    Ok(())
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let scenario = scenario::load_scenario(&args.scenario)?;
    let mut params = match &args.params {
        Some(path) => scenario::load_params(path)?,
        None => AlgoParams::default(),
    };
    if let Some(workers) = resolve_workers(args.workers)? {
        params.worker_count = workers;
    }
    let trace = dr_core::run(&scenario, &params)?;

    print_run_summary(&trace);
    if let Some(path) = &args.trace_out {
        if is_csv(path) {
            scenario::save_trace_csv(&trace.records, path)?;
        } else {
            scenario::save_trace(&trace, path)?;
        }
        println!("wrote trace: {}", path.display());
    }
    if let Some(path) = &args.solution_out {
        let best = trace.best.as_ref().ok_or_else(|| {
            CliError::new(6, "no iterate satisfied the supply caps; nothing to save")
        })?;
        scenario::save_solution(best, path)?;
        println!("wrote solution: {}", path.display());
    }
    Ok(())
}

fn print_run_summary(trace: &RunTrace) {
    println!("iterations: {}", trace.records.len());
    if let Some(last) = trace.records.last() {
        println!("final dual: {}", sig6(last.dual));
    }
    match &trace.best {
        Some(best) => {
            println!("best primal: {} (iteration {})", sig6(best.objective), best.k)
        }
        None => println!("best primal: none (every iterate violated a supply cap)"),
    }
}

fn oracle_cmd(args: OracleArgs) -> Result<(), CliError> {
    let scenario = scenario::load_scenario(&args.scenario)?;
    let result = oracle::solve_central(&scenario, args.node_budget)?;
    println!("optimum: {}", sig6(result.objective));
    println!("nodes explored: {}", result.nodes_explored);
    if let Some(path) = &args.out {
        scenario::save_oracle_result(&result, path)?;
        println!("wrote oracle result: {}", path.display());
    }
    Ok(())
}

fn gap(args: GapArgs) -> Result<(), CliError> {
    let records = load_records(&args.trace)?;
    let reference = match &args.oracle {
        Some(path) => Some(scenario::load_oracle_result(path)?.objective),
        None => None,
    };
    let report = GapReport::from_records(&records, reference)?;
    println!(
        "best primal: {} (iteration {})",
        sig6(report.primal_best),
        report.best_iteration
    );
    match (report.reference, report.gap_percent) {
        (Some(reference), Some(gap)) => {
            println!("reference optimum: {}", sig6(reference));
            println!("gap: {:.4}%", gap);
        }
        _ => println!("reference optimum: none supplied; gap not computed"),
    }
    println!(
        "parameters: kappa1={}, mu_hat_min={}, iterations={}",
        sig6(report.kappa1),
        sig6(report.mu_hat_min),
        report.maxiter
    );
    Ok(())
}

fn plot(args: PlotArgs) -> Result<(), CliError> {
    let records = load_records(&args.trace)?;
    let svg = render_convergence_svg(&records)?;
    write_text(&args.out, &svg)?;
    println!("wrote plot: {} ({} iterations)", args.out.display(), records.len());
    Ok(())
}

/// Worker-count override: the `--workers` flag wins, then DRSIM_WORKERS,
/// then `None` (leave whatever the params file said).
fn resolve_workers(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(WORKERS_ENV) {
        Ok(text) => match text.trim().parse::<usize>() {
            Ok(n) => Ok(Some(n)),
            Err(_) => Err(CliError::new(
                2,
                format!("{WORKERS_ENV} must be a nonnegative integer, got {text:?}"),
            )),
        },
        Err(_) => Ok(None),
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|ext| ext.eq_ignore_ascii_case("csv"))
}

fn load_records(path: &Path) -> Result<Vec<IterationRecord>, CliError> {
    if is_csv(path) {
        Ok(scenario::load_trace_csv(path)?)
    } else {
        Ok(scenario::load_trace(path)?.records)
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::new(3, format!("{}: {e}", path.display())))
}

/// Six significant digits, plain decimal notation.
fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

#[cfg(test)]
mod tests {
    use super::sig6;

    #[test]
    fn sig6_keeps_six_significant_digits() {
        assert_eq!(sig6(7.188866223), "7.18887");
        assert_eq!(sig6(0.0012345678), "0.00123457");
        assert_eq!(sig6(123456.789), "123457");
        assert_eq!(sig6(-42.0), "-42.0000");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(10.0), "10.0000");
    }
}
