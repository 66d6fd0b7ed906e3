//! `pflow` command-line harness: run any solver on any case file, compare
//! methods side by side, and check the analytic derivatives.
//!
//! Exit codes: 0 success/convergence, 1 input error, 2 non-convergence.

mod methods;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use methods::{Family, Method, MethodRun};
use pflow_core::network::{parse_case, CaseFormat, NetworkCase};

#[derive(Parser)]
#[command(
    name = "pflow",
    version,
    about = "Distribution and transmission power-flow toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one solver on a case and write solution + convergence CSVs.
    Run(RunArgs),
    /// Run several methods and emit a comparison table.
    Compare(CompareArgs),
    /// Slope-test the analytic gradient (and Hessian for epts).
    Checkgrad(CheckgradArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Case file: a path, or a name resolved in PFLOW_DATA_DIR / the bundled
    /// case directory.
    #[arg(long)]
    case: String,
    /// Problem family.
    #[arg(long, value_parser = Family::parse)]
    family: Family,
    /// Solver tolerance (meaning depends on the method: power mismatch for
    /// bfs-sweep and the classical solvers, gradient norm for manifold-*).
    #[arg(long)]
    tol: Option<f64>,
    /// Iteration budget (sweeps, Newton iterations, half-iterations, or
    /// outer manifold iterations).
    #[arg(long)]
    max_iters: Option<usize>,
    /// Seed for randomized diagnostics.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Solver to run.
    #[arg(long, value_parser = Method::parse)]
    method: Method,
    /// Output directory for solution.csv and convergence.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated list of methods.
    #[arg(long, value_delimiter = ',', required = true)]
    method: Vec<String>,
    /// Output directory for comparison.csv (and bus_results.csv for epts).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckgradArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of random tangent directions per check.
    #[arg(long, default_value_t = 3)]
    directions: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Checkgrad(args) => cmd_checkgrad(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("pflow: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Resolves `--case` against the filesystem, then PFLOW_DATA_DIR, then the
/// bundled case directory.
fn resolve_case_path(spec: &str) -> Result<PathBuf> {
    let direct = Path::new(spec);
    if direct.exists() {
        return Ok(direct.to_path_buf());
    }
    if let Ok(dir) = std::env::var("PFLOW_DATA_DIR") {
        let candidate = Path::new(&dir).join(spec);
        if candidate.exists() {
            return Ok(candidate);
        }
    }
    let bundled = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../cases")
        .join(spec);
    if bundled.exists() {
        return Ok(bundled);
    }
    bail!("case file not found: {spec}");
}

fn load_case(spec: &str) -> Result<NetworkCase<f64>> {
    let path = resolve_case_path(spec)?;
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let format = if path.extension().is_some_and(|e| e == "csv") {
        CaseFormat::CsvPair
    } else {
        CaseFormat::Json
    };
    parse_case(&text, format).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let case = load_case(&args.common.case)?;
    let method = args.method;
    if !method.valid_for(args.common.family) {
        bail!(
            "method {} not valid for family {}",
            method.name(),
            args.common.family.name()
        );
    }
    let run = methods::execute(
        method,
        args.common.family,
        &case,
        args.common.tol,
        args.common.max_iters,
        args.common.seed,
    )?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    std::fs::write(args.out.join("solution.csv"), &run.solution_csv)?;
    std::fs::write(args.out.join("convergence.csv"), &run.convergence_csv)?;
    println!("{}", run.summary_line());
    if run.converged {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(2))
    }
}

fn cmd_compare(args: CompareArgs) -> Result<ExitCode> {
    let case = load_case(&args.common.case)?;
    let mut methods_list = Vec::with_capacity(args.method.len());
    for name in &args.method {
        let m = Method::parse(name).map_err(|e| anyhow::anyhow!(e))?;
        if !m.valid_for(args.common.family) {
            bail!(
                "method {} not valid for family {}",
                m.name(),
                args.common.family.name()
            );
        }
        methods_list.push(m);
    }

    let mut rows: Vec<(Method, Result<MethodRun>)> = Vec::new();
    for &m in &methods_list {
        let run = methods::execute(
            m,
            args.common.family,
            &case,
            args.common.tol,
            args.common.max_iters,
            args.common.seed,
        );
        rows.push((m, run));
    }

    std::fs::create_dir_all(&args.out)?;
    let mut table = String::from("method,loss_kw,v_min_pu,final_cost,iterations,time_s\n");
    for (m, run) in &rows {
        match run {
            Ok(r) => table.push_str(&r.comparison_row()),
            Err(e) => table.push_str(&format!("{},error: {},,,,\n", m.name(), flatten(e))),
        }
    }
    std::fs::write(args.out.join("comparison.csv"), &table)?;

    if args.common.family == Family::Epts {
        let mut per_bus = String::from("method,bus,v_pu,theta_abs_rad,p_pu,q_pu\n");
        for (_, run) in &rows {
            if let Ok(r) = run {
                per_bus.push_str(&r.bus_block);
            }
        }
        std::fs::write(args.out.join("bus_results.csv"), &per_bus)?;
    }
    print!("{table}");
    Ok(ExitCode::SUCCESS)
}

fn flatten(e: &anyhow::Error) -> String {
    format!("{e:#}").replace(',', ";")
}

fn cmd_checkgrad(args: CheckgradArgs) -> Result<ExitCode> {
    let case = load_case(&args.common.case)?;
    let report = methods::checkgrad(&case, args.common.family, args.common.seed, args.directions)?;
    print!("{report}");
    Ok(ExitCode::SUCCESS)
}
