use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hybred_cli::commands::{self, CliError, Outcome, Overrides, EXIT_INPUT};
use hybred_cli::report::to_json;
use hybred_cli::spec::{read_raw, SystemSpec};
use hybred_core::phase::Integrator;

/// Simulate, verify and reduce simple hybrid Hamiltonian systems with
/// translation symmetries.
#[derive(Debug, Parser)]
#[command(name = "hybred", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the hybrid flow and write the trajectory CSV.
    Simulate(Args),
    /// Run every symmetry check and report the cocycle and isotropy.
    Verify(Args),
    /// Build the reduced system at a momentum level.
    Reduce(Args),
    /// Compare the projected full flow with the reduced flow.
    Compare(Args),
}

#[derive(Debug, clap::Args)]
struct Args {
    /// System spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Initial state `q1,..,qn,p1,..,pn`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    /// Final time.
    #[arg(long = "T")]
    t_end: Option<f64>,
    /// Step size.
    #[arg(long)]
    h: Option<f64>,
    /// Momentum level `mu_1,..,mu_k`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    mu: Option<Vec<f64>>,
    /// Seed of every sampled check.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for report.json and trajectory CSVs.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    tol_state: Option<f64>,
    #[arg(long)]
    tol_time: Option<f64>,
    /// Override a spec parameter, e.g. `--param e=0.5` (repeatable).
    #[arg(long = "param", value_parser = parse_assignment, allow_hyphen_values = true)]
    params: Vec<(String, f64)>,
    /// `leapfrog` or `rk4` (simulate only).
    #[arg(long)]
    integrator: Option<Integrator>,
}

fn parse_assignment(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or("expected name=value")?;
    let value = value.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((name.trim().to_string(), value))
}

fn load(args: &Args) -> Result<SystemSpec, CliError> {
    let mut raw = read_raw(&args.spec)?;
    for (name, value) in &args.params {
        raw.set_parameter(name, *value)?;
    }
    Ok(SystemSpec::from_raw(raw)?)
}

fn emit(outcome: &Outcome, out: Option<&PathBuf>, csv_to_stdout: bool) -> Result<(), CliError> {
    let json = to_json(&outcome.report);
    match out {
        Some(dir) => {
            let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", dir.display()));
            std::fs::create_dir_all(dir).map_err(io)?;
            std::fs::write(dir.join("report.json"), &json).map_err(io)?;
            for (name, table) in &outcome.tables {
                table.write(&dir.join(name)).map_err(io)?;
            }
            print!("{json}");
        }
        None if csv_to_stdout => {
            for (_, table) in &outcome.tables {
                print!("{}", table.to_csv());
            }
            eprint!("{json}");
        }
        None => print!("{json}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<i32, CliError> {
    let (args, run, csv): (
        &Args,
        fn(&SystemSpec, &Overrides) -> Result<Outcome, CliError>,
        bool,
    ) = match &cli.command {
        Command::Simulate(a) => (a, commands::simulate, true),
        Command::Verify(a) => (a, commands::verify, false),
        Command::Reduce(a) => (a, commands::reduce, false),
        Command::Compare(a) => (a, commands::compare, false),
    };
    let spec = load(args)?;
    let overrides = Overrides {
        x0: args.x0.clone(),
        t_end: args.t_end,
        h: args.h,
        mu: args.mu.clone(),
        seed: args.seed,
        tol_state: args.tol_state,
        tol_time: args.tol_time,
        integrator: args.integrator,
    };
    let outcome = run(&spec, &overrides)?;
    emit(&outcome, args.out.as_ref(), csv)?;
    Ok(outcome.code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
