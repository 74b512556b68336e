//! `hjh`: command-line front end of `hjh-core`.
//!
//! Exit codes: 0 success, 1 unreadable configuration, 2 invalid
//! configuration or instance, 3 solver failure, 4 failed property suite or
//! convergence trend.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "hjh", version, about = "Effective interface conditions for oscillating Hamilton-Jacobi problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the structural assumptions and print the constants.
    Validate(Common),
    /// Tabulate the effective tangential Hamiltonian E.
    Effective(Common),
    /// Solve the oscillating problem at scale run.eps.
    SolveEps(Common),
    /// Solve the homogenized problem.
    SolveLimit(Common),
    /// Compare the two over run.eps_list.
    Converge(Common),
    /// Run the property suite.
    Props(Common),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Run directory for data files and the manifest.
    #[arg(long, default_value = "hjh-out")]
    pub out: PathBuf,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Replace a configuration value, e.g. solver.cell.eps_fix=1e-8.
    #[arg(long = "tol-override", value_name = "KEY=VAL")]
    pub overrides: Vec<String>,
}

impl Command {
    fn split(self) -> (run::Kind, Common) {
        match self {
            Command::Validate(c) => (run::Kind::Validate, c),
            Command::Effective(c) => (run::Kind::Effective, c),
            Command::SolveEps(c) => (run::Kind::SolveEps, c),
            Command::SolveLimit(c) => (run::Kind::SolveLimit, c),
            Command::Converge(c) => (run::Kind::Converge, c),
            Command::Props(c) => (run::Kind::Props, c),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HJH_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (kind, common) = cli.command.split();
    let code = run::execute(kind, &common);
    ExitCode::from(code)
}
