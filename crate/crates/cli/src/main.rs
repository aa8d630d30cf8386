use std::path::PathBuf;
use std::process::ExitCode;

use catprobe_cli::{load_spec, run, Mode, Settings};
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "catprobe", version, about = "Conditional cat-state preparation by homodyne probing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// Flat TOML config, or a JSON sidecar of an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Steady cavity amplitudes for every level n.
    AlphaCircle(RunArgs),
    /// Conditional atomic state for a given integrated current.
    State(RunArgs),
    /// Purity of the conditional state against the integrated current.
    #[command(name = "purity-vs-Y", alias = "purity-vs-y")]
    PurityVsY(RunArgs),
    /// Probability density of the integrated current.
    #[command(name = "p-of-Y", alias = "p-of-y")]
    POfY(RunArgs),
    /// Peak position of the population distribution against the integrated current.
    #[command(name = "np-vs-Y", alias = "np-vs-y")]
    NpVsY(RunArgs),
    /// Probe-then-decay trajectories summarised by purity and peak separation.
    SqueezedScatter(RunArgs),
    /// Compares the Fock-space oracle with the reduced integrators.
    OracleValidate(RunArgs),
    /// Time-reversal residuals of the Gaussian integration.
    SymmetryCheck(RunArgs),
}

impl Command {
    fn split(self) -> (Mode, RunArgs) {
        match self {
            Command::AlphaCircle(a) => (Mode::AlphaCircle, a),
            Command::State(a) => (Mode::State, a),
            Command::PurityVsY(a) => (Mode::PurityVsY, a),
            Command::POfY(a) => (Mode::POfY, a),
            Command::NpVsY(a) => (Mode::NpVsY, a),
            Command::SqueezedScatter(a) => (Mode::SqueezedScatter, a),
            Command::OracleValidate(a) => (Mode::OracleValidate, a),
            Command::SymmetryCheck(a) => (Mode::SymmetryCheck, a),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (mode, args) = cli.command.split();
    let result = load_spec(mode, args.config.as_deref(), args.settings).and_then(run);
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
