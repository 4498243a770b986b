use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fbvie_cli::{run, Command, Exit};

#[derive(Parser)]
#[command(name = "fbvie", version, about = "Solve and verify forward-backward Volterra integral equations")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `[output] dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for sampling and random starts; overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the continuation solver and write the solution, fields and report.
    Solve(Common),
    /// Run every applicable verification check and write verify.json.
    Verify(Common),
    /// Sample the monotonicity conditions and write monotonicity.json.
    CheckMono(Common),
    /// Solve on a list of grids and write convergence.csv.
    Convergence {
        #[command(flatten)]
        common: Common,
        /// Comma-separated interval counts; overrides `[convergence] intervals`.
        #[arg(long, value_delimiter = ',')]
        intervals: Option<Vec<usize>>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { Exit::ConfigError.code() } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (command, common, intervals) = match cli.command {
        Cmd::Solve(c) => (Command::Solve, c, None),
        Cmd::Verify(c) => (Command::Verify, c, None),
        Cmd::CheckMono(c) => (Command::CheckMono, c, None),
        Cmd::Convergence { common, intervals } => (Command::Convergence, common, intervals),
    };
    let outcome = run(command, &common.config, common.out, common.seed, intervals);
    for path in &outcome.written {
        println!("wrote {}", path.display());
    }
    if outcome.exit == Exit::Success {
        println!("{}: {}", command.name(), outcome.summary);
    } else {
        eprintln!("{}: {}", command.name(), outcome.summary);
    }
    ExitCode::from(outcome.exit.code())
}
