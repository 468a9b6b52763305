use std::path::PathBuf;

use clap::{Parser, Subcommand};
use nodalflow::cli;

#[derive(Parser)]
#[command(name = "nodalflow", version, about = "Nodal solutions of coupled Schrödinger systems by a descending flow")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the structural conditions on the coupling and print their margins.
    Validate { config: PathBuf },
    /// Search for solutions with the prescribed nodal numbers.
    Solve {
        config: PathBuf,
        /// Run even when the multiplicity conditions fail.
        #[arg(long)]
        force: bool,
        /// Output directory; overrides output.dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate the flow from a profile CSV.
    Flow {
        config: PathBuf,
        #[arg(long)]
        initial: PathBuf,
        /// Trajectory JSONL path; defaults to <output.dir>/trajectory.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the property suite.
    Verify { config: PathBuf },
}

fn main() {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { cli::EXIT_INPUT } else { cli::EXIT_OK };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let mut out = std::io::stdout().lock();
    let code = match args.command {
        Command::Validate { config } => cli::cmd_validate(&config, &mut out),
        Command::Solve { config, force, out: dir } => cli::cmd_solve(&config, force, dir, &mut out),
        Command::Flow { config, initial, out: path } => cli::cmd_flow(&config, &initial, path, &mut out),
        Command::Verify { config } => cli::cmd_verify(&config, &mut out),
    };
    drop(out);
    std::process::exit(code);
}
