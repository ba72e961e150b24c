use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nfisac_cli::cache::cache_dir;
use nfisac_cli::commands::{cmd_cube_dump, cmd_evaluate, cmd_sense, cmd_train, Options, Panel};
use nfisac_cli::{CliError, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "nfisac", version, about = "Near-field ISAC beam training and reduced-dimension STAP")]
struct Cli {
    /// Caps the number of worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario JSON; the built-in case study when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Drops receiver noise (sweep noise for train, cube noise otherwise).
    #[arg(long)]
    noiseless: bool,
}

impl Common {
    fn options(self) -> Options {
        Options { config: self.config, out: self.out, seed: self.seed, noiseless: self.noiseless }
    }
}

#[derive(Subcommand)]
enum Command {
    /// DFT sweep, spread-table lookup and polar refinement for the user.
    Train(Common),
    /// Reduced-dimension STAP over the trained candidate window, CFAR and
    /// parameter estimation.
    Sense {
        #[command(flatten)]
        common: Common,
        /// Defaults to OUT/training_report.json.
        #[arg(long)]
        training_report: Option<PathBuf>,
    },
    /// Writes one performance panel as CSV.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// sinr, rate, transverse or complexity.
        #[arg(long)]
        panel: String,
    },
    /// Writes the synthesized radar cube in binary form.
    CubeDump(Common),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Train(common) => {
            cmd_train(&common.options(), &cache_dir())?;
        }
        Command::Sense { common, training_report } => {
            cmd_sense(&common.options(), training_report.as_deref())?;
        }
        Command::Evaluate { common, panel } => {
            let panel = Panel::parse(&panel)?;
            let path = cmd_evaluate(&common.options(), panel, &cache_dir())?;
            eprintln!("wrote {}", path.display());
        }
        Command::CubeDump(common) => {
            let path = cmd_cube_dump(&common.options())?;
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nfisac: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
