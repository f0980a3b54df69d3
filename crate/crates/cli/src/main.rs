use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qtransport_cli::run::{self, VerifyCase};
use qtransport_cli::{load_config, CliError};

#[derive(Parser)]
#[command(name = "qtransport", version, about = "Transient heat transport through quadratic open systems")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact or weak-coupling currents on the configured grid.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides outputs.directory).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dump_state: bool,
        #[arg(long)]
        dump_kernels: bool,
    },
    /// Steady-state currents from the Landauer integral.
    Landauer {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare the engine with an independent reference and print a JSON report.
    Verify {
        #[arg(long)]
        case: VerifyCase,
        #[arg(long)]
        config: PathBuf,
    },
    /// Solve and dump the dressed Green function and kernels.
    Kernels {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dump_kernels: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Simulate { config, out, dump_state, dump_kernels } => {
            let mut cfg = load_config(&config)?;
            cfg.outputs.dump_state |= dump_state;
            cfg.outputs.dump_kernels |= dump_kernels;
            let dir = out
                .or_else(|| cfg.outputs.directory.clone())
                .ok_or_else(|| CliError::Config("no output directory: pass --out or set outputs.directory".into()))?;
            let summary = run::simulate(&cfg, &dir)?;
            for p in &summary.outputs {
                println!("{}", p.display());
            }
        }
        Command::Landauer { config } => {
            let cfg = load_config(&config)?;
            println!("{}", serde_json::to_string_pretty(&run::landauer(&cfg)?).expect("serializes"));
        }
        Command::Verify { case, config } => {
            let cfg = load_config(&config)?;
            let report = run::verify(&cfg, case)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("serializes"));
            if !report.pass {
                return Err(CliError::Verification(format!("{} max_rel_err {:.3e}", report.scenario, report.max_rel_err)));
            }
        }
        Command::Kernels { config, dump_kernels } => {
            let cfg = load_config(&config)?;
            for p in run::kernels(&cfg, &dump_kernels)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("QT_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
