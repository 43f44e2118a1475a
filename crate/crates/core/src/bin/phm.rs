use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use phm_protocol::runner::{audit, replay, run_config_file, RunOptions};
use phm_protocol::Error;

#[derive(Parser)]
#[command(
    name = "phm",
    version,
    about = "Leakage-safe evaluation runs for prognostics time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a run from a JSON config and write its run directory.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Cache directory (defaults to $PHM_CACHE_DIR).
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_cache: bool,
    },
    /// Re-execute a run from its resolved config and compare metrics.
    Replay {
        run_dir: PathBuf,
        #[arg(long)]
        allow_code_drift: bool,
    },
    /// Re-check a run's leakage record.
    Audit { run_dir: PathBuf },
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            cache,
            seed,
            no_cache,
        } => {
            let opts = RunOptions {
                out,
                cache,
                seed,
                no_cache,
            };
            match run_config_file(&config, &opts) {
                Ok((outcome, dir)) => {
                    println!("run directory: {}", dir.display());
                    for (name, value) in &outcome.test.metrics {
                        println!("test {name}: {value}");
                    }
                    println!("metrics digest: {}", outcome.manifest.metrics_digest);
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Replay {
            run_dir,
            allow_code_drift,
        } => match replay(&run_dir, allow_code_drift, None) {
            Ok(v) => {
                if v.code_drift {
                    eprintln!("warning: replaying under a different code fingerprint");
                }
                if v.identical {
                    println!("identical: {}", v.replayed_metrics_digest);
                    ExitCode::SUCCESS
                } else {
                    println!(
                        "different: recorded {} replayed {}",
                        v.recorded_metrics_digest, v.replayed_metrics_digest
                    );
                    ExitCode::from(1)
                }
            }
            Err(e) => fail(e),
        },
        Command::Audit { run_dir } => match audit(&run_dir) {
            Ok(violations) if violations.is_empty() => {
                println!("audit passed");
                ExitCode::SUCCESS
            }
            Ok(violations) => {
                for v in &violations {
                    println!("{:?}: {}", v.kind, v.message);
                }
                ExitCode::from(3)
            }
            Err(e) => fail(e),
        },
    }
}
