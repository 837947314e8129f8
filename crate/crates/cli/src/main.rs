//! Command-line front end for the equation-discovery pipeline.
//!
//! Exit codes: 0 success, 1 partial failure (some equations or benchmark
//! cells failed), 2 invalid input.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use eqdisc_core::experiment::{
    cmd_benchmark, cmd_corrupt, cmd_differentiate, cmd_discover, cmd_evaluate, cmd_generate,
    write_error_manifest, ExperimentConfig,
};

#[derive(Parser)]
#[command(name = "eqdisc", version, about = "Discover governing equations from trajectory data")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (strict JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Override the config's seed list with a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread count (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Emit solver node logs and progress detail.
    #[arg(long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate clean (and optionally corrupted) trajectory data.
    Generate,
    /// Inject noise into an existing trajectory CSV.
    Corrupt {
        #[arg(long)]
        data: PathBuf,
    },
    /// Recompute derivative columns from states.
    Differentiate {
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the discovery pipeline; writes model.json and diagnostics.
    Discover {
        /// Trajectory CSV; omitted = generate per the config.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Compare a model JSON against the configured system's ground truth.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
    },
    /// Sweep noise levels, comparing exact subset selection against the
    /// thresholded least-squares baseline.
    Benchmark,
}

fn run(cli: &Cli) -> Result<u8, eqdisc_core::Error> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| eqdisc_core::Error::config("--config is required"))?;
    let mut cfg = ExperimentConfig::load(config_path)?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(threads) = cli.threads {
        eqdisc_core::exec::set_threads(threads);
    }
    let out = &cli.out;
    match &cli.command {
        Command::Generate => {
            let files = cmd_generate(&cfg, out)?;
            for f in files {
                println!("wrote {}", f.display());
            }
            Ok(0)
        }
        Command::Corrupt { data } => {
            for f in cmd_corrupt(&cfg, data, out)? {
                println!("wrote {}", f.display());
            }
            Ok(0)
        }
        Command::Differentiate { data } => {
            for f in cmd_differentiate(&cfg, data, out)? {
                println!("wrote {}", f.display());
            }
            Ok(0)
        }
        Command::Discover { data } => {
            let result = cmd_discover(&cfg, data.as_deref(), out, cli.verbose)?;
            println!("wrote {}", result.model_path.display());
            if cli.verbose {
                for eq in &result.model.equations {
                    println!(
                        "  {}: k={} terms={:?}",
                        eq.target,
                        eq.k,
                        eq.support
                            .iter()
                            .map(|&t| result.model.dictionary.label(t))
                            .collect::<Vec<_>>()
                    );
                }
            }
            if result.failed_equations.is_empty() {
                Ok(0)
            } else {
                eprintln!("failed equations: {}", result.failed_equations.join(", "));
                write_error_manifest(out, &result.failed_equations)?;
                Ok(1)
            }
        }
        Command::Evaluate { model } => {
            let path = cmd_evaluate(&cfg, model, out)?;
            println!("wrote {}", path.display());
            Ok(0)
        }
        Command::Benchmark => {
            let result = cmd_benchmark(&cfg, out)?;
            for t in &result.tables {
                println!("wrote {}", t.display());
            }
            if result.failures.is_empty() {
                Ok(0)
            } else {
                eprintln!("{} benchmark cells failed", result.failures.len());
                Ok(1)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            // best effort: leave a machine-readable manifest
            if std::fs::create_dir_all(&cli.out).is_ok() {
                let _ = write_error_manifest(&cli.out, &[e.to_string()]);
            }
            ExitCode::from(2)
        }
    }
}
