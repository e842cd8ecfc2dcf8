use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rgpd::cli;

/// Physics-informed graph network for RUL/SOH prognostics with RL-tuned
/// physics-loss weights and a SAC feature modulator.
#[derive(Parser)]
#[command(name = "rgpd", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write checkpoint + CSV artifacts.
    Train {
        /// TOML config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (locked for the duration of the run).
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Comma list of ablations: rl, mixup, tau.
        #[arg(long)]
        ablate: Option<String>,
    },
    /// Evaluate a checkpoint on the configured dataset's test units.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Optional directory for the CSV report.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Finite-difference check of every registered autodiff op.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of random seeds per op.
        #[arg(long, default_value_t = 100)]
        seeds: usize,
    },
    /// Write a synthetic dataset in the 26-column CMAPSS text convention.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output file path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Train {
            config,
            out,
            seed,
            ablate,
        } => cli::cmd_train(config.as_deref(), out, *seed, ablate.as_deref()),
        Cmd::Eval {
            config,
            checkpoint,
            out,
            seed,
        } => cli::cmd_eval(config.as_deref(), checkpoint, out.as_deref(), *seed),
        Cmd::Gradcheck { seed, seeds } => cli::cmd_gradcheck(*seed, *seeds),
        Cmd::Synth { config, out, seed } => cli::cmd_synth(config.as_deref(), out, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code_for(&e) as u8)
        }
    }
}
