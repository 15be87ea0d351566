use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use peg_cli::verify::Mutation;
use peg_cli::{run, Command, RunOptions, EXIT_OK, EXIT_VERIFY_FAILED, SEED_ENV};

#[derive(Parser)]
#[command(name = "peg", version, about = "Peer elicitation game simulation lab")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the learning loop and write payment, policy, vote, regret and convergence series.
    Simulate(Args),
    /// Run the exact oracle checks.
    Verify(Args),
    /// Repeat the experiment over a range of batch sizes.
    Sweep(Args),
    /// Regret of one agent against its surrogate bound.
    Regret(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Overrides PEG_SEED and the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, hide = true, value_enum)]
    mutate: Option<MutateArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MutateArg {
    PaymentSignFlip,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Verify(a) => (Command::Verify, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
        Cmd::Regret(a) => (Command::Regret, a),
    };
    let opts = RunOptions {
        seed: args.seed,
        env_seed: std::env::var(SEED_ENV).ok(),
        jobs: args.jobs.map(|j| j as usize),
        out: args.out,
        mutation: args.mutate.map(|MutateArg::PaymentSignFlip| Mutation::PaymentSignFlip),
    };
    match run(command, &args.config, &opts) {
        Ok(outcome) => {
            if let Some(checks) = outcome.summary["checks"].as_array() {
                for c in checks {
                    let status = c["status"].as_str().unwrap_or("?");
                    let extra = c["reason"].as_str().map(|r| format!(" {r}")).unwrap_or_default();
                    println!("{status:<7} {} measured={}{extra}", c["name"].as_str().unwrap_or("?"), c["measured"]);
                }
            }
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            ExitCode::from(if outcome.success { EXIT_OK } else { EXIT_VERIFY_FAILED })
        }
        Err(e) => {
            eprintln!("peg {}: {e}", command.name());
            ExitCode::from(e.exit_code())
        }
    }
}
