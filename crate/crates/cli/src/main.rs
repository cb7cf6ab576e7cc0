//! Command-line runner for the verification suites.
//!
//! Every subcommand reads one TOML experiment file, validates it for the
//! selected suite, executes, writes the manifest and CSV reports to the
//! output directory, and exits 0 exactly when every check passed.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use heatlab_core::harness::{self, Suite};

#[derive(Parser)]
#[command(
    name = "heatlab",
    about = "Stochastic heat equation laboratory: simulation, moment bounds, transportation inequality",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the trial count from the config.
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory (default: config's out_dir, else "runs/<suite>").
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate every explicit constant and write the constants report.
    Constants(CommonArgs),
    /// Simulate solution trajectories and export them.
    Simulate(CommonArgs),
    /// Verify a moment bound for the stochastic convolution.
    VerifyMoments(CommonArgs),
    /// Verify the T2 transportation inequality end to end.
    VerifyT2(CommonArgs),
    /// Run drift-coupled pairs and check the Gronwall bound.
    Couple(CommonArgs),
}

impl Command {
    fn split(&self) -> (Suite, &CommonArgs) {
        match self {
            Command::Constants(a) => (Suite::Constants, a),
            Command::Simulate(a) => (Suite::Simulate, a),
            Command::VerifyMoments(a) => (Suite::VerifyMoments, a),
            Command::VerifyT2(a) => (Suite::VerifyT2, a),
            Command::Couple(a) => (Suite::Couple, a),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(pass) => {
            if pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    let (suite, args) = cli.command.split();
    let (mut config, bytes) =
        harness::load_config(&args.config).context("loading experiment config")?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(trials) = args.trials {
        config.trials = trials;
    }
    let out_dir = args
        .out
        .clone()
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(suite.name()));

    let manifest = harness::run(&config, &bytes, suite, &out_dir)
        .with_context(|| format!("running suite {}", suite.name()))?;

    println!("suite          : {}", manifest.suite);
    println!("config hash    : {}", manifest.config_hash);
    println!("seed / trials  : {} / {}", manifest.seed, manifest.trials);
    for (name, pass) in &manifest.passes {
        println!("check {name:<28} : {}", if *pass { "pass" } else { "FAIL" });
    }
    for (key, value) in &manifest.numbers {
        println!("  {key} = {value}");
    }
    println!("wall clock     : {:.3} s", manifest.wall_clock_secs);
    println!("output         : {}", out_dir.display());
    println!("overall        : {}", if manifest.overall_pass() { "pass" } else { "FAIL" });
    Ok(manifest.overall_pass())
}
