use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;
mod manifest;

use error::{CliError, CliResult, EXIT_USAGE};
use manifest::OutDir;

#[derive(Parser)]
#[command(name = "hemoflow", version, about = "Graph-transformer blood-flow surrogate: synthesis, training, rollout and haemodynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config with a `version` field.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Kernel threads; results are bitwise reproducible only with 1.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic tube-with-bulge case.
    Synth(Common),
    /// Train a model on the synthetic desk corpus.
    Train(Common),
    /// Roll a trained model over a cycle.
    Rollout(Common),
    /// Compare a predicted trajectory with the ground truth.
    Metrics(Common),
    /// Wall shear, TAWSS, OSI and bulge risk metrics of a trajectory.
    Hemo(Common),
    /// Rule-based rupture-risk score from metrics.
    Risk(Common),
    /// Fit or sweep the compute-optimal scaling law.
    Scaling(Common),
}

fn run(command: Command) -> CliResult<()> {
    let (name, common, f): (&str, Common, fn(&commands::Invocation) -> CliResult<()>) = match command {
        Command::Synth(c) => ("synth", c, commands::synth),
        Command::Train(c) => ("train", c, commands::train),
        Command::Rollout(c) => ("rollout", c, commands::rollout_cmd),
        Command::Metrics(c) => ("metrics", c, commands::metrics),
        Command::Hemo(c) => ("hemo", c, commands::hemo),
        Command::Risk(c) => ("risk", c, commands::risk),
        Command::Scaling(c) => ("scaling", c, commands::scaling),
    };
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(e.to_string()))?;
    }
    let start = Instant::now();
    let config_bytes = std::fs::read(&common.config)
        .map_err(|e| CliError::Config(format!("{}: {e}", common.config.display())))?;
    let config_dir = common.config.parent().map(PathBuf::from).unwrap_or_default();
    let out = OutDir::create(&common.out)?;
    let inv = commands::Invocation { config_bytes: &config_bytes, config_dir: &config_dir, seed: common.seed, out: &out };
    f(&inv)?;
    #[derive(serde::Serialize)]
    struct Timing<'a> {
        command: &'a str,
        wall_clock_seconds: f64,
    }
    out.write_json("timing.json", &Timing { command: name, wall_clock_seconds: start.elapsed().as_secs_f64() })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
