use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use safetune::harness::{self, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "safetune", version, about = "Safe BO tuning of a neural MPC stage cost on a double pendulum")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop episode.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSON array of parameters, or `zero`.
        #[arg(long, default_value = "zero")]
        theta: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Safe seed set followed by the BO loop.
    Tune {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-simulate a logged episode and check it against the log.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        episode: usize,
    },
    /// Generate and store the safe seed set only.
    SeedSet {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: Option<&Path>) -> Result<ExperimentConfig, HarnessError> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn out_dir(cli: Option<PathBuf>, cfg: &ExperimentConfig) -> Result<PathBuf, HarnessError> {
    cli.or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| HarnessError::Config("no output directory (--out or output_dir)".into()))
}

fn read_theta(arg: &str, cfg: &ExperimentConfig) -> Result<Vec<f64>, HarnessError> {
    if arg == "zero" {
        return Ok(vec![0.0; cfg.param_count()]);
    }
    let text = std::fs::read_to_string(arg).map_err(|e| HarnessError::Config(format!("{arg}: {e}")))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{arg}: {e}")))
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Simulate { config, theta, out } => {
            let cfg = load(config.as_deref())?;
            let theta = read_theta(&theta, &cfg)?;
            let (_, ep) = harness::simulate(&cfg, &theta, &out)?;
            println!("G0 = {}  G1 = {}  truncation = {:?}", ep.g0, ep.g1, ep.truncation);
        }
        Command::Tune { config, out, seed } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dir = out_dir(out, &cfg)?;
            let log = harness::tune_with_progress(&cfg, &dir, |rec| {
                eprintln!(
                    "n={} G0={:.6e} G1={:.4} incumbent={:.6e}{}",
                    rec.n,
                    rec.step.observation.objective,
                    rec.step.observation.constraints[0],
                    rec.step.incumbent.objective,
                    if rec.step.proposal.fallback { " fallback" } else { "" }
                );
            })?;
            if let Some(s) = &log.summary {
                println!(
                    "baseline G0 = {}  incumbent G0 = {} (episode {})  proposal violations = {}/{}",
                    s.baseline_g0, s.incumbent.objective, s.incumbent_episode, s.proposal_violations, s.completed_iterations
                );
            }
        }
        Command::Replay { log, episode } => {
            let ep = harness::replay(&log, episode)?;
            println!("episode {episode} verified: G0 = {}  G1 = {}", ep.g0, ep.g1);
        }
        Command::SeedSet { config, out } => {
            let mut cfg = load(config.as_deref())?;
            cfg.n_iter = 0;
            let dir = out_dir(out, &cfg)?;
            let log = harness::tune(&cfg, &dir)?;
            if let Some(s) = &log.seed_set {
                println!("{} safe seeds from {} draws (rate {:.3})", s.accepted, s.draws, s.acceptance_rate);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
