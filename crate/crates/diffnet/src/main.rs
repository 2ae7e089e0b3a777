//! `diffnet` — decentralized diffusion SGD simulator.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use diffnet::harness::config::{ExperimentConfig, PolicyName, PolicySpec};
use diffnet::harness::{cmd_check, cmd_policy, cmd_run, cmd_sweep, HarnessError};
use diffnet::topology::TopologyKind;

#[derive(Parser)]
#[command(
    name = "diffnet",
    version,
    about = "Decentralized diffusion SGD simulator: combination policies, \
             saddle-escape sweeps, and a built-in verification suite"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the configured combination policy; write its matrix and spectral summary
    Policy(CommonArgs),
    /// Run one diffusion experiment and write metric CSVs
    Run(CommonArgs),
    /// Sweep network sizes, measure escape times, fit the scaling slope
    Sweep(CommonArgs),
    /// Run the built-in cross-module verification suite
    Check(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON experiment config; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the seed base
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the agent-count list with a single size
    #[arg(long)]
    agents: Option<usize>,
    /// Override the base step size
    #[arg(long)]
    mu: Option<f64>,
    /// Turn on step-size normalization
    #[arg(long)]
    normalize: bool,
    /// Policy: `uniform`, `mh`, or a path to a CSV matrix
    #[arg(long)]
    policy: Option<String>,
    /// Topology: `complete`, `ring`, `grid:2x3`, or `random:0.4:7`
    #[arg(long)]
    topology: Option<String>,
}

fn parse_topology(text: &str) -> Result<TopologyKind, HarnessError> {
    let bad = |msg: String| HarnessError::Config(msg);
    match text {
        "complete" => Ok(TopologyKind::Complete),
        "ring" => Ok(TopologyKind::Ring),
        other if other.starts_with("grid:") => {
            let sides: Result<Vec<usize>, _> = other["grid:".len()..]
                .split('x')
                .map(|s| s.parse::<usize>())
                .collect();
            match sides {
                Ok(sides) if !sides.is_empty() => Ok(TopologyKind::Grid { sides }),
                _ => Err(bad(format!("bad grid spec '{other}', expected grid:AxB"))),
            }
        }
        other if other.starts_with("random:") => {
            let parts: Vec<&str> = other["random:".len()..].split(':').collect();
            if parts.len() != 2 {
                return Err(bad(format!(
                    "bad random spec '{other}', expected random:PROB:SEED"
                )));
            }
            let prob = parts[0]
                .parse::<f64>()
                .map_err(|e| bad(format!("bad edge probability: {e}")))?;
            let seed = parts[1]
                .parse::<u64>()
                .map_err(|e| bad(format!("bad graph seed: {e}")))?;
            Ok(TopologyKind::Random { prob, seed })
        }
        other => Err(bad(format!(
            "unknown topology '{other}' (complete | ring | grid:AxB | random:PROB:SEED)"
        ))),
    }
}

fn parse_policy(text: &str) -> PolicySpec {
    match text {
        "uniform" => PolicySpec::Named(PolicyName::Uniform),
        "mh" => PolicySpec::Named(PolicyName::Mh),
        path => PolicySpec::File {
            file: PathBuf::from(path),
        },
    }
}

fn load_config(args: &CommonArgs) -> Result<ExperimentConfig, HarnessError> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seeds.base = seed;
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    if let Some(agents) = args.agents {
        config.agents = vec![agents];
    }
    if let Some(mu) = args.mu {
        config.mu = mu;
    }
    if args.normalize {
        config.normalize = true;
    }
    if let Some(policy) = &args.policy {
        config.policy = parse_policy(policy);
    }
    if let Some(topology) = &args.topology {
        config.topology = parse_topology(topology)?;
    }
    config.validate()?;
    Ok(config)
}

fn dispatch(command: &Command) -> Result<(), HarnessError> {
    match command {
        Command::Policy(args) => {
            cmd_policy(&load_config(args)?)?;
            Ok(())
        }
        Command::Run(args) => {
            cmd_run(&load_config(args)?)?;
            Ok(())
        }
        Command::Sweep(args) => {
            cmd_sweep(&load_config(args)?)?;
            Ok(())
        }
        Command::Check(args) => {
            let items = cmd_check(&load_config(args)?)?;
            let failed = items.iter().filter(|i| !i.passed).count();
            if failed > 0 {
                return Err(HarnessError::CheckFailed(failed));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
