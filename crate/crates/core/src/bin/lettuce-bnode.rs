use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lettuce_bnode::cli::{cmd_evaluate, cmd_forecast, cmd_simulate, cmd_train, CHECKPOINT_FILE};
use lettuce_bnode::config::RunConfig;

const THREADS_ENV: &str = "LETTUCE_BNODE_THREADS";

#[derive(Parser)]
#[command(
    name = "lettuce-bnode",
    version,
    about = "Greenhouse simulation, Bayesian neural ODE identification and forecasting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults are used for missing fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed (overrides `seed` and `train.seed`)
    #[arg(long)]
    seed: Option<u64>,
    /// Run single-threaded
    #[arg(long)]
    serial: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate training scenarios as trajectory CSVs
    Simulate(Common),
    /// Build the training matrices and fit the Bayesian network
    Train(Common),
    /// Forecast the held-out scenario from a checkpoint
    Forecast {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to load (default: <out>/checkpoint.json)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train, forecast and write an aggregated report
    Evaluate(Common),
}

fn setup(common: &Common) -> Result<(RunConfig, PathBuf), Box<dyn std::error::Error>> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;

    let threads = if common.serial {
        Some(1)
    } else {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n > 0)
    };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let out = cfg.output_dir.clone();
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Simulate(common) => {
            let (cfg, out) = setup(&common)?;
            let scenarios = cmd_simulate(&cfg, &out)?;
            println!(
                "wrote {} scenarios to {}",
                scenarios.len(),
                out.join("scenarios").display()
            );
        }
        Command::Train(common) => {
            let (cfg, out) = setup(&common)?;
            let t = cmd_train(&cfg, &out)?;
            if let (Some(first), Some(last)) = (t.history.epochs.first(), t.history.epochs.last()) {
                println!(
                    "trained {} epochs: data loss {:.4} -> {:.4}, {} / {} parameters active",
                    t.history.len(),
                    first.data_loss,
                    last.data_loss,
                    t.net.active_params(),
                    t.net.n_params()
                );
            }
            println!("checkpoint: {}", t.checkpoint.display());
        }
        Command::Forecast { common, checkpoint } => {
            let (cfg, out) = setup(&common)?;
            let checkpoint = checkpoint.unwrap_or_else(|| out.join(CHECKPOINT_FILE));
            let f = cmd_forecast(&cfg, &checkpoint, &out)?;
            println!("normalized rmse per state: {:?}", f.report.rmse_normalized);
            for (level, cov) in &f.report.coverage {
                println!("coverage @ {level}: {cov:?}");
            }
        }
        Command::Evaluate(common) => {
            let (cfg, out) = setup(&common)?;
            let e = cmd_evaluate(&cfg, &out)?;
            println!("normalized rmse per state: {:?}", e.forecast.report.rmse_normalized);
            for (level, cov) in &e.forecast.report.coverage {
                println!("coverage @ {level}: {cov:?}");
            }
            println!("report: {}", out.join(lettuce_bnode::cli::REPORT_FILE).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // library errors already include their source in the message
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
