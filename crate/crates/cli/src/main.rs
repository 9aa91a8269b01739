use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use esrnn_cli::{cmd_benchmark, cmd_evaluate, cmd_forecast, cmd_prepare, cmd_train, RunConfig};

/// Hybrid exponential-smoothing / dilated-LSTM forecaster.
#[derive(Debug, Parser)]
#[command(name = "esrnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run config, or a manifest.json from a previous `train`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `train.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Checkpoint to read (default `<out_dir>/checkpoint.json`).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,

    /// Comma-separated series ids for `forecast`.
    #[arg(long, global = true, value_delimiter = ',')]
    ids: Option<Vec<String>>,

    /// Overrides `paths.out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter, equalize and split the input CSV into a dataset.
    Prepare,
    /// Train and write checkpoint, log and manifest.
    Train,
    /// Score the test segment against the seasonal-naive baseline.
    Evaluate,
    /// Write real-scale forecasts past the end of each series.
    Forecast,
    /// Time a batched epoch against a one-window-at-a-time epoch.
    Benchmark,
}

fn init_logging() {
    let level = match std::env::var("ESRNN_LOG").as_deref() {
        Ok("quiet") => log::LevelFilter::Off,
        Ok("debug") => log::LevelFilter::Debug,
        _ => log::LevelFilter::Info,
    };
    env_logger::Builder::new().filter_level(level).format_target(false).init();
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let Some(path) = &cli.config else {
        anyhow::bail!("--config is required");
    };
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.paths.out_dir = out;
    }
    let checkpoint = cli.checkpoint.as_deref();
    match cli.command {
        Command::Prepare => {
            let s = cmd_prepare(&cfg)?;
            println!("kept {} series, dropped {}", s.kept, s.dropped());
        }
        Command::Train => {
            let s = cmd_train(&cfg)?;
            let m = &s.manifest.metrics;
            match m.best_val_smape {
                Some(v) => println!("best validation sMAPE {v:.4} at epoch {}", m.best_epoch.unwrap_or(0)),
                None => println!("no epochs run"),
            }
            println!("checkpoint {}", s.checkpoint.display());
        }
        Command::Evaluate => {
            let r = cmd_evaluate(&cfg, checkpoint)?;
            print!("{}", r.to_text());
        }
        Command::Forecast => {
            let p = cmd_forecast(&cfg, checkpoint, cli.ids.as_deref())?;
            println!("wrote {}", p.display());
        }
        Command::Benchmark => {
            let r = cmd_benchmark(&cfg)?;
            println!(
                "batched {:.3}s looped {:.3}s speedup {:.2}x",
                r.batched_s, r.looped_s, r.speedup
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
